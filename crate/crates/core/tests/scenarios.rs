use std::fs;

use spacedream::datasync::{Channel, ChannelConfig, Receiver, Sender, SyncConfig, TransferConfig};
use spacedream::sim::{run_scenario, FileStatus, Scenario, BUILTIN, TICK};

#[test]
fn every_builtin_meets_its_expectations() {
    for (name, _) in BUILTIN {
        let dir = tempfile::tempdir().unwrap();
        let r = run_scenario(&Scenario::builtin(name).unwrap(), dir.path()).unwrap();
        let failed: Vec<_> = r.assertions.iter().filter(|(_, ok)| !ok).map(|(e, _)| e.as_str()).collect();
        assert!(failed.is_empty(), "{name}: {failed:?}\n{}", r.to_kv());
    }
}

#[test]
fn same_seed_same_report() {
    let sc = Scenario::builtin("lossy_5pct").unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_scenario(&sc, a.path()).unwrap();
    let rb = run_scenario(&sc, b.path()).unwrap();
    assert_eq!(ra.to_kv(), rb.to_kv());
    let mut other = sc.clone();
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    assert_ne!(run_scenario(&other, c.path()).unwrap().to_kv(), ra.to_kv());
}

#[test]
fn dead_card_falls_back_and_reports_steps() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&Scenario::builtin("emmc_a_dead").unwrap(), dir.path()).unwrap();
    let boot = &r.boots[0];
    assert_eq!(boot.card.as_deref(), Some("b"));
    assert!(boot.steps.starts_with("networks,watchdog,pick:"));
    assert!(boot.steps.ends_with("mounted:b"));
    assert!(dir.path().join("board").join("emmc_b").join("tx").join("1").is_dir());
}

#[test]
fn every_card_dead_keeps_rebooting() {
    let sc = Scenario::from_toml(
        r#"
name = "all_dead"
duration_s = 20
start_command_s = 0.5
[[fault]]
at_s = 0
kind = "emmc_controller_hang"
card = "a"
[[fault]]
at_s = 0
kind = "emmc_mount_fail"
card = "b"
"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&sc, dir.path()).unwrap();
    assert!(r.boots.len() >= 2);
    assert!(r.boots.iter().all(|b| b.card.is_none() && b.steps.ends_with("reboot")));
    assert_eq!(r.cycles_completed, 0);
    assert_eq!(r.motion_commands, 0);
}

#[test]
fn received_files_match_the_board() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&Scenario::builtin("nominal").unwrap(), dir.path()).unwrap();
    let rx = dir.path().join("ground").join("rx");
    let mut checked = 0;
    for f in r.files.iter().filter(|f| f.status == FileStatus::Complete) {
        let got = fs::read(rx.join(f.generation.to_string()).join(&f.name)).unwrap();
        assert_eq!(got.len() as u64, f.size, "{}", f.name);
        checked += 1;
    }
    assert!(checked > 10);
    assert!(r.files.iter().any(|f| f.name.starts_with("logs/")));
    assert!(r.files.iter().any(|f| f.name.starts_with("media/")));
}

#[test]
fn folder_sync_over_a_lossy_channel() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("tx");
    fs::create_dir_all(root.join("3").join("media")).unwrap();
    let content: Vec<u8> = (0..200_000u32).map(|i| (i % 253) as u8).collect();
    fs::write(root.join("3").join("media").join("x.bin"), &content).unwrap();
    let cfg = SyncConfig {
        rate_bps: 1e7,
        rescan_period_ms: 100,
        default: TransferConfig {
            resend_count: 4,
            ..TransferConfig::default()
        },
        ..SyncConfig::default()
    };
    let mut tx = Sender::watching(cfg, &root, 3).unwrap();
    let mut ch = Channel::new(ChannelConfig {
        loss: 0.02,
        reorder_window: 4,
        seed: 9,
        ..ChannelConfig::default()
    });
    let mut rx = Receiver::new();
    let mut now = TICK;
    for _ in 0..2000 {
        for p in tx.poll(now).unwrap() {
            ch.send(now, p);
        }
        for p in ch.deliver(now) {
            rx.ingest_packet(&p);
        }
        now += TICK;
    }
    for p in ch.flush(now) {
        rx.ingest_packet(&p);
    }
    let out = dir.path().join("rx");
    rx.write_outputs(&out).unwrap();
    let m = &rx.manifests()[0];
    assert_eq!(m.name.as_deref(), Some("media/x.bin"));
    assert!(m.complete, "{} holes", m.holes);
    assert_eq!(fs::read(out.join("3").join("media").join("x.bin")).unwrap(), content);
}
