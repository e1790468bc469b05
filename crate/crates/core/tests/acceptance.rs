//! Acceptance criteria. Each test prints one `criterion N ...: PASS|FAIL`
//! line to stderr (bypassing the capture) and fails on FAIL.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spacedream::controller::{plan_trapezoidal, ControlMode, ControllerParams, GainConfig, HighLevel, IpolPhase, ModeRequest};
use spacedream::controller::{ControllerNode, GoalRef, InterpolatorGoal};
use spacedream::datasync::receiver::holes_path;
use spacedream::datasync::wire::decode;
use spacedream::datasync::{Channel, ChannelConfig, FragmentKind, Receiver, Sender, SyncConfig, TransferConfig};
use spacedream::halsim::{HalNode, JointMode, JointTelemetry, PlantState, StatusFlags, CMD_TOPIC, NUM_JOINTS};
use spacedream::mission::{run_startup, EmmcFault, EmmcId, StartupOutcome, Storage, Watchdog};
use spacedream::sim::{run_scenario, FileStatus, Profile, RunReport, Scenario, World, TICK};
use spacedream::{Controller64, HalSim64};

type Outcome = Result<String, String>;

fn verdict(n: u32, name: &str, r: Outcome) {
    let line = match &r {
        Ok(d) => format!("criterion {n:>2} {name}: PASS {d}\n"),
        Err(d) => format!("criterion {n:>2} {name}: FAIL {d}\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(e) = r {
        panic!("criterion {n} {name}: {e}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fast_sync(resend_count: u32, interval: Duration) -> SyncConfig {
    SyncConfig {
        rate_bps: 1e10,
        default: TransferConfig {
            priority: 0,
            resend_count,
            min_resend_interval: interval,
        },
        ..SyncConfig::default()
    }
}

/// Poll the sender every tick into the channel and the receiver until the
/// queue and the link are empty.
fn pump(tx: &mut Sender, ch: &mut Channel, rx: &mut Receiver) {
    let mut now = Duration::ZERO;
    loop {
        for p in tx.packets(now) {
            ch.send(now, p);
        }
        for p in ch.deliver(now) {
            rx.ingest_packet(&p);
        }
        if tx.queue_pending() == 0 && ch.in_transit() == 0 {
            break;
        }
        now += TICK;
    }
    for p in ch.flush(now) {
        rx.ingest_packet(&p);
    }
}

fn run(sc: &Scenario) -> (RunReport, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(sc, dir.path()).unwrap();
    (r, dir)
}

fn files_under(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(rd) = std::fs::read_dir(&d) else { continue };
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == ext) {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn lossless_reconstruction() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut tx = Sender::new(fast_sync(1, Duration::from_millis(10)));
    let mut files = Vec::new();
    for i in 0..100usize {
        let size = match i {
            0 => 0,
            1 => 1 << 20,
            _ => rng.random_range(0..=1usize << 20),
        };
        let mut content = vec![0u8; size];
        rng.fill(&mut content[..]);
        let name = format!("logs/f{i:03}.bin");
        let id = tx.enqueue(&name, &content, 1).map_err(|e| e.to_string())?;
        files.push((id, crc32fast::hash(&content), content));
    }
    let mut ch = Channel::new(ChannelConfig::default());
    let mut rx = Receiver::new();
    pump(&mut tx, &mut ch, &mut rx);
    let mut bytes = 0usize;
    for (i, (id, crc, content)) in files.iter().enumerate() {
        let r = rx.reassemble(1, *id).map_err(|e| format!("file {i}: {e}"))?;
        ensure(r.holes.is_empty() && r.crc_ok, || format!("file {i}: {} holes", r.holes.len()))?;
        ensure(crc32fast::hash(&r.bytes) == *crc && r.bytes == *content, || format!("file {i} differs"))?;
        bytes += content.len();
    }
    let el = t0.elapsed();
    ensure(el < Duration::from_secs(60), || format!("took {el:?}"))?;
    Ok(format!("100 files, {bytes} bytes bit-exact in {:.2} s", el.as_secs_f64()))
}

#[test]
fn criterion_01_lossless_reconstruction() {
    verdict(1, "lossless reconstruction", lossless_reconstruction());
}

fn residual_loss() -> Outcome {
    const N: usize = 10_000;
    let (p, k) = (0.1f64, 3i32);
    let mut tx = Sender::new(fast_sync(k as u32, Duration::from_millis(10)));
    let mut content = vec![0u8; N * 1024];
    ChaCha8Rng::seed_from_u64(202).fill(&mut content[..]);
    let id = tx.enqueue("logs/big.bin", &content, 1).map_err(|e| e.to_string())?;
    let mut ch = Channel::new(ChannelConfig {
        loss: p,
        seed: 2024,
        ..ChannelConfig::default()
    });
    let mut rx = Receiver::new();
    pump(&mut tx, &mut ch, &mut rx);
    let m = rx.manifest(1, id).ok_or("no manifest")?;
    ensure(m.total_frags as usize == N, || format!("{} fragments", m.total_frags))?;
    let missing = m.received.iter().filter(|r| !**r).count() as f64;
    // independent copies: all k lost
    let q = p.powi(k);
    let mean = N as f64 * q;
    let sigma = (N as f64 * q * (1.0 - q)).sqrt();
    ensure((missing - mean).abs() <= 3.0 * sigma, || {
        format!("missing {missing} outside {mean:.1} ± {:.2}", 3.0 * sigma)
    })?;
    Ok(format!("missing {}/{N} = {:.1e}, expected {q:.1e} ± {:.1e}", missing, missing / N as f64, 3.0 * sigma / N as f64))
}

#[test]
fn criterion_02_residual_loss() {
    verdict(2, "residual loss p^k", residual_loss());
}

fn priority_order() -> Outcome {
    let cfg = SyncConfig {
        rate_bps: 1e6,
        ..SyncConfig::default()
    };
    let mut tx = Sender::new(cfg);
    tx.record_trace();
    let tc = |priority| TransferConfig {
        priority,
        resend_count: 2,
        min_resend_interval: Duration::from_millis(200),
    };
    let mut data = vec![0u8; 64 * 1024];
    ChaCha8Rng::seed_from_u64(303).fill(&mut data[..]);
    // low priority first so recency would favour it
    let lo = tx.enqueue_with("logs/lo.bin", &data[..40_000], 1, tc(1)).map_err(|e| e.to_string())?;
    let hi = tx.enqueue_with("logs/hi.bin", &data, 1, tc(10)).map_err(|e| e.to_string())?;
    let mut now = Duration::ZERO;
    while tx.queue_pending() > 0 {
        tx.packets(now);
        now += TICK;
    }
    let trace = tx.trace();
    let last_hi0 = trace
        .iter()
        .rposition(|e| e.sched.file_id == hi && e.sched.send_number == 1)
        .ok_or("no high priority sends")?;
    let first_lo = trace.iter().position(|e| e.sched.file_id == lo).ok_or("no low priority sends")?;
    let n_hi0 = trace.iter().filter(|e| e.sched.file_id == hi && e.sched.send_number == 1).count();
    ensure(last_hi0 < first_lo, || format!("low priority send #{first_lo} before high priority first send #{last_hi0}"))?;
    Ok(format!("{n_hi0} round-0 high fragments all before first low fragment (send #{first_lo} of {})", trace.len()))
}

#[test]
fn criterion_03_priority_order() {
    verdict(3, "priority order", priority_order());
}

fn rate_cap() -> Outcome {
    let cfg = SyncConfig {
        rate_bps: 1e6,
        ..SyncConfig::default()
    };
    let mut tx = Sender::new(cfg);
    let mut data = vec![0u8; 4 << 20];
    ChaCha8Rng::seed_from_u64(404).fill(&mut data[..]);
    tx.enqueue("logs/bulk.bin", &data, 1).map_err(|e| e.to_string())?;
    let mut bits = 0.0;
    let mut now = Duration::ZERO;
    while now <= Duration::from_secs(10) {
        bits += tx.packets(now).iter().map(|p| p.len() as f64 * 8.0).sum::<f64>();
        now += TICK;
    }
    ensure(tx.queue_pending() > 0, || "queue drained, run not saturated".into())?;
    let expected = 1e6 * 10.0;
    ensure((bits - expected).abs() <= 0.1 * expected, || format!("sent {bits} bits"))?;
    Ok(format!("{:.3} Mbit in 10 s at 1 Mbit/s", bits / 1e6))
}

#[test]
fn criterion_04_rate_cap() {
    verdict(4, "rate cap", rate_cap());
}

fn recorder_rates() -> Outcome {
    let mut sc = Scenario::builtin("nominal").unwrap();
    sc.cycles = 1;
    sc.recording = Profile::Full;
    let (full, _d1) = run(&sc);
    sc.recording = Profile::Flight;
    let (flight, _d2) = run(&sc);
    let (f, l) = (full.recorder_bit_rate(), flight.recorder_bit_rate());
    ensure((f - 1.3e6).abs() <= 0.15 * 1.3e6, || format!("full profile {f:.0} bit/s"))?;
    ensure(l > 0.0 && l < 1e6, || format!("flight profile {l:.0} bit/s"))?;
    Ok(format!("full {:.3} Mbit/s, flight {:.3} Mbit/s", f / 1e6, l / 1e6))
}

#[test]
fn criterion_05_recorder_rates() {
    verdict(5, "recorder rates", recorder_rates());
}

fn loop_node() -> (spacedream::bus::Bus, HalNode, ControllerNode) {
    let bus = spacedream::bus::Bus::new();
    let hal = std::sync::Arc::new(std::sync::Mutex::new(HalSim64::at([0.0; NUM_JOINTS])));
    hal.lock().unwrap().configure_link().unwrap();
    let h = HalNode::attach(&bus, hal).unwrap();
    let c = ControllerNode::attach(&bus).unwrap();
    (bus, h, c)
}

fn control_loop() -> Outcome {
    const N: u64 = 1000;
    let (bus, mut hal, mut ctrl) = loop_node();
    let sub = bus.subscribe_with_depth(CMD_TOPIC, N as usize + 8).unwrap();
    let mut params = ControllerParams::default();
    for k in 0..N {
        let now = TICK * k as u32;
        ctrl.step(now, &mut params);
        hal.step(now).map_err(|e| e.to_string())?;
    }
    let received = sub.drain().len() as u64;
    ensure(ctrl.commands_published() == N && received == N, || {
        format!("{} published, {received} received in {N} ticks", ctrl.commands_published())
    })?;
    let sc = Scenario::builtin("nominal").unwrap();
    let (r, _d) = run(&{
        let mut s = sc.clone();
        s.cycles = 1;
        s
    });
    ensure(r.controller_ticks > 0 && r.command_sets == r.controller_ticks, || {
        format!("world: {} command sets in {} ticks", r.command_sets, r.controller_ticks)
    })?;

    // wall-clock pacing, informational
    let (_bus, mut hal, mut ctrl) = loop_node();
    let start = Instant::now();
    let mut prev: Option<Instant> = None;
    let mut dev = Vec::new();
    for k in 0..200u32 {
        let target = start + TICK * k;
        let t = Instant::now();
        if target > t {
            std::thread::sleep(target - t);
        }
        let t = Instant::now();
        if let Some(p) = prev {
            let period = (t - p).as_secs_f64();
            dev.push((period - TICK.as_secs_f64()).abs());
        }
        prev = Some(t);
        ctrl.step(TICK * k, &mut params);
        hal.step(TICK * k).map_err(|e| e.to_string())?;
    }
    let mean = dev.iter().sum::<f64>() / dev.len() as f64;
    let note = if mean < 2e-3 { "under" } else { "over" };
    Ok(format!(
        "{N} command sets in {N} ticks, world {}/{}; wall-clock mean jitter {:.3} ms ({note} 2 ms, informational)",
        r.command_sets,
        r.controller_ticks,
        mean * 1e3
    ))
}

#[test]
fn criterion_06_control_loop() {
    verdict(6, "control loop", control_loop());
}

fn random_telemetry(rng: &mut ChaCha8Rng, counter: u64, error_rate: f64) -> [JointTelemetry<f64>; NUM_JOINTS] {
    std::array::from_fn(|i| {
        let mut flags = StatusFlags::REFERENCED | StatusFlags::MOTOR_ON;
        if rng.random_bool(error_rate) {
            flags |= StatusFlags::ERROR;
        }
        if rng.random_bool(0.02) {
            flags &= !StatusFlags::REFERENCED;
        }
        JointTelemetry {
            joint_id: i as u8,
            position: rng.random_range(-2.0..2.0),
            velocity: 0.0,
            torque: 0.0,
            status: StatusFlags(flags),
            cycle_counter: counter,
        }
    })
}

fn state_machines() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let requests: Vec<ModeRequest> = std::iter::once(ModeRequest::Idle)
        .chain(ControlMode::ALL.into_iter().map(ModeRequest::Mode))
        .collect();
    let (mut ready_entries, mut switches, mut changes) = (0u64, 0u64, 0u64);
    let mut goal_id = 0;
    for seq in 0..100_000u64 {
        let mut c = Controller64::default();
        let mut params = ControllerParams::default();
        let len = rng.random_range(5..40);
        let mut counter = 0;
        for k in 0..len {
            params.mode = requests[rng.random_range(0..requests.len())];
            if rng.random_bool(0.2) {
                goal_id += 1;
                params.goal = Some(GoalRef {
                    id: goal_id,
                    goal: InterpolatorGoal {
                        qf: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
                        vmax: rng.random_range(0.1..2.0),
                        amax: rng.random_range(0.1..5.0),
                    },
                });
            }
            let tm = if rng.random_bool(0.95) {
                counter += 1;
                Some(random_telemetry(&mut rng, counter, 0.01))
            } else {
                None
            };
            let before = c.high_level();
            let out = c.cycle(tm, &params, k as f64 * 0.01);
            let after = c.high_level();
            if matches!(after, HighLevel::Ready(_)) && !matches!(before, HighLevel::Ready(_)) {
                ready_entries += 1;
                ensure(before == HighLevel::Idle, || format!("seq {seq}: READY entered from {before:?}"))?;
            }
            if let (HighLevel::Ready(_), ModeRequest::Mode(m), false) = (before, params.mode, out.error) {
                switches += 1;
                ensure(after == HighLevel::Ready(m), || format!("seq {seq}: {before:?} + {m:?} gave {after:?}"))?;
            }
            if after != before {
                changes += 1;
                let ip = c.interpolator();
                ensure(
                    ip.trajectory.is_none() && matches!(ip.phase, IpolPhase::Unplanned | IpolPhase::Planning),
                    || format!("seq {seq}: interpolator kept {:?} across {before:?} -> {after:?}", ip.phase),
                )?;
            }
        }
    }
    Ok(format!("1e5 sequences: {ready_entries} READY entries, {switches} in-READY requests, {changes} controller changes"))
}

#[test]
fn criterion_07_state_machines() {
    verdict(7, "state machine invariants", state_machines());
}

/// Damped oscillator `I q'' = K (qd - q) - (D + b) q'` by classical RK4.
fn reference_step((q0, v0): (f64, f64), qd: f64, (k, d, b, inertia): (f64, f64, f64, f64), dt: f64) -> (f64, f64) {
    let f = |q: f64, v: f64| (v, (k * (qd - q) - (d + b) * v) / inertia);
    let (k1q, k1v) = f(q0, v0);
    let (k2q, k2v) = f(q0 + 0.5 * dt * k1q, v0 + 0.5 * dt * k1v);
    let (k3q, k3v) = f(q0 + 0.5 * dt * k2q, v0 + 0.5 * dt * k2v);
    let (k4q, k4v) = f(q0 + dt * k3q, v0 + dt * k3v);
    (
        q0 + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
        v0 + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    )
}

fn impedance_step() -> Outcome {
    let (k, d, inertia, qd) = (10.0, 3.0, 1.0, 0.5);
    let mut hal = HalSim64::new(PlantState::at_rest([0.0; NUM_JOINTS], [inertia; NUM_JOINTS]));
    hal.configure_link().map_err(|e| e.to_string())?;
    let b = hal.params().friction;
    let mut ctrl = Controller64::default();
    let mut gains = GainConfig::with_stiffness([k; NUM_JOINTS], [inertia; NUM_JOINTS]);
    gains.damping = [d; NUM_JOINTS];
    let params = ControllerParams {
        mode: ModeRequest::Mode(ControlMode::ManualImpedance),
        q_des: [qd, 0.0, 0.0, 0.0],
        gains,
        ..ControllerParams::default()
    };
    let mut tm = Some(hal.telemetry());
    let mut step_cycles = 0u32;
    let (mut rq, mut rv) = (0.0, 0.0);
    let (mut max_dev, mut settled_at) = (0.0f64, None);
    for cycle in 0..2000u32 {
        let out = ctrl.cycle(tm, &params, cycle as f64 * 0.01);
        let started = out.commands[0].mode == JointMode::Impedance;
        if step_cycles == 0 && !started {
            ensure(hal.plant().q[0] == 0.0, || "moved before the step".into())?;
        }
        tm = Some(hal.cycle(&out.commands).map_err(|e| e.to_string())?);
        if !started && step_cycles == 0 {
            continue;
        }
        ensure(started, || format!("left impedance control at cycle {cycle}"))?;
        step_cycles += 1;
        for _ in 0..100 {
            (rq, rv) = reference_step((rq, rv), qd, (k, d, b, inertia), 1e-4);
        }
        let q = hal.plant().q[0];
        max_dev = max_dev.max((q - rq).abs());
        let err = (q - qd).abs();
        match (err < 1e-3, settled_at) {
            (true, None) => settled_at = Some(step_cycles),
            (false, Some(_)) => settled_at = None,
            _ => {}
        }
        if step_cycles == 500 {
            break;
        }
    }
    ensure(step_cycles == 500, || "impedance mode never engaged".into())?;
    let t_settle = settled_at.map(|c| c as f64 * 0.01).ok_or("not settled within 5 s")?;
    ensure(max_dev < 1e-3, || format!("deviation from reference {max_dev:.2e} rad"))?;
    Ok(format!("settled to 1e-3 at {t_settle:.2} s, max deviation from dt=1e-4 reference {max_dev:.2e} rad"))
}

#[test]
fn criterion_08_impedance_step() {
    verdict(8, "impedance step", impedance_step());
}

fn trajectories() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let h = 1e-5;
    let (mut worst_end, mut worst_fd) = (0.0f64, 0.0f64);
    let mut samples = 0u64;
    for plan in 0..1000 {
        let q0: Vec<f64> = (0..NUM_JOINTS).map(|_| rng.random_range(-2.7..2.7)).collect();
        let qf: Vec<f64> = (0..NUM_JOINTS).map(|_| rng.random_range(-2.7..2.7)).collect();
        let vmax = rng.random_range(0.05..3.0);
        let amax = rng.random_range(0.05..10.0);
        let tr = plan_trapezoidal(&q0, &qf, vmax, amax).map_err(|e| format!("plan {plan}: {e}"))?;
        for t in [tr.duration, tr.duration + 1.0] {
            for (p, g) in tr.positions(t).iter().zip(&qf) {
                worst_end = worst_end.max((p - g).abs());
            }
        }
        for (a, b) in tr.positions(0.0).iter().zip(&q0) {
            worst_end = worst_end.max((a - b).abs());
        }
        for j in &tr.joints {
            let bps = j.breakpoints();
            let near_break = |t: f64| bps.iter().chain(&[0.0, j.duration]).any(|b| (t - b).abs() <= 2.0 * h);
            for s in 0..=400 {
                let t = tr.duration * s as f64 / 400.0;
                let v = j.sample(t).vel;
                ensure(v.abs() <= vmax * (1.0 + 1e-12), || format!("plan {plan}: |v| {v} > {vmax}"))?;
                if t - h < 0.0 || near_break(t) {
                    continue;
                }
                let fd = (j.sample(t + h).pos - j.sample(t - h).pos) / (2.0 * h);
                worst_fd = worst_fd.max((fd - v).abs() / vmax);
                samples += 1;
            }
        }
    }
    ensure(worst_end < 1e-12, || format!("endpoint error {worst_end:.2e}"))?;
    ensure(worst_fd < 1e-6, || format!("finite-difference velocity error {worst_fd:.2e}·vmax"))?;
    Ok(format!(
        "1000 plans: endpoint error {worst_end:.1e}, fd velocity error {worst_fd:.1e}·vmax over {samples} samples"
    ))
}

#[test]
fn criterion_09_trajectories() {
    verdict(9, "trapezoidal trajectories", trajectories());
}

fn startup_matrix() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut picks = [0u32; 2];
    let mut outcomes = Vec::new();
    let mut boots = 0;
    for case in 0..8u32 {
        let a_ok = case & 1 == 0;
        let b_ok = case & 2 == 0;
        let reformat = case & 4 == 0;
        for seed in 0..25u64 {
            let root = dir.path().join(format!("c{case}s{seed}"));
            let mut st = Storage::new(&root).map_err(|e| e.to_string())?;
            let fault = |ok: bool| if ok { EmmcFault::None } else { EmmcFault::MountFail };
            st.set_fault(EmmcId::A, fault(a_ok));
            st.set_fault(EmmcId::B, fault(b_ok));
            st.reformat_works = reformat;
            let mut wd = Watchdog::new(Duration::from_secs(5));
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * case as u64 + seed);
            let r = run_startup(&mut st, &mut wd, Duration::ZERO, &mut rng);
            boots += 1;
            picks[r.first_pick as usize] += 1;
            let ok = |c: EmmcId| if c == EmmcId::A { a_ok } else { b_ok };
            let first = r.first_pick;
            let expected = if ok(first) {
                StartupOutcome::Ready(first)
            } else if ok(first.other()) {
                StartupOutcome::Ready(first.other())
            } else if reformat {
                StartupOutcome::Ready(first)
            } else {
                StartupOutcome::Reboot
            };
            ensure(r.outcome == expected, || format!("case {case} seed {seed}: {:?}, expected {expected:?}", r.outcome))?;
            ensure(wd.armed(), || format!("case {case}: watchdog not armed"))?;
            let mounted = st.mounted().map(|d| d.id);
            match r.outcome {
                StartupOutcome::Ready(c) => ensure(mounted == Some(c), || format!("case {case}: {c:?} ready but not mounted"))?,
                StartupOutcome::Reboot => ensure(mounted.is_none(), || format!("case {case}: reboot with a card mounted"))?,
            }
            if seed == 0 {
                outcomes.push(match r.outcome {
                    StartupOutcome::Ready(_) => "ready",
                    StartupOutcome::Reboot => "reboot",
                });
            }
        }
    }
    ensure(picks.iter().all(|&n| n >= 60), || format!("picks a={} b={}", picks[0], picks[1]))?;
    Ok(format!("8 cases [{}], {boots} boots picked a={} b={}", outcomes.join(" "), picks[0], picks[1]))
}

#[test]
fn criterion_10_startup_matrix() {
    verdict(10, "eMMC startup matrix", startup_matrix());
}

fn watchdog_and_resume() -> Outcome {
    let sc = Scenario::builtin("watchdog_hang").unwrap();
    let (r, _d) = run(&sc);
    let timeout = Duration::from_secs_f64(sc.watchdog_timeout_s);
    ensure(r.reboots.len() == 1 && r.watchdog_reboots() == 1, || format!("{} reboots", r.reboots.len()))?;
    let lat = *r.watchdog_latency.first().ok_or("no watchdog latency")?;
    ensure(lat > timeout && lat <= timeout + TICK, || format!("watchdog fired {lat:?} after the last pet"))?;
    let suspended = Duration::from_secs_f64(sc.faults[0].at_s);
    let since = r.reboots[0].at - suspended;
    ensure(since <= timeout + TICK, || format!("reset {since:?} after suspension"))?;
    ensure(r.cycles_completed >= sc.cycles, || "mission did not complete after the reset".into())?;

    let mut nominal = Scenario::builtin("nominal").unwrap();
    nominal.cycles = 3;
    let (n, _d2) = run(&nominal);
    ensure(n.reboots.is_empty() && n.cycles_completed == 3, || {
        format!("nominal: {} reboots, {} cycles", n.reboots.len(), n.cycles_completed)
    })?;

    // reset mid-motion: persisted joint state is restored and both
    // generations reach the ground
    let sc = Scenario::builtin("reboot_mid_motion").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut w = World::new(sc.clone(), dir.path()).map_err(|e| e.to_string())?;
    let mut last_q = [0.0; NUM_JOINTS];
    let mut resumed_q = None;
    let mut generation = 0;
    while !w.is_done() {
        w.tick().map_err(|e| e.to_string())?;
        let q = w.hal().lock().unwrap().plant().q;
        let g = w.generation();
        if g == 2 && generation == 1 {
            resumed_q = Some((last_q, q));
        }
        if g != 0 {
            generation = g;
        }
        last_q = q;
    }
    let gens: BTreeSet<u32> = w.receiver().manifests().iter().map(|m| m.generation).collect();
    let rep = w.finish().map_err(|e| e.to_string())?;
    let (before, after) = resumed_q.ok_or("no second generation")?;
    let jump = (0..NUM_JOINTS).map(|i| (before[i] - after[i]).abs()).fold(0.0, f64::max);
    let off_home = before.iter().map(|q| q.abs()).fold(0.0, f64::max);
    ensure(off_home > 1e-3, || "reset happened at the home pose".into())?;
    ensure(jump < 1e-12 && rep.resume_q_error < 1e-12, || format!("joint jump {jump:.2e} across reset"))?;
    ensure(gens.contains(&1) && gens.contains(&2), || format!("receiver holds generations {gens:?}"))?;
    ensure(rep.cycles_completed >= sc.cycles, || "mission did not resume".into())?;
    Ok(format!(
        "1 reset {:.3} s after last pet, nominal 3 cycles 0 resets, resumed at |q|max {off_home:.3} rad with jump {jump:.0e}, receiver generations {gens:?}",
        lat.as_secs_f64()
    ))
}

#[test]
fn criterion_11_watchdog_and_resume() {
    verdict(11, "watchdog and resume", watchdog_and_resume());
}

fn ground_test() -> Outcome {
    let sc = Scenario::builtin("ground_test").unwrap();
    ensure(sc.start_command_s.is_none(), || "scenario sends a start datagram".into())?;
    let (r, _d) = run(&sc);
    let cycle = Duration::from_secs_f64(25.0 * 60.0 * sc.time_scale);
    ensure(r.motion_commands == 0 && !r.robot_powered, || format!("{} motion commands", r.motion_commands))?;
    ensure(r.ground_cycles >= 1 && r.sim_time >= cycle, || {
        format!("{} ground cycles over {:?}", r.ground_cycles, r.sim_time)
    })?;
    Ok(format!("{} ground cycle(s) over {:.1} s, 0 motion commands", r.ground_cycles, r.sim_time.as_secs_f64()))
}

#[test]
fn criterion_12_ground_test() {
    verdict(12, "ground test without start command", ground_test());
}

fn header_copy_rescue(jpeg: &[u8]) -> Result<(), String> {
    let mut tx = Sender::new(fast_sync(2, Duration::from_millis(10)));
    let id = tx.enqueue("media/base/1.jpg", jpeg, 1).map_err(|e| e.to_string())?;
    let mut rx = Receiver::new();
    let mut now = Duration::ZERO;
    let mut dropped = 0;
    while tx.queue_pending() > 0 {
        for p in tx.packets(now) {
            let mut at = 0;
            while at < p.len() {
                let (f, used) = decode(&p[at..]).map_err(|e| format!("{e:?}"))?;
                at += used;
                if f.kind == FragmentKind::Data && f.frag_index == 0 {
                    dropped += 1;
                } else {
                    rx.ingest_packet(&f.encode());
                }
            }
        }
        now += TICK;
    }
    ensure(dropped > 0, || "fragment 0 never sent".into())?;
    let m = rx.manifest(1, id).ok_or("no manifest")?;
    ensure(!m.received[0] && m.header_copy, || "fragment 0 not isolated".into())?;
    let r = rx.reassemble(1, id).map_err(|e| e.to_string())?;
    ensure(r.header_copy_used && r.bytes.starts_with(&[0xFF, 0xD8]), || "reassembly lacks FFD8".into())?;
    ensure(r.bytes == jpeg && r.crc_ok, || "rescued JPEG differs".into())?;
    image::load_from_memory(&r.bytes).map_err(|e| format!("rescued JPEG does not decode: {e}"))?;
    Ok(())
}

fn end_to_end() -> Outcome {
    let sc = Scenario::builtin("lossy_5pct").unwrap();
    ensure(sc.cycles == 3 && sc.channel.loss == 0.05, || "scenario parameters changed".into())?;
    let t0 = Instant::now();
    let (r, dir) = run(&sc);
    let el = t0.elapsed();
    ensure(el < Duration::from_secs(180), || format!("runtime {el:?}"))?;
    ensure(r.cycles_completed == 3, || format!("{} cycles", r.cycles_completed))?;
    let rx = dir.path().join("ground").join("rx");
    for f in &r.files {
        let out = rx.join(f.generation.to_string()).join(&f.name);
        match f.status {
            FileStatus::Complete => ensure(out.is_file(), || format!("{} not written", f.name))?,
            FileStatus::Holes(_) => ensure(holes_path(&out).is_file(), || format!("{} has no hole report", f.name))?,
            s => return Err(format!("{}/{} {}", f.generation, f.name, s.as_string())),
        }
    }
    let logs = files_under(&rx, "sdlg").len();
    let jpegs_rx = files_under(&rx, "jpg");
    ensure(logs > 0 && !jpegs_rx.is_empty(), || "no logs or images on the ground".into())?;
    for p in &jpegs_rx {
        let b = std::fs::read(p).map_err(|e| e.to_string())?;
        if !holes_path(p).exists() {
            ensure(b.starts_with(&[0xFF, 0xD8]), || format!("{} lacks FFD8", p.display()))?;
        }
    }
    let board_jpeg = files_under(&dir.path().join("board"), "jpg");
    let src = board_jpeg.first().ok_or("no camera images on board")?;
    let jpeg = std::fs::read(src).map_err(|e| e.to_string())?;
    header_copy_rescue(&jpeg)?;
    let c = r.file_counts();
    Ok(format!(
        "3 cycles, {} complete + {} hole-reported files, {} in-run rescues, forced fragment-0 loss rescued to FFD8, {:.1} s",
        c["complete"],
        c["holes"],
        r.header_copy_rescues,
        el.as_secs_f64()
    ))
}

#[test]
fn criterion_13_end_to_end() {
    verdict(13, "end to end nominal at 5% loss", end_to_end());
}
