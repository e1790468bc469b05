//! Run report: deterministic `key=value` lines plus a human summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use crate::datasync::{ChannelStats, RxCounters, SenderStats};
use crate::mission::{MissionEvent, PhaseOutcome, PhaseRecord};

use super::scenario::Expectation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FileStatus {
    Complete,
    /// Delivered with missing fragments listed in a holes file.
    Holes(u32),
    /// On a card that is no longer mounted.
    Stranded,
    Missing,
}

impl FileStatus {
    pub fn as_string(self) -> String {
        match self {
            FileStatus::Complete => "complete".into(),
            FileStatus::Holes(n) => format!("holes:{n}"),
            FileStatus::Stranded => "stranded".into(),
            FileStatus::Missing => "missing".into(),
        }
    }

    pub fn delivered(self) -> bool {
        matches!(self, FileStatus::Complete | FileStatus::Holes(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileReport {
    pub generation: u32,
    pub name: String,
    pub size: u64,
    pub status: FileStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootRecord {
    pub generation: u32,
    pub at: Duration,
    pub card: Option<String>,
    pub steps: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebootRecord {
    pub generation: u32,
    pub at: Duration,
    pub cause: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub sim_time: Duration,
    pub ticks: u64,
    pub events: Vec<MissionEvent>,
    pub phases: Vec<PhaseRecord>,
    pub boots: Vec<BootRecord>,
    pub reboots: Vec<RebootRecord>,
    /// Time from the last pet to each watchdog reset.
    pub watchdog_latency: Vec<Duration>,
    pub cycles_completed: u32,
    pub ground_cycles: u32,
    pub robot_powered: bool,
    /// Controller ticks with at least one joint not off.
    pub motion_commands: u64,
    pub controller_ticks: u64,
    pub command_sets: u64,
    pub mode_residence: BTreeMap<String, Duration>,
    pub max_tracking_error: f64,
    /// Largest deviation of the loop period from 10 ms; zero unless paced
    /// against the wall clock.
    pub controller_jitter: Duration,
    pub recorder_bytes: u64,
    pub recorder_seconds: f64,
    pub sender: SenderStats,
    pub channel: ChannelStats,
    pub rx: RxCounters,
    pub files: Vec<FileReport>,
    pub header_copy_rescues: u32,
    /// Largest joint position jump across a reboot, rad.
    pub resume_q_error: f64,
    pub drained: bool,
    pub assertions: Vec<(Expectation, bool)>,
}

fn secs(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64())
}

impl RunReport {
    pub fn recorder_bit_rate(&self) -> f64 {
        if self.recorder_seconds > 0.0 {
            self.recorder_bytes as f64 * 8.0 / self.recorder_seconds
        } else {
            0.0
        }
    }

    pub fn watchdog_reboots(&self) -> usize {
        self.reboots.iter().filter(|r| r.cause.starts_with("watchdog")).count()
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|(_, ok)| *ok)
    }

    pub fn file_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::from([("complete", 0), ("holes", 0), ("stranded", 0), ("missing", 0)]);
        for f in &self.files {
            let k = match f.status {
                FileStatus::Complete => "complete",
                FileStatus::Holes(_) => "holes",
                FileStatus::Stranded => "stranded",
                FileStatus::Missing => "missing",
            };
            *m.get_mut(k).unwrap() += 1;
        }
        m
    }

    /// Machine-readable lines. Identical for identical seeds.
    pub fn lines(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = Vec::new();
        let mut kv = |k: String, val: String| v.push((k, val));
        kv("scenario".into(), self.scenario.clone());
        kv("seed".into(), self.seed.to_string());
        kv("sim_time_s".into(), secs(self.sim_time));
        kv("ticks".into(), self.ticks.to_string());
        for (i, b) in self.boots.iter().enumerate() {
            kv(
                format!("boot.{i}"),
                format!(
                    "gen={} at={} card={} steps={}",
                    b.generation,
                    secs(b.at),
                    b.card.as_deref().unwrap_or("none"),
                    b.steps
                ),
            );
        }
        kv("boot_generations".into(), self.boots.len().to_string());
        for (i, e) in self.events.iter().enumerate() {
            let detail = if e.detail.is_empty() { String::new() } else { format!(" {}", e.detail) };
            kv(format!("event.{i}"), format!("{} gen={} {}{}", secs(e.stamp), e.generation, e.kind.as_str(), detail));
        }
        for (i, p) in self.phases.iter().enumerate() {
            let outcome = match &p.outcome {
                PhaseOutcome::Completed => "completed".to_string(),
                PhaseOutcome::Skipped => "skipped".to_string(),
                PhaseOutcome::Failed(e) => format!("failed({e})"),
            };
            kv(
                format!("phase.{i}"),
                format!("gen={} cycle={} {} {} {}..{}", p.generation, p.cycle, p.phase.as_str(), outcome, secs(p.start), secs(p.end)),
            );
        }
        for (i, r) in self.reboots.iter().enumerate() {
            kv(format!("reboot.{i}"), format!("gen={} at={} cause={}", r.generation, secs(r.at), r.cause));
        }
        kv("reboots".into(), self.reboots.len().to_string());
        kv("watchdog_reboots".into(), self.watchdog_reboots().to_string());
        for (i, l) in self.watchdog_latency.iter().enumerate() {
            kv(format!("watchdog_latency_s.{i}"), secs(*l));
        }
        kv("cycles_completed".into(), self.cycles_completed.to_string());
        kv("ground_cycles".into(), self.ground_cycles.to_string());
        kv("robot_powered".into(), self.robot_powered.to_string());
        kv("controller_ticks".into(), self.controller_ticks.to_string());
        kv("command_sets".into(), self.command_sets.to_string());
        kv("motion_commands".into(), self.motion_commands.to_string());
        for (m, d) in &self.mode_residence {
            kv(format!("residence_s.{m}"), secs(*d));
        }
        kv("max_tracking_error".into(), format!("{:.6}", self.max_tracking_error));
        kv("controller_jitter_us".into(), self.controller_jitter.as_micros().to_string());
        kv("recorder_bytes".into(), self.recorder_bytes.to_string());
        kv("recorder_bit_rate".into(), format!("{:.0}", self.recorder_bit_rate()));
        kv("sender_files".into(), self.sender.files.to_string());
        kv("sender_fragments".into(), self.sender.fragments.to_string());
        kv("sender_packets".into(), self.sender.packets.to_string());
        kv("sender_bytes".into(), self.sender.bytes.to_string());
        kv("channel_offered".into(), self.channel.offered.to_string());
        kv("channel_dropped".into(), self.channel.dropped.to_string());
        kv("channel_corrupted".into(), self.channel.corrupted.to_string());
        kv("channel_delivered".into(), self.channel.delivered.to_string());
        kv("rx_packets".into(), self.rx.packets.to_string());
        kv("rx_fragments".into(), self.rx.fragments.to_string());
        kv("rx_duplicates".into(), self.rx.duplicates.to_string());
        kv("rx_corrupt".into(), self.rx.corrupt.to_string());
        kv("rx_malformed".into(), self.rx.malformed.to_string());
        for f in &self.files {
            kv(format!("file.{}/{}", f.generation, f.name), format!("{} size={}", f.status.as_string(), f.size));
        }
        for (k, n) in self.file_counts() {
            kv(format!("files_{k}"), n.to_string());
        }
        kv("header_copy_rescues".into(), self.header_copy_rescues.to_string());
        kv("resume_q_error".into(), format!("{:.3e}", self.resume_q_error));
        kv("drained".into(), self.drained.to_string());
        for (e, ok) in &self.assertions {
            kv(format!("assert.{}", e.as_str()), if *ok { "pass" } else { "fail" }.into());
        }
        kv("result".into(), if self.passed() { "pass" } else { "fail" }.into());
        v
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.lines() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn summary_table(&self) -> String {
        let counts = self.file_counts();
        let rows: Vec<(&str, String)> = vec![
            ("scenario", self.scenario.clone()),
            ("simulated time", format!("{} s", secs(self.sim_time))),
            ("boots", self.boots.len().to_string()),
            ("reboots (watchdog)", format!("{} ({})", self.reboots.len(), self.watchdog_reboots())),
            ("demo cycles", self.cycles_completed.to_string()),
            ("ground-test cycles", self.ground_cycles.to_string()),
            ("motion commands", self.motion_commands.to_string()),
            ("max tracking error", format!("{:.4} rad", self.max_tracking_error)),
            ("recorder rate", format!("{:.3} Mbit/s", self.recorder_bit_rate() / 1e6)),
            (
                "downlink packets",
                format!("{} sent, {} lost, {} corrupted", self.channel.offered, self.channel.dropped, self.channel.corrupted),
            ),
            (
                "files",
                format!(
                    "{} complete, {} with holes, {} stranded, {} missing",
                    counts["complete"], counts["holes"], counts["stranded"], counts["missing"]
                ),
            ),
            ("header-copy rescues", self.header_copy_rescues.to_string()),
        ];
        let mut rows = rows;
        for (e, ok) in &self.assertions {
            rows.push((e.as_str(), if *ok { "PASS" } else { "FAIL" }.into()));
        }
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = String::new();
        let rule = format!("+-{}-+-{}-+\n", "-".repeat(w), "-".repeat(52));
        s.push_str(&rule);
        for (k, v) in rows {
            let _ = writeln!(s, "| {k:<w$} | {v:<52} |");
        }
        s.push_str(&rule);
        s
    }
}
