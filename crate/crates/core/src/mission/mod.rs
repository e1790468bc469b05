//! Startup ladder, start handshake, health checks, the demo-cycle sequencer
//! and the watchdog.

pub mod handshake;
pub mod health;
pub mod sequencer;
pub mod storage;
pub mod watchdog;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::camsim::{CaptureParams, ColorSpace};

pub use handshake::{await_start_command, is_start_datagram, StartMode, StartSource, DEFAULT_START_PORT, START_MAGIC};
pub use health::{health_check, torque_valid, HealthFailure, HEALTH_WINDOW};
pub use sequencer::{MissionRequest, MissionStatus, Phase, PhaseOutcome, PhaseRecord, Sequencer, Stage};
pub use storage::{run_startup, EmmcDevice, EmmcFault, EmmcId, MountState, StartupOutcome, StartupReport, StartupStep, Storage};
pub use watchdog::Watchdog;

pub const STATUS_SERVICE: &str = "mission/status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    /// Multiplies every mission duration given in flight seconds.
    pub time_scale: f64,
    pub watchdog_timeout: Duration,
    pub pet_period: Duration,
    pub start_timeout: Duration,
    pub start_port: u16,
    /// Flight seconds of motion per demo cycle.
    pub motion_secs: f64,
    /// Flight seconds of sleep after each demo cycle.
    pub sleep_secs: f64,
    pub max_cycles: Option<u32>,
    pub seed: u64,
    pub end_effector_weight: f64,
    pub image: CaptureParams,
    pub video: CaptureParams,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            time_scale: 1.0 / 60.0,
            watchdog_timeout: Duration::from_secs(5),
            pet_period: Duration::from_millis(250),
            start_timeout: Duration::from_secs(3),
            start_port: DEFAULT_START_PORT,
            motion_secs: 1200.0,
            sleep_secs: 300.0,
            max_cycles: None,
            seed: 1,
            end_effector_weight: 0.7,
            image: CaptureParams {
                width: 320,
                height: 240,
                ..CaptureParams::default()
            },
            video: CaptureParams {
                width: 160,
                height: 120,
                color_space: ColorSpace::Gray8,
                duration: 1.0,
                fps: 5,
                ..CaptureParams::default()
            },
        }
    }
}

impl MissionConfig {
    pub fn scaled(&self, flight_secs: f64) -> Duration {
        Duration::from_secs_f64(flight_secs * self.time_scale)
    }

    pub fn cycle_duration(&self) -> Duration {
        self.scaled(self.motion_secs + self.sleep_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Boot,
    StartCmd,
    HdrmRelease,
    HealthCheck,
    DemoStart,
    DemoEnd,
    Sleep,
    Fault,
    Reboot,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Boot => "boot",
            EventKind::StartCmd => "start_cmd",
            EventKind::HdrmRelease => "hdrm_release",
            EventKind::HealthCheck => "health_check",
            EventKind::DemoStart => "demo_start",
            EventKind::DemoEnd => "demo_end",
            EventKind::Sleep => "sleep",
            EventKind::Fault => "fault",
            EventKind::Reboot => "reboot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissionEvent {
    pub stamp: Duration,
    pub generation: u32,
    pub kind: EventKind,
    pub detail: String,
}

/// Audit trail with strictly increasing stamps.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<MissionEvent>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, now: Duration, generation: u32, kind: EventKind, detail: impl Into<String>) {
        let stamp = match self.events.last() {
            Some(e) if e.stamp >= now => e.stamp + Duration::from_nanos(1),
            _ => now,
        };
        self.events.push(MissionEvent {
            stamp,
            generation,
            kind,
            detail: detail.into(),
        });
    }

    pub fn events(&self) -> &[MissionEvent] {
        &self.events
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

/// Files under `state/` that survive reboots.
#[derive(Debug, Clone)]
pub struct PersistentState {
    dir: PathBuf,
}

impl PersistentState {
    pub fn open(root: &Path) -> io::Result<Self> {
        let dir = root.join("state");
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&self, name: &str, content: &[u8]) -> io::Result<()> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, content)?;
        fs::rename(tmp, self.dir.join(name))
    }

    pub fn boot_generation(&self) -> u32 {
        fs::read_to_string(self.dir.join("boot_generation"))
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0)
    }

    /// Increment and persist the boot generation.
    pub fn next_generation(&self) -> io::Result<u32> {
        let g = self.boot_generation() + 1;
        self.write("boot_generation", format!("{g}\n").as_bytes())?;
        Ok(g)
    }

    pub fn hdrm_released(&self) -> bool {
        self.dir.join("hdrm_released").exists()
    }

    pub fn set_hdrm_released(&self, stamp: Duration) -> io::Result<()> {
        self.write("hdrm_released", format!("{:.3}\n", stamp.as_secs_f64()).as_bytes())
    }

    pub fn plant_path(&self) -> PathBuf {
        self.dir.join("plant.bin")
    }
}
