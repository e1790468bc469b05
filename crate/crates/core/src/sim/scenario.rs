//! Scenario files (TOML).
//!
//! ```toml
//! name = "lossy_5pct"
//! seed = 7
//! time_scale = 0.016666666666666666   # default 1/60
//! cycles = 3                           # demo cycles before wind-down
//! duration_s = 150                     # hard stop, simulated seconds
//! start_command_s = 0.5                # omit for no start datagram
//! malformed_datagram_s = [0.2]
//! recording = "flight"                 # or "full"
//! expect = ["zero_reboots", "all_files_delivered"]
//!
//! [channel]
//! loss = 0.05
//! corrupt = 0.0
//! reorder_window = 0
//! bandwidth_bps = 0                    # 0 = unlimited
//! latency_ms = 0
//!
//! [sync]                               # optional sender config
//! rate_bps = 1000000
//!
//! [[fault]]
//! at_s = 12.0
//! kind = "suspend_mission"             # see FaultAction
//! ```

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasync::{ChannelConfig, FolderRule, SyncConfig, TransferConfig};
use crate::mission::{EmmcId, MissionConfig};
use crate::recorder::RecordingConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown built-in scenario `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Flight,
    Full,
}

impl Profile {
    pub fn config(self) -> RecordingConfig {
        match self {
            Profile::Flight => RecordingConfig::flight(),
            Profile::Full => RecordingConfig::full(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultAction {
    TorqueSensorInvalid { joint: usize },
    JointStuck { joint: usize },
    LinkCorruptConfig,
    ClearHalFaults,
    EmmcMountFail { card: EmmcId },
    EmmcControllerHang { card: EmmcId },
    EmmcReformatFails,
    /// The mission process stops being scheduled (and stops petting).
    SuspendMission,
    /// Hard reset of the on-board computer.
    Reboot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub at_s: f64,
    #[serde(flatten)]
    pub action: FaultAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    ZeroReboots,
    OneWatchdogReboot,
    CyclesCompleted,
    AllFilesDelivered,
    AllFilesComplete,
    GroundTestSafe,
    StartupFallback,
    TorqueGateSkips,
    ResumedAfterReboot,
}

impl Expectation {
    pub fn as_str(self) -> &'static str {
        match self {
            Expectation::ZeroReboots => "zero_reboots",
            Expectation::OneWatchdogReboot => "one_watchdog_reboot",
            Expectation::CyclesCompleted => "cycles_completed",
            Expectation::AllFilesDelivered => "all_files_delivered",
            Expectation::AllFilesComplete => "all_files_complete",
            Expectation::GroundTestSafe => "ground_test_safe",
            Expectation::StartupFallback => "startup_fallback",
            Expectation::TorqueGateSkips => "torque_gate_skips",
            Expectation::ResumedAfterReboot => "resumed_after_reboot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSpec {
    pub loss: f64,
    pub corrupt: f64,
    pub reorder_window: usize,
    pub bandwidth_bps: f64,
    pub latency_ms: u64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            loss: 0.0,
            corrupt: 0.0,
            reorder_window: 0,
            bandwidth_bps: 0.0,
            latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub time_scale: f64,
    pub cycles: u32,
    pub duration_s: f64,
    pub start_command_s: Option<f64>,
    pub malformed_datagram_s: Vec<f64>,
    pub start_timeout_s: f64,
    pub watchdog_timeout_s: f64,
    pub recording: Profile,
    /// Simulated seconds allowed for the downlink to empty after the mission.
    pub drain_s: f64,
    /// Pace ticks against the wall clock and measure real loop jitter.
    pub wall_clock: bool,
    pub channel: ChannelSpec,
    pub sync: Option<SyncConfig>,
    #[serde(rename = "fault")]
    pub faults: Vec<ScheduledFault>,
    pub expect: Vec<Expectation>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            description: String::new(),
            seed: 1,
            time_scale: 1.0 / 60.0,
            cycles: 1,
            duration_s: 150.0,
            start_command_s: None,
            malformed_datagram_s: Vec::new(),
            start_timeout_s: 3.0,
            watchdog_timeout_s: 5.0,
            recording: Profile::Flight,
            drain_s: 120.0,
            wall_clock: false,
            channel: ChannelSpec::default(),
            sync: None,
            faults: Vec::new(),
            expect: Vec::new(),
        }
    }
}

/// Sender settings used on board: media ahead of logs.
pub fn mission_sync_config() -> SyncConfig {
    SyncConfig {
        rescan_period_ms: 2000,
        default: TransferConfig {
            priority: 1,
            resend_count: 2,
            min_resend_interval: Duration::from_millis(1000),
        },
        folders: vec![FolderRule {
            prefix: "media/".into(),
            transfer: TransferConfig {
                priority: 5,
                resend_count: 3,
                min_resend_interval: Duration::from_millis(500),
            },
        }],
        ..SyncConfig::default()
    }
}

pub const BUILTIN: [(&str, &str); 7] = [
    ("nominal", include_str!("../../scenarios/nominal.toml")),
    ("lossy_5pct", include_str!("../../scenarios/lossy_5pct.toml")),
    ("emmc_a_dead", include_str!("../../scenarios/emmc_a_dead.toml")),
    ("ground_test", include_str!("../../scenarios/ground_test.toml")),
    ("watchdog_hang", include_str!("../../scenarios/watchdog_hang.toml")),
    ("reboot_mid_motion", include_str!("../../scenarios/reboot_mid_motion.toml")),
    ("torque_fault", include_str!("../../scenarios/torque_fault.toml")),
];

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ScenarioError::Unknown(name.to_string()))?;
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return bad(format!("time_scale {} must be positive", self.time_scale));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.channel.loss) || !(0.0..=1.0).contains(&self.channel.corrupt) {
            return bad("channel probabilities must lie in [0, 1]".into());
        }
        if self.watchdog_timeout_s <= 0.0 || self.start_timeout_s < 0.0 || self.drain_s < 0.0 {
            return bad("timeouts must be non-negative".into());
        }
        let in_range = |t: f64| (0.0..=self.duration_s).contains(&t);
        if let Some(f) = self.faults.iter().find(|f| !in_range(f.at_s)) {
            return bad(format!("fault at {} s outside the run duration", f.at_s));
        }
        if self.start_command_s.is_some_and(|t| !in_range(t)) || !self.malformed_datagram_s.iter().all(|t| in_range(*t)) {
            return bad("datagram time outside the run duration".into());
        }
        for f in &self.faults {
            if let FaultAction::TorqueSensorInvalid { joint } | FaultAction::JointStuck { joint } = f.action {
                if joint >= crate::halsim::NUM_JOINTS {
                    return bad(format!("no joint {joint}"));
                }
            }
        }
        Ok(())
    }

    pub fn mission_config(&self) -> MissionConfig {
        MissionConfig {
            time_scale: self.time_scale,
            watchdog_timeout: Duration::from_secs_f64(self.watchdog_timeout_s),
            start_timeout: Duration::from_secs_f64(self.start_timeout_s),
            seed: self.seed,
            ..MissionConfig::default()
        }
    }

    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            loss: self.channel.loss,
            corrupt: self.channel.corrupt,
            reorder_window: self.channel.reorder_window,
            bandwidth_bps: self.channel.bandwidth_bps,
            latency: Duration::from_millis(self.channel.latency_ms),
            seed: self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xC4A7,
        }
    }

    pub fn sync_config(&self) -> SyncConfig {
        self.sync.clone().unwrap_or_else(mission_sync_config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for (name, _) in BUILTIN {
            let s = Scenario::builtin(name).unwrap();
            assert_eq!(s.name, name);
        }
        assert!(matches!(Scenario::builtin("nope"), Err(ScenarioError::Unknown(_))));
    }

    #[test]
    fn fault_schedule_parses() {
        let s = Scenario::from_toml(
            r#"
            name = "x"
            duration_s = 10
            [[fault]]
            at_s = 1.5
            kind = "torque_sensor_invalid"
            joint = 2
            [[fault]]
            at_s = 0
            kind = "emmc_mount_fail"
            card = "a"
            "#,
        )
        .unwrap();
        assert_eq!(s.faults[0].action, FaultAction::TorqueSensorInvalid { joint: 2 });
        assert_eq!(s.faults[1].action, FaultAction::EmmcMountFail { card: EmmcId::A });
    }

    #[test]
    fn invalid_scenarios_rejected() {
        for text in [
            "duration_s = 5\n[[fault]]\nat_s = 6\nkind = \"reboot\"",
            "time_scale = 0",
            "[channel]\nloss = 1.5",
            "bogus = 1",
            "[[fault]]\nat_s = 1\nkind = \"joint_stuck\"\njoint = 9",
        ] {
            assert!(Scenario::from_toml(text).is_err(), "{text}");
        }
    }
}
