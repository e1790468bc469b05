//! High-level and joint-level state machines.
//!
//! The transition tables below complete the published state charts, whose
//! full edge sets are not spelled out:
//!
//! | high level | condition                  | next              |
//! |------------|----------------------------|-------------------|
//! | any        | error                      | INIT (+ reset)    |
//! | INIT       | all joints READY_*         | IDLE              |
//! | IDLE       | request mode `m`           | READY(`m`)        |
//! | READY(_)   | request mode `m`           | READY(`m`)        |
//! | READY(_)   | request idle               | IDLE              |
//!
//! | joint      | condition                  | next              |
//! |------------|----------------------------|-------------------|
//! | any        | reset trigger              | RESETTING         |
//! | RESETTING  | -                          | REFERENCING       |
//! | REFERENCING| referenced flag            | READY_<target>    |
//! | READY_*    | referenced flag lost       | REFERENCING       |
//! | READY_*    | otherwise                  | READY_<target>    |

use serde::{Deserialize, Serialize};

use super::NUM_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    ManualPosition,
    ManualImpedance,
    ManualTorque,
    Interpolator,
    /// Placeholder: holds position under impedance control.
    VirtualFixtures,
}

impl ControlMode {
    pub const ALL: [ControlMode; 5] = [
        ControlMode::ManualPosition,
        ControlMode::ManualImpedance,
        ControlMode::ManualTorque,
        ControlMode::Interpolator,
        ControlMode::VirtualFixtures,
    ];

    /// Modes whose behaviour depends on valid torque measurements.
    pub fn uses_torque(self) -> bool {
        matches!(
            self,
            ControlMode::ManualImpedance | ControlMode::ManualTorque | ControlMode::VirtualFixtures
        )
    }

    pub fn joint_target(self) -> JointController {
        match self {
            ControlMode::ManualPosition | ControlMode::Interpolator => JointController::Position,
            ControlMode::ManualImpedance | ControlMode::VirtualFixtures => JointController::Impedance,
            ControlMode::ManualTorque => JointController::Torque,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::ManualPosition => "position",
            ControlMode::ManualImpedance => "impedance",
            ControlMode::ManualTorque => "torque",
            ControlMode::Interpolator => "interpolator",
            ControlMode::VirtualFixtures => "virtual_fixtures",
        }
    }
}

/// Value of the `controller/mode` parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeRequest {
    Idle,
    Mode(ControlMode),
}

impl ModeRequest {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "idle" {
            return Some(ModeRequest::Idle);
        }
        ControlMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .map(ModeRequest::Mode)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModeRequest::Idle => "idle",
            ModeRequest::Mode(m) => m.as_str(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HighLevel {
    Init,
    Idle,
    Ready(ControlMode),
}

impl HighLevel {
    pub fn mode(self) -> Option<ControlMode> {
        match self {
            HighLevel::Ready(m) => Some(m),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            HighLevel::Init => 0,
            HighLevel::Idle => 1,
            HighLevel::Ready(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointController {
    Position,
    Impedance,
    Torque,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointFsm {
    Resetting,
    Referencing,
    ReadyPosition,
    ReadyImpedance,
    ReadyTorque,
}

impl JointFsm {
    pub fn is_ready(self) -> bool {
        matches!(
            self,
            JointFsm::ReadyPosition | JointFsm::ReadyImpedance | JointFsm::ReadyTorque
        )
    }

    fn ready(target: JointController) -> Self {
        match target {
            JointController::Position => JointFsm::ReadyPosition,
            JointController::Impedance => JointFsm::ReadyImpedance,
            JointController::Torque => JointFsm::ReadyTorque,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

pub type JointFsmState = [JointFsm; NUM_JOINTS];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HlOutput {
    pub state: HighLevel,
    /// Ask the joints (and the link) to reset.
    pub reset_trigger: bool,
}

pub fn hl_step(s: HighLevel, joints: &JointFsmState, req: ModeRequest, error: bool) -> HlOutput {
    if error {
        return HlOutput {
            state: HighLevel::Init,
            reset_trigger: s != HighLevel::Init,
        };
    }
    let state = match (s, req) {
        (HighLevel::Init, _) if joints.iter().all(|j| j.is_ready()) => HighLevel::Idle,
        (HighLevel::Init, _) => HighLevel::Init,
        (HighLevel::Idle, ModeRequest::Idle) => HighLevel::Idle,
        (HighLevel::Idle, ModeRequest::Mode(m)) => HighLevel::Ready(m),
        (HighLevel::Ready(_), ModeRequest::Mode(m)) => HighLevel::Ready(m),
        (HighLevel::Ready(_), ModeRequest::Idle) => HighLevel::Idle,
    };
    HlOutput {
        state,
        reset_trigger: false,
    }
}

/// Joint controller requested by the high level state.
pub fn joint_target(hl: HighLevel) -> JointController {
    hl.mode()
        .map_or(JointController::Position, ControlMode::joint_target)
}

pub fn joint_step(s: JointFsm, referenced: bool, target: JointController, reset: bool) -> JointFsm {
    if reset {
        return JointFsm::Resetting;
    }
    match s {
        JointFsm::Resetting => JointFsm::Referencing,
        JointFsm::Referencing if referenced => JointFsm::ready(target),
        JointFsm::Referencing => JointFsm::Referencing,
        _ if !referenced => JointFsm::Referencing,
        _ => JointFsm::ready(target),
    }
}
