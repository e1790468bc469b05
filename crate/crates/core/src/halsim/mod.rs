//! Simulated four-joint arm behind a framed cyclic link.
//!
//! The link starts unconfigured; [`HalSim::configure_link`] must succeed
//! before [`HalSim::cycle`] exchanges commands for telemetry. Each cycle
//! evaluates the commanded joint law, integrates the plant one step of
//! [`CYCLE_PERIOD`] and reports post-step telemetry.

pub mod node;
mod plant;
pub mod records;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub use node::{HalNode, CMD_TOPIC, CONFIGURE_SERVICE, FAULT_SERVICE, RAW_TOPIC, TELEMETRY_TOPIC};
pub use plant::{step_plant, PlantParams, PlantState, StepResult};

pub const NUM_JOINTS: usize = 4;
/// Control and link period, seconds.
pub const CYCLE_PERIOD: f64 = 0.01;
/// Reported torque when a joint's torque sensor is invalid.
pub const TORQUE_SENTINEL: f64 = 9999.0;
/// Cycles after link configuration until a joint reports referenced.
pub const REFERENCING_CYCLES: u32 = 10;
/// Motor torque saturation, N·m.
pub const TORQUE_LIMIT: f64 = 40.0;
/// Drive servo steps per link cycle (1 kHz joint-level loop).
pub const SERVO_SUBSTEPS: u32 = 10;
pub const DEFAULT_INERTIA: [f64; NUM_JOINTS] = [1.0, 0.8, 0.5, 0.2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HalError {
    #[error("link configuration rejected")]
    ConfigRejected,
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("command out of range for joint {joint}: {reason}")]
    CommandOutOfRange { joint: usize, reason: String },
    #[error("unknown joint {0}")]
    UnknownJoint(usize),
}

/// Joint status bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatusFlags(pub u8);

impl StatusFlags {
    pub const REFERENCED: u8 = 1;
    pub const ERROR: u8 = 2;
    pub const MOTOR_ON: u8 = 4;

    pub fn referenced(self) -> bool {
        self.0 & Self::REFERENCED != 0
    }
    pub fn error(self) -> bool {
        self.0 & Self::ERROR != 0
    }
    pub fn motor_on(self) -> bool {
        self.0 & Self::MOTOR_ON != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTelemetry<T> {
    pub joint_id: u8,
    pub position: T,
    pub velocity: T,
    pub torque: T,
    pub status: StatusFlags,
    pub cycle_counter: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    Off = 0,
    Position = 1,
    Impedance = 2,
    Torque = 3,
}

impl JointMode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Off,
            1 => Self::Position,
            2 => Self::Impedance,
            3 => Self::Torque,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointCommand<T> {
    pub joint_id: u8,
    pub mode: JointMode,
    pub q_des: T,
    pub tau_des: T,
    pub stiffness: T,
    pub damping: T,
}

impl<T: Real> JointCommand<T> {
    pub fn off(joint_id: u8) -> Self {
        Self {
            joint_id,
            mode: JointMode::Off,
            q_des: T::zero(),
            tau_des: T::zero(),
            stiffness: T::zero(),
            damping: T::zero(),
        }
    }

    pub fn all_off() -> [Self; NUM_JOINTS] {
        std::array::from_fn(|i| Self::off(i as u8))
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.q_des, self.tau_des, self.stiffness, self.damping]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite field".into());
        }
        if self.stiffness < T::zero() || self.damping < T::zero() {
            return Err("negative gain".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    TorqueSensorInvalid,
    JointStuck,
    LinkCorruptConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultInjection {
    pub kind: FaultKind,
    pub joint_id: usize,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    Unconfigured,
    Cyclic,
}

#[derive(Debug, Clone)]
pub struct HalSim<T> {
    plant: PlantState<T>,
    params: PlantParams<T>,
    dt: T,
    link: LinkState,
    counters: [u64; NUM_JOINTS],
    referencing: [u32; NUM_JOINTS],
    error_latched: [bool; NUM_JOINTS],
    faults: Vec<(FaultKind, usize)>,
    last_torque: [T; NUM_JOINTS],
    last_modes: [JointMode; NUM_JOINTS],
}

impl<T: Real> HalSim<T> {
    pub fn new(plant: PlantState<T>) -> Self {
        Self::with_params(plant, PlantParams::default())
    }

    pub fn with_params(plant: PlantState<T>, params: PlantParams<T>) -> Self {
        Self {
            plant,
            params,
            dt: T::lit(CYCLE_PERIOD),
            link: LinkState::Unconfigured,
            counters: [0; NUM_JOINTS],
            referencing: [0; NUM_JOINTS],
            error_latched: [false; NUM_JOINTS],
            faults: Vec::new(),
            last_torque: [T::zero(); NUM_JOINTS],
            last_modes: [JointMode::Off; NUM_JOINTS],
        }
    }

    /// Arm at rest at `q` with the default inertias.
    pub fn at(q: [T; NUM_JOINTS]) -> Self {
        Self::new(PlantState::at_rest(q, DEFAULT_INERTIA.map(T::lit)))
    }

    pub fn plant(&self) -> &PlantState<T> {
        &self.plant
    }

    pub fn plant_mut(&mut self) -> &mut PlantState<T> {
        &mut self.plant
    }

    pub fn params(&self) -> &PlantParams<T> {
        &self.params
    }

    pub fn link_state(&self) -> LinkState {
        self.link
    }

    pub fn fault_active(&self, kind: FaultKind, joint: usize) -> bool {
        self.faults.contains(&(kind, joint))
    }

    /// Configuration phase of the link. Also restarts referencing and clears
    /// latched joint errors.
    pub fn configure_link(&mut self) -> Result<(), HalError> {
        if self.faults.iter().any(|(k, _)| *k == FaultKind::LinkCorruptConfig) {
            self.link = LinkState::Unconfigured;
            return Err(HalError::ConfigRejected);
        }
        self.link = LinkState::Cyclic;
        self.counters = [0; NUM_JOINTS];
        self.referencing = [0; NUM_JOINTS];
        self.error_latched = [false; NUM_JOINTS];
        Ok(())
    }

    /// Drop back to the unconfigured phase (power loss, reboot).
    pub fn disconnect(&mut self) {
        self.link = LinkState::Unconfigured;
    }

    pub fn inject_fault(&mut self, f: FaultInjection) -> Result<(), HalError> {
        if f.joint_id >= NUM_JOINTS {
            return Err(HalError::UnknownJoint(f.joint_id));
        }
        let key = (f.kind, f.joint_id);
        self.faults.retain(|k| *k != key);
        if f.active {
            self.faults.push(key);
        }
        Ok(())
    }

    fn applied_torque(&self, i: usize, cmd: &JointCommand<T>) -> T {
        let q = self.plant.q[i];
        let qdot = self.plant.qdot[i];
        let tau = match cmd.mode {
            JointMode::Off => T::zero(),
            JointMode::Torque => cmd.tau_des,
            JointMode::Position | JointMode::Impedance => {
                cmd.tau_des + cmd.stiffness * (cmd.q_des - q) - cmd.damping * qdot
            }
        };
        let lim = T::lit(TORQUE_LIMIT);
        tau.max(-lim).min(lim)
    }

    /// One cyclic exchange: exactly one command per joint, in joint order.
    pub fn cycle(&mut self, commands: &[JointCommand<T>]) -> Result<[JointTelemetry<T>; NUM_JOINTS], HalError> {
        if self.link != LinkState::Cyclic {
            return Err(HalError::ProtocolViolation("cyclic exchange before configuration".into()));
        }
        if commands.len() != NUM_JOINTS {
            return Err(HalError::ProtocolViolation(format!(
                "expected {NUM_JOINTS} commands, got {}",
                commands.len()
            )));
        }
        for (i, c) in commands.iter().enumerate() {
            if c.joint_id as usize != i {
                return Err(HalError::ProtocolViolation(format!(
                    "command {i} addressed to joint {}",
                    c.joint_id
                )));
            }
            c.validate()
                .map_err(|reason| HalError::CommandOutOfRange { joint: i, reason })?;
        }
        let h = self.dt / T::lit(SERVO_SUBSTEPS as f64);
        let mut torque = [T::zero(); NUM_JOINTS];
        let mut contact = [false; NUM_JOINTS];
        for _ in 0..SERVO_SUBSTEPS {
            torque = std::array::from_fn(|i| self.applied_torque(i, &commands[i]));
            let mut step = step_plant(&self.plant, &self.params, &torque, h);
            for i in 0..NUM_JOINTS {
                if self.fault_active(FaultKind::JointStuck, i) {
                    step.state.q[i] = self.plant.q[i];
                    step.state.qdot[i] = T::zero();
                    step.limit_contact[i] = false;
                }
                contact[i] |= step.limit_contact[i];
            }
            self.plant.q = step.state.q;
            self.plant.qdot = step.state.qdot;
        }
        for i in 0..NUM_JOINTS {
            if contact[i] {
                self.error_latched[i] = true;
            }
            self.counters[i] += 1;
            self.referencing[i] = (self.referencing[i] + 1).min(REFERENCING_CYCLES);
            self.last_modes[i] = commands[i].mode;
        }
        self.last_torque = torque;
        Ok(self.telemetry())
    }

    /// Telemetry as of the last completed cycle.
    pub fn telemetry(&self) -> [JointTelemetry<T>; NUM_JOINTS] {
        std::array::from_fn(|i| {
            let mut flags = 0;
            if self.referencing[i] >= REFERENCING_CYCLES {
                flags |= StatusFlags::REFERENCED;
            }
            if self.error_latched[i] {
                flags |= StatusFlags::ERROR;
            }
            if self.last_modes[i] != JointMode::Off {
                flags |= StatusFlags::MOTOR_ON;
            }
            JointTelemetry {
                joint_id: i as u8,
                position: self.plant.q[i],
                velocity: self.plant.qdot[i],
                torque: if self.fault_active(FaultKind::TorqueSensorInvalid, i) {
                    T::lit(TORQUE_SENTINEL)
                } else {
                    self.last_torque[i]
                },
                status: StatusFlags(flags),
                cycle_counter: self.counters[i],
            }
        })
    }
}
