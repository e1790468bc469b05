//! 100 Hz joint controller: high-level, interpolator and joint state
//! machines feeding position, impedance and torque laws.

pub mod fsm;
pub mod interpolator;
pub mod laws;
pub mod node;
pub mod trajectory;

pub use crate::halsim::NUM_JOINTS;
pub use fsm::{hl_step, joint_step, joint_target, ControlMode, HighLevel, JointController, JointFsm, JointFsmState, ModeRequest};
pub use interpolator::{ipol_step, GoalRef, InterpolatorGoal, InterpolatorState, IpolOutput, IpolPhase};
pub use laws::{default_damping, impedance_torque, limit_avoidance, GainConfig};
pub use node::ControllerNode;
pub use trajectory::{plan_trapezoidal, PlanError, Trajectory};

use crate::halsim::{JointCommand, JointMode, JointTelemetry, DEFAULT_INERTIA, TORQUE_SENTINEL};
use crate::scalar::Real;

/// Cycles without fresh telemetry tolerated before the loop reports an error.
pub const STALE_LIMIT: u32 = 3;

/// Operator inputs, read once per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams<T> {
    pub mode: ModeRequest,
    pub q_des: [T; NUM_JOINTS],
    pub tau_des: [T; NUM_JOINTS],
    pub gains: GainConfig<T>,
    pub goal: Option<GoalRef<T>>,
}

impl<T: Real> Default for ControllerParams<T> {
    fn default() -> Self {
        Self {
            mode: ModeRequest::Idle,
            q_des: [T::zero(); NUM_JOINTS],
            tau_des: [T::zero(); NUM_JOINTS],
            gains: GainConfig::with_stiffness([T::lit(10.0); NUM_JOINTS], DEFAULT_INERTIA.map(T::lit)),
            goal: None,
        }
    }
}

/// Stiff gains used for position control and holding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionGains<T> {
    pub stiffness: [T; NUM_JOINTS],
    pub damping: [T; NUM_JOINTS],
}

impl<T: Real> Default for PositionGains<T> {
    fn default() -> Self {
        let k = T::lit(200.0);
        Self {
            stiffness: [k; NUM_JOINTS],
            damping: DEFAULT_INERTIA.map(|i| default_damping(k, T::lit(i))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStatus<T> {
    pub high_level: HighLevel,
    pub requested: ModeRequest,
    pub joints: JointFsmState,
    pub ipol_phase: IpolPhase,
    /// max |q_des - q| over joints under position or impedance control.
    pub tracking_error: T,
    pub stale_cycles: u32,
    pub cycle: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutput<T> {
    pub commands: [JointCommand<T>; NUM_JOINTS],
    pub reset_trigger: bool,
    pub error: bool,
    pub plan_error: Option<PlanError>,
    pub status: ControllerStatus<T>,
}

#[derive(Debug, Clone)]
pub struct Controller<T> {
    hl: HighLevel,
    joints: JointFsmState,
    ipol: InterpolatorState<T>,
    position_gains: PositionGains<T>,
    last_tm: Option<[JointTelemetry<T>; NUM_JOINTS]>,
    stale: u32,
    hold: Option<[T; NUM_JOINTS]>,
    cycle: u64,
}

impl<T: Real> Default for Controller<T> {
    fn default() -> Self {
        Self::new(PositionGains::default())
    }
}

impl<T: Real> Controller<T> {
    pub fn new(position_gains: PositionGains<T>) -> Self {
        Self {
            hl: HighLevel::Init,
            joints: [JointFsm::Resetting; NUM_JOINTS],
            ipol: InterpolatorState::default(),
            position_gains,
            last_tm: None,
            stale: 0,
            hold: None,
            cycle: 0,
        }
    }

    pub fn high_level(&self) -> HighLevel {
        self.hl
    }

    pub fn joints(&self) -> &JointFsmState {
        &self.joints
    }

    pub fn interpolator(&self) -> &InterpolatorState<T> {
        &self.ipol
    }

    pub fn last_telemetry(&self) -> Option<&[JointTelemetry<T>; NUM_JOINTS]> {
        self.last_tm.as_ref()
    }

    fn error_present(&self, fresh: bool) -> bool {
        if self.stale > STALE_LIMIT {
            return true;
        }
        let Some(tm) = self.last_tm.as_ref().filter(|_| fresh) else {
            return false;
        };
        if tm.iter().any(|j| j.status.error()) {
            return true;
        }
        // an invalid torque sensor only matters to torque-dependent modes
        let torque_needed = self.hl.mode().is_some_and(ControlMode::uses_torque);
        torque_needed && tm.iter().any(|j| j.torque == T::lit(TORQUE_SENTINEL) || !j.torque.is_finite())
    }

    /// One control period. `telemetry` is `None` when nothing new arrived.
    pub fn cycle(&mut self, telemetry: Option<[JointTelemetry<T>; NUM_JOINTS]>, params: &ControllerParams<T>, now: T) -> CycleOutput<T> {
        self.cycle += 1;
        let fresh = match telemetry {
            Some(tm) if self.last_tm.is_none_or(|old| old[0].cycle_counter != tm[0].cycle_counter) => {
                self.last_tm = Some(tm);
                self.stale = 0;
                true
            }
            _ => {
                self.stale = self.stale.saturating_add(1);
                false
            }
        };
        let error = self.error_present(fresh);
        let hl = hl_step(self.hl, &self.joints, params.mode, error);
        let target = joint_target(hl.state);
        for (i, j) in self.joints.iter_mut().enumerate() {
            let referenced = fresh && self.last_tm.is_some_and(|tm| tm[i].status.referenced());
            let referenced = referenced || (!fresh && j.is_ready() && !error);
            *j = joint_step(*j, referenced, target, hl.reset_trigger);
        }
        self.hl = hl.state;

        let q = self.last_tm.map_or([T::zero(); NUM_JOINTS], |tm| tm.map(|j| j.position));
        let goal = params.goal.as_ref();
        let (ipol, ipol_out, plan_error) = match ipol_step(&self.ipol, self.hl, now, goal, &q) {
            Ok((s, out)) => (s, out, None),
            Err(e) => (interpolator::after_plan_failure(&self.ipol), IpolOutput::Idle, Some(e)),
        };
        self.ipol = ipol;

        let commands = self.commands(params, &q, ipol_out);
        let tracking_error = commands
            .iter()
            .zip(&q)
            .filter(|(c, _)| matches!(c.mode, JointMode::Position | JointMode::Impedance))
            .map(|(c, &qi)| (c.q_des - qi).abs())
            .fold(T::zero(), T::max);
        CycleOutput {
            commands,
            reset_trigger: hl.reset_trigger,
            error,
            plan_error,
            status: ControllerStatus {
                high_level: self.hl,
                requested: params.mode,
                joints: self.joints,
                ipol_phase: self.ipol.phase,
                tracking_error,
                stale_cycles: self.stale,
                cycle: self.cycle,
            },
        }
    }

    fn hold_at(&mut self, q: &[T; NUM_JOINTS]) -> [T; NUM_JOINTS] {
        *self.hold.get_or_insert(*q)
    }

    fn commands(&mut self, params: &ControllerParams<T>, q: &[T; NUM_JOINTS], ipol_out: IpolOutput<T>) -> [JointCommand<T>; NUM_JOINTS] {
        let mut cmds = JointCommand::all_off();
        if self.hl == HighLevel::Init {
            self.hold = None;
            return cmds;
        }
        let pg = self.position_gains;
        let position = |q_des: [T; NUM_JOINTS]| -> [JointCommand<T>; NUM_JOINTS] {
            std::array::from_fn(|i| JointCommand {
                joint_id: i as u8,
                mode: JointMode::Position,
                q_des: q_des[i],
                tau_des: T::zero(),
                stiffness: pg.stiffness[i],
                damping: pg.damping[i],
            })
        };
        let g = params.gains;
        let impedance = |q_des: [T; NUM_JOINTS]| -> [JointCommand<T>; NUM_JOINTS] {
            std::array::from_fn(|i| JointCommand {
                joint_id: i as u8,
                mode: JointMode::Impedance,
                q_des: q_des[i],
                tau_des: T::zero(),
                stiffness: g.stiffness[i],
                damping: g.damping[i],
            })
        };
        let raw = match self.hl.mode() {
            None => position(self.hold_at(q)),
            Some(ControlMode::ManualPosition) => {
                self.hold = None;
                position(params.q_des)
            }
            Some(ControlMode::ManualImpedance) => {
                self.hold = None;
                impedance(params.q_des)
            }
            Some(ControlMode::ManualTorque) => {
                self.hold = None;
                std::array::from_fn(|i| JointCommand {
                    joint_id: i as u8,
                    mode: JointMode::Torque,
                    tau_des: params.tau_des[i],
                    ..JointCommand::off(i as u8)
                })
            }
            Some(ControlMode::Interpolator) => match ipol_out {
                IpolOutput::Idle => position(self.hold_at(q)),
                IpolOutput::Targets(t) => {
                    self.hold = None;
                    position(t)
                }
            },
            Some(ControlMode::VirtualFixtures) => impedance(self.hold_at(q)),
        };
        for i in 0..NUM_JOINTS {
            if self.joints[i].is_ready() {
                cmds[i] = limit_avoidance(&raw[i], q[i], &params.gains);
            }
        }
        cmds
    }
}
