//! Interpolator sub-state of the READY/INTERPOLATOR mode.
//!
//! Planning is observable for exactly one cycle: a goal seen in UNPLANNED
//! moves to PLANNING (outputs idle), and the next cycle computes the plan
//! and starts RUNNING. Leaving INTERPOLATOR mode discards the plan; the
//! next entry replans from the then-current joint positions.

use crate::scalar::Real;

use super::fsm::{ControlMode, HighLevel};
use super::trajectory::{plan_trapezoidal, PlanError, Sample, Trajectory};
use super::NUM_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IpolPhase {
    Unplanned,
    Planning,
    Running,
    Done,
}

impl IpolPhase {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolatorGoal<T> {
    pub qf: [T; NUM_JOINTS],
    pub vmax: T,
    pub amax: T,
}

/// Goal with the identity of the request that set it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalRef<T> {
    pub id: u64,
    pub goal: InterpolatorGoal<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatorState<T> {
    pub phase: IpolPhase,
    pub trajectory: Option<Trajectory<T>>,
    start_time: T,
    start_q: [T; NUM_JOINTS],
    goal_id: Option<u64>,
    failed_goal: Option<u64>,
}

impl<T: Real> Default for InterpolatorState<T> {
    fn default() -> Self {
        Self {
            phase: IpolPhase::Unplanned,
            trajectory: None,
            start_time: T::zero(),
            start_q: [T::zero(); NUM_JOINTS],
            goal_id: None,
            failed_goal: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IpolOutput<T> {
    /// Hold position; the high level emits idle outputs.
    Idle,
    Targets([T; NUM_JOINTS]),
}

impl<T: Real> InterpolatorState<T> {
    /// Reference sample of the active trajectory at `now`.
    pub fn reference(&self, now: T) -> Option<Vec<Sample<T>>> {
        let tr = self.trajectory.as_ref()?;
        Some(tr.sample((now - self.start_time).max(T::zero())))
    }

    pub fn goal_id(&self) -> Option<u64> {
        self.goal_id
    }

    fn planning(&self, q: &[T; NUM_JOINTS], id: u64) -> Self {
        Self {
            phase: IpolPhase::Planning,
            trajectory: None,
            start_q: *q,
            goal_id: Some(id),
            ..self.clone()
        }
    }
}

pub fn ipol_step<T: Real>(
    s: &InterpolatorState<T>,
    hl: HighLevel,
    now: T,
    goal: Option<&GoalRef<T>>,
    q: &[T; NUM_JOINTS],
) -> Result<(InterpolatorState<T>, IpolOutput<T>), PlanError> {
    if hl != HighLevel::Ready(ControlMode::Interpolator) {
        let reset = InterpolatorState {
            failed_goal: s.failed_goal,
            ..InterpolatorState::default()
        };
        return Ok((reset, IpolOutput::Idle));
    }
    let fresh_goal = goal.filter(|g| Some(g.id) != s.failed_goal);
    match s.phase {
        IpolPhase::Unplanned => Ok(match fresh_goal {
            Some(g) => (s.planning(q, g.id), IpolOutput::Idle),
            None => (s.clone(), IpolOutput::Idle),
        }),
        IpolPhase::Planning => {
            let Some(g) = goal.filter(|g| Some(g.id) == s.goal_id) else {
                // goal withdrawn or replaced while planning
                return Ok(match fresh_goal {
                    Some(g) => (s.planning(q, g.id), IpolOutput::Idle),
                    None => (InterpolatorState::default(), IpolOutput::Idle),
                });
            };
            match plan_trapezoidal(&s.start_q, &g.goal.qf, g.goal.vmax, g.goal.amax) {
                Ok(tr) => {
                    let first = to_array(&tr.positions(T::zero()));
                    let next = InterpolatorState {
                        phase: IpolPhase::Running,
                        trajectory: Some(tr),
                        start_time: now,
                        ..s.clone()
                    };
                    Ok((next, IpolOutput::Targets(first)))
                }
                Err(e) => Err(e),
            }
        }
        IpolPhase::Running | IpolPhase::Done => {
            if let Some(g) = fresh_goal.filter(|g| Some(g.id) != s.goal_id) {
                return Ok((s.planning(q, g.id), IpolOutput::Idle));
            }
            let tr = s.trajectory.as_ref().expect("running implies a trajectory");
            let t = now - s.start_time;
            if t >= tr.duration {
                let next = InterpolatorState {
                    phase: IpolPhase::Done,
                    ..s.clone()
                };
                Ok((next, IpolOutput::Targets(to_array(&tr.goal()))))
            } else {
                Ok((s.clone(), IpolOutput::Targets(to_array(&tr.positions(t)))))
            }
        }
    }
}

/// Interpolator state after a failed plan: stays unplanned until a new goal.
pub fn after_plan_failure<T: Real>(s: &InterpolatorState<T>) -> InterpolatorState<T> {
    InterpolatorState {
        failed_goal: s.goal_id,
        ..InterpolatorState::default()
    }
}

fn to_array<T: Real>(v: &[T]) -> [T; NUM_JOINTS] {
    std::array::from_fn(|i| v[i])
}
