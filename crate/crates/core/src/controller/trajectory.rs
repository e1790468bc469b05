//! Time-synchronised trapezoidal joint trajectories.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("infeasible plan: vmax and amax must be positive and finite")]
    Infeasible,
    #[error("start and goal have different joint counts")]
    DimensionMismatch,
    #[error("non-finite start or goal")]
    NonFinite,
}

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T> {
    pub pos: T,
    pub vel: T,
    pub acc: T,
}

/// Rest-to-rest trapezoid (or triangle) for a single joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidProfile<T> {
    pub q0: T,
    pub qf: T,
    /// Peak speed, non-negative.
    pub v_peak: T,
    pub accel: T,
    pub t_acc: T,
    pub duration: T,
}

/// Shortest rest-to-rest duration for distance `d` under the limits.
pub fn min_duration<T: Real>(d: T, vmax: T, amax: T) -> T {
    if d <= T::zero() {
        T::zero()
    } else if d <= vmax * vmax / amax {
        T::lit(2.0) * (d / amax).sqrt()
    } else {
        d / vmax + vmax / amax
    }
}

impl<T: Real> TrapezoidProfile<T> {
    /// Profile from `q0` to `qf` lasting exactly `duration`, which must be at
    /// least [`min_duration`]. Acceleration stays at `amax`; the cruise speed
    /// is lowered to fit.
    pub fn stretched(q0: T, qf: T, amax: T, duration: T) -> Self {
        let d = (qf - q0).abs();
        if d == T::zero() || duration <= T::zero() {
            return Self {
                q0,
                qf,
                v_peak: T::zero(),
                accel: amax,
                t_acc: T::zero(),
                duration,
            };
        }
        let two = T::lit(2.0);
        // v = (a T - sqrt(a^2 T^2 - 4 a d)) / 2, in a cancellation-free form
        let disc = (duration * duration - T::lit(4.0) * d / amax).max(T::zero());
        let v = two * d / (duration + disc.sqrt());
        let t_acc = (v / amax).min(duration / two);
        Self {
            q0,
            qf,
            v_peak: v,
            accel: amax,
            t_acc,
            duration,
        }
    }

    pub fn sample(&self, t: T) -> Sample<T> {
        let half = T::lit(0.5);
        let zero = T::zero();
        if t <= zero {
            return Sample { pos: self.q0, vel: zero, acc: zero };
        }
        if t >= self.duration {
            return Sample { pos: self.qf, vel: zero, acc: zero };
        }
        let dir = if self.qf >= self.q0 { T::one() } else { -T::one() };
        let (a, v, ta, tf) = (self.accel, self.v_peak, self.t_acc, self.duration);
        if t < ta {
            Sample {
                pos: self.q0 + dir * half * a * t * t,
                vel: dir * a * t,
                acc: dir * a,
            }
        } else if t <= tf - ta {
            Sample {
                pos: self.q0 + dir * (v * t - half * v * ta),
                vel: dir * v,
                acc: zero,
            }
        } else {
            let r = tf - t;
            Sample {
                pos: self.qf - dir * half * a * r * r,
                vel: dir * a * r,
                acc: -dir * a,
            }
        }
    }

    /// Times at which the acceleration is discontinuous.
    pub fn breakpoints(&self) -> [T; 2] {
        [self.t_acc, self.duration - self.t_acc]
    }
}

/// Multi-joint trajectory; all joints share one duration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub joints: Vec<TrapezoidProfile<T>>,
    pub duration: T,
    pub vmax: T,
    pub amax: T,
}

impl<T: Real> Trajectory<T> {
    pub fn sample(&self, t: T) -> Vec<Sample<T>> {
        self.joints.iter().map(|j| j.sample(t)).collect()
    }

    pub fn positions(&self, t: T) -> Vec<T> {
        self.joints.iter().map(|j| j.sample(t).pos).collect()
    }

    pub fn goal(&self) -> Vec<T> {
        self.joints.iter().map(|j| j.qf).collect()
    }
}

/// Plan a time-synchronised trapezoidal trajectory: every joint is stretched
/// to the duration of the slowest one.
pub fn plan_trapezoidal<T: Real>(q0: &[T], qf: &[T], vmax: T, amax: T) -> Result<Trajectory<T>, PlanError> {
    if !(vmax > T::zero() && amax > T::zero() && vmax.is_finite() && amax.is_finite()) {
        return Err(PlanError::Infeasible);
    }
    if q0.len() != qf.len() {
        return Err(PlanError::DimensionMismatch);
    }
    if q0.iter().chain(qf).any(|v| !v.is_finite()) {
        return Err(PlanError::NonFinite);
    }
    let duration = q0
        .iter()
        .zip(qf)
        .map(|(&a, &b)| min_duration((b - a).abs(), vmax, amax))
        .fold(T::zero(), T::max);
    let joints = q0
        .iter()
        .zip(qf)
        .map(|(&a, &b)| TrapezoidProfile::stretched(a, b, amax, duration))
        .collect();
    Ok(Trajectory {
        joints,
        duration,
        vmax,
        amax,
    })
}
