use thiserror::Error;

use crate::halsim::{JointCommand, JointMode};
use crate::scalar::Real;

use super::NUM_JOINTS;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid gains: {0}")]
pub struct GainError(pub String);

/// Per-joint impedance gains and joint-limit avoidance settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainConfig<T> {
    /// N·m/rad
    pub stiffness: [T; NUM_JOINTS],
    /// N·m·s/rad
    pub damping: [T; NUM_JOINTS],
    /// Distance of the soft limit inside the hard limit, rad.
    pub margin: T,
    /// Push-back gain beyond the soft limit, N·m/rad.
    pub limit_gain: T,
    pub hard_limit: T,
}

/// Near-critical damping `2·sqrt(K·I)·0.7`.
pub fn default_damping<T: Real>(stiffness: T, inertia: T) -> T {
    T::lit(2.0) * (stiffness * inertia).sqrt() * T::lit(0.7)
}

impl<T: Real> GainConfig<T> {
    pub fn with_stiffness(stiffness: [T; NUM_JOINTS], inertia: [T; NUM_JOINTS]) -> Self {
        Self {
            stiffness,
            damping: std::array::from_fn(|i| default_damping(stiffness[i], inertia[i])),
            margin: T::lit(0.1),
            limit_gain: T::lit(20.0),
            hard_limit: T::lit(2.8),
        }
    }

    pub fn soft_limit(&self) -> T {
        self.hard_limit - self.margin
    }

    pub fn validate(&self) -> Result<(), GainError> {
        if self.stiffness.iter().chain(&self.damping).any(|g| !(*g >= T::zero()) || !g.is_finite()) {
            return Err(GainError("stiffness and damping must be finite and >= 0".into()));
        }
        if !(self.margin > T::zero() && self.margin < self.hard_limit) {
            return Err(GainError("margin must lie in (0, hard limit)".into()));
        }
        if !(self.limit_gain >= T::zero()) {
            return Err(GainError("limit gain must be >= 0".into()));
        }
        Ok(())
    }

    /// Flat parameter layout: `[K0..K3, D0..D3, margin, limit_gain]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.stiffness
            .iter()
            .chain(&self.damping)
            .chain([&self.margin, &self.limit_gain])
            .map(|v| v.as_f64())
            .collect()
    }

    pub fn from_slice(v: &[f64], hard_limit: T) -> Option<Self> {
        if v.len() != 2 * NUM_JOINTS + 2 {
            return None;
        }
        Some(Self {
            stiffness: std::array::from_fn(|i| T::lit(v[i])),
            damping: std::array::from_fn(|i| T::lit(v[NUM_JOINTS + i])),
            margin: T::lit(v[2 * NUM_JOINTS]),
            limit_gain: T::lit(v[2 * NUM_JOINTS + 1]),
            hard_limit,
        })
    }
}

/// `tau_i = K_i (q_des_i - q_i) - D_i qdot_i`
pub fn impedance_torque<T: Real>(
    q: &[T; NUM_JOINTS],
    qdot: &[T; NUM_JOINTS],
    q_des: &[T; NUM_JOINTS],
    gains: &GainConfig<T>,
) -> [T; NUM_JOINTS] {
    std::array::from_fn(|i| gains.stiffness[i] * (q_des[i] - q[i]) - gains.damping[i] * qdot[i])
}

/// Keep a joint command inside the soft limits. Position and impedance
/// targets are clamped; in torque mode a spring pushes the joint back once
/// it is beyond the soft limit.
pub fn limit_avoidance<T: Real>(cmd: &JointCommand<T>, q: T, gains: &GainConfig<T>) -> JointCommand<T> {
    let soft = gains.soft_limit();
    let mut out = *cmd;
    match cmd.mode {
        JointMode::Position | JointMode::Impedance => {
            out.q_des = cmd.q_des.max(-soft).min(soft);
        }
        JointMode::Torque => {
            if q > soft {
                out.tau_des = cmd.tau_des - gains.limit_gain * (q - soft);
            } else if q < -soft {
                out.tau_des = cmd.tau_des - gains.limit_gain * (q + soft);
            }
        }
        JointMode::Off => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gains(k: f64, d: f64) -> GainConfig<f64> {
        GainConfig {
            stiffness: [k; 4],
            damping: [d; 4],
            margin: 0.1,
            limit_gain: 20.0,
            hard_limit: 2.8,
        }
    }

    #[test]
    fn impedance_law() {
        assert_eq!(impedance_torque(&[0.4; 4], &[0.0; 4], &[0.4; 4], &gains(10.0, 1.0)), [0.0; 4]);
        let tau = impedance_torque(&[0.0; 4], &[0.2; 4], &[0.1; 4], &gains(10.0, 1.0));
        // 10*0.1 - 1*0.2
        assert!((tau[0] - 0.8).abs() < 1e-15);
        assert_eq!(impedance_torque(&[1.0; 4], &[3.0; 4], &[-2.0; 4], &gains(0.0, 0.0)), [0.0; 4]);
    }

    #[test]
    fn position_target_is_clamped() {
        let cmd = JointCommand {
            mode: JointMode::Position,
            q_des: 3.0,
            ..JointCommand::off(0)
        };
        let out = limit_avoidance(&cmd, 0.0, &gains(10.0, 1.0));
        assert!((out.q_des - 2.7).abs() < 1e-15);
    }

    #[test]
    fn torque_pushback_beyond_soft_limit() {
        let cmd = JointCommand {
            mode: JointMode::Torque,
            ..JointCommand::off(0)
        };
        let out = limit_avoidance(&cmd, 2.75, &gains(10.0, 1.0));
        // -20 * (2.75 - 2.70)
        assert!((out.tau_des + 1.0).abs() < 1e-12);
        let out = limit_avoidance(&cmd, -2.75, &gains(10.0, 1.0));
        assert!((out.tau_des - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inside_limits_is_identity() {
        let g = gains(10.0, 1.0);
        for mode in [JointMode::Off, JointMode::Position, JointMode::Impedance, JointMode::Torque] {
            let cmd = JointCommand {
                mode,
                q_des: 0.5,
                tau_des: 1.5,
                stiffness: 10.0,
                damping: 1.0,
                joint_id: 2,
            };
            assert_eq!(limit_avoidance(&cmd, 0.3, &g), cmd);
        }
    }

    #[test]
    fn validation_and_flat_layout() {
        let g = gains(10.0, 3.0);
        g.validate().unwrap();
        assert_eq!(GainConfig::from_slice(&g.to_vec(), 2.8), Some(g));
        let mut bad = g;
        bad.margin = 3.0;
        assert!(bad.validate().is_err());
        bad = g;
        bad.stiffness[1] = -1.0;
        assert!(bad.validate().is_err());
        assert!((default_damping(10.0, 1.0) - 2.0 * 10f64.sqrt() * 0.7).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn outputs_stay_inside_soft_range(
            q_des in -10.0f64..10.0,
            q in -2.8f64..2.8,
            tau in -5.0f64..5.0,
            pos_mode in any::<bool>(),
        ) {
            let g = gains(10.0, 1.0);
            let mode = if pos_mode { JointMode::Position } else { JointMode::Impedance };
            let cmd = JointCommand { mode, q_des, ..JointCommand::off(0) };
            let out = limit_avoidance(&cmd, q, &g);
            prop_assert!(out.q_des.abs() <= g.soft_limit());
            let tcmd = JointCommand { mode: JointMode::Torque, tau_des: tau, ..JointCommand::off(0) };
            let corr = limit_avoidance(&tcmd, q, &g).tau_des - tau;
            if q.abs() <= g.soft_limit() {
                prop_assert_eq!(corr, 0.0);
            } else {
                prop_assert_eq!(corr.signum(), -q.signum());
            }
        }
    }
}
