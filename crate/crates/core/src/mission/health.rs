//! Pre-motion telemetry checks.

use serde::{Deserialize, Serialize};

use crate::halsim::{JointTelemetry, NUM_JOINTS};

pub const HEALTH_WINDOW: usize = 10;
pub const HEALTH_TORQUE_LIMIT: f64 = 50.0;
pub const HEALTH_POSITION_LIMIT: f64 = 2.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthFailure {
    NotEnoughData,
    StaleTelemetry,
    PositionOutOfRange,
    NotReferenced,
    TorqueOutOfRange,
}

impl HealthFailure {
    pub fn as_str(self) -> &'static str {
        match self {
            HealthFailure::NotEnoughData => "not_enough_data",
            HealthFailure::StaleTelemetry => "stale_telemetry",
            HealthFailure::PositionOutOfRange => "position_out_of_range",
            HealthFailure::NotReferenced => "not_referenced",
            HealthFailure::TorqueOutOfRange => "torque_out_of_range",
        }
    }

    /// Only torque-dependent phases are affected.
    pub fn is_torque_only(self) -> bool {
        self == HealthFailure::TorqueOutOfRange
    }
}

pub fn torque_valid(window: &[[JointTelemetry<f64>; NUM_JOINTS]]) -> bool {
    window
        .iter()
        .flatten()
        .all(|j| j.torque.is_finite() && j.torque.abs() <= HEALTH_TORQUE_LIMIT)
}

/// Checks the last [`HEALTH_WINDOW`] samples. Torque is checked last so a
/// torque failure means everything else was nominal.
pub fn health_check(window: &[[JointTelemetry<f64>; NUM_JOINTS]]) -> Result<(), HealthFailure> {
    if window.len() < HEALTH_WINDOW {
        return Err(HealthFailure::NotEnoughData);
    }
    let w = &window[window.len() - HEALTH_WINDOW..];
    for pair in w.windows(2) {
        if (0..NUM_JOINTS).any(|i| pair[1][i].cycle_counter <= pair[0][i].cycle_counter) {
            return Err(HealthFailure::StaleTelemetry);
        }
    }
    if w
        .iter()
        .flatten()
        .any(|j| !j.position.is_finite() || j.position.abs() > HEALTH_POSITION_LIMIT)
    {
        return Err(HealthFailure::PositionOutOfRange);
    }
    if !w[w.len() - 1].iter().all(|j| j.status.referenced() && !j.status.error()) {
        return Err(HealthFailure::NotReferenced);
    }
    if !torque_valid(w) {
        return Err(HealthFailure::TorqueOutOfRange);
    }
    Ok(())
}
