use std::fs;
use std::io;
use std::path::Path;

use crate::scalar::Real;

use super::NUM_JOINTS;

/// Joint-space state of the simulated arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState<T> {
    pub q: [T; NUM_JOINTS],
    pub qdot: [T; NUM_JOINTS],
    pub inertia: [T; NUM_JOINTS],
    /// Set once the state has been written to or read from disk.
    pub persisted: bool,
}

/// Fixed plant parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams<T> {
    /// Viscous friction per joint, N·m·s/rad.
    pub friction: T,
    /// Symmetric hard position limit, rad.
    pub hard_limit: T,
}

impl<T: Real> Default for PlantParams<T> {
    fn default() -> Self {
        Self {
            friction: T::lit(0.05),
            hard_limit: T::lit(2.8),
        }
    }
}

impl<T: Real> PlantState<T> {
    pub fn at_rest(q: [T; NUM_JOINTS], inertia: [T; NUM_JOINTS]) -> Self {
        Self {
            q,
            qdot: [T::zero(); NUM_JOINTS],
            inertia,
            persisted: false,
        }
    }

    pub fn kinetic_energy(&self) -> T {
        (0..NUM_JOINTS)
            .map(|i| T::lit(0.5) * self.inertia[i] * self.qdot[i] * self.qdot[i])
            .sum()
    }

    /// Store positions, velocities and inertias as little-endian `f64`.
    pub fn save(&mut self, path: &Path) -> io::Result<()> {
        let mut out = Vec::with_capacity(8 + NUM_JOINTS * 24);
        out.extend_from_slice(b"SDPL");
        out.extend_from_slice(&(NUM_JOINTS as u32).to_le_bytes());
        for i in 0..NUM_JOINTS {
            for v in [self.q[i], self.qdot[i], self.inertia[i]] {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, out)?;
        fs::rename(tmp, path)?;
        self.persisted = true;
        Ok(())
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let bytes = fs::read(path)?;
        let bad = || io::Error::new(io::ErrorKind::InvalidData, "corrupt plant state");
        if bytes.len() != 8 + NUM_JOINTS * 24 || &bytes[..4] != b"SDPL" {
            return Err(bad());
        }
        if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize != NUM_JOINTS {
            return Err(bad());
        }
        let mut vals = bytes[8..]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())));
        let mut s = Self::at_rest([T::zero(); NUM_JOINTS], [T::one(); NUM_JOINTS]);
        for i in 0..NUM_JOINTS {
            s.q[i] = vals.next().unwrap();
            s.qdot[i] = vals.next().unwrap();
            s.inertia[i] = vals.next().unwrap();
        }
        s.persisted = true;
        Ok(s)
    }
}

/// Outcome of one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult<T> {
    pub state: PlantState<T>,
    /// Joints that touched a hard limit during this step.
    pub limit_contact: [bool; NUM_JOINTS],
}

/// Semi-implicit Euler step of independent damped double integrators:
/// `qdot += (tau - b*qdot)/I * dt; q += qdot * dt`. Positions are clamped at
/// the hard limits with the velocity zeroed on contact.
pub fn step_plant<T: Real>(
    state: &PlantState<T>,
    params: &PlantParams<T>,
    torque: &[T; NUM_JOINTS],
    dt: T,
) -> StepResult<T> {
    debug_assert!(dt > T::zero());
    let mut next = *state;
    let mut limit_contact = [false; NUM_JOINTS];
    for i in 0..NUM_JOINTS {
        let acc = (torque[i] - params.friction * state.qdot[i]) / state.inertia[i];
        next.qdot[i] = state.qdot[i] + acc * dt;
        next.q[i] = state.q[i] + next.qdot[i] * dt;
        if next.q[i].abs() > params.hard_limit {
            next.q[i] = params.hard_limit.copysign(next.q[i]);
            next.qdot[i] = T::zero();
            limit_contact[i] = true;
        }
    }
    StepResult {
        state: next,
        limit_contact,
    }
}
