//! Fixed-layout little-endian records carried on the link topics.
//!
//! Telemetry, 40 bytes per joint:
//! `joint_id u8 | flags u8 | reserved [u8; 6] | cycle_counter u64 |
//!  position f64 | velocity f64 | torque f64`
//!
//! Command, 40 bytes per joint:
//! `joint_id u8 | mode u8 | reserved [u8; 6] | q_des f64 | tau_des f64 |
//!  stiffness f64 | damping f64`
//!
//! Raw link frame, [`RAW_FRAME_BYTES`] per joint: `joint_id u8 | flags u8 |
//! reserved [u8; 6] | cycle_counter u64 | 18 × f64` diagnostic channels.

use crate::scalar::Real;

use super::{JointCommand, JointMode, JointTelemetry, StatusFlags, NUM_JOINTS};

pub const TELEMETRY_RECORD_BYTES: usize = 40;
pub const COMMAND_RECORD_BYTES: usize = 40;
pub const RAW_FRAME_BYTES: usize = 160;

fn f64_at(b: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

fn u64_at(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

pub fn encode_telemetry<T: Real>(tm: &[JointTelemetry<T>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tm.len() * TELEMETRY_RECORD_BYTES);
    for t in tm {
        out.push(t.joint_id);
        out.push(t.status.0);
        out.extend_from_slice(&[0; 6]);
        out.extend_from_slice(&t.cycle_counter.to_le_bytes());
        for v in [t.position, t.velocity, t.torque] {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn decode_telemetry<T: Real>(b: &[u8]) -> Option<[JointTelemetry<T>; NUM_JOINTS]> {
    if b.len() != NUM_JOINTS * TELEMETRY_RECORD_BYTES {
        return None;
    }
    Some(std::array::from_fn(|i| {
        let r = &b[i * TELEMETRY_RECORD_BYTES..(i + 1) * TELEMETRY_RECORD_BYTES];
        JointTelemetry {
            joint_id: r[0],
            status: StatusFlags(r[1]),
            cycle_counter: u64_at(r, 8),
            position: T::lit(f64_at(r, 16)),
            velocity: T::lit(f64_at(r, 24)),
            torque: T::lit(f64_at(r, 32)),
        }
    }))
}

pub fn encode_commands<T: Real>(cmds: &[JointCommand<T>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(cmds.len() * COMMAND_RECORD_BYTES);
    for c in cmds {
        out.push(c.joint_id);
        out.push(c.mode as u8);
        out.extend_from_slice(&[0; 6]);
        for v in [c.q_des, c.tau_des, c.stiffness, c.damping] {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn decode_commands<T: Real>(b: &[u8]) -> Option<[JointCommand<T>; NUM_JOINTS]> {
    if b.len() != NUM_JOINTS * COMMAND_RECORD_BYTES {
        return None;
    }
    let mut out = JointCommand::all_off();
    for (i, slot) in out.iter_mut().enumerate() {
        let r = &b[i * COMMAND_RECORD_BYTES..(i + 1) * COMMAND_RECORD_BYTES];
        *slot = JointCommand {
            joint_id: r[0],
            mode: JointMode::from_u8(r[1])?,
            q_des: T::lit(f64_at(r, 8)),
            tau_des: T::lit(f64_at(r, 16)),
            stiffness: T::lit(f64_at(r, 24)),
            damping: T::lit(f64_at(r, 32)),
        };
    }
    Some(out)
}

/// Synthetic raw link frames derived from telemetry: encoder counts, motor
/// current, temperatures and the like.
pub fn encode_raw_frames<T: Real>(tm: &[JointTelemetry<T>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tm.len() * RAW_FRAME_BYTES);
    for t in tm {
        out.push(t.joint_id);
        out.push(t.status.0);
        out.extend_from_slice(&[0; 6]);
        out.extend_from_slice(&t.cycle_counter.to_le_bytes());
        let (q, qd, tau) = (t.position.as_f64(), t.velocity.as_f64(), t.torque.as_f64());
        let current = tau / 0.12;
        let channels: [f64; 18] = [
            q,
            qd,
            tau,
            (q * 262_144.0).round(),
            (q * 262_144.0 * 100.0).round(),
            current,
            current * 0.98,
            current * 0.02,
            24.0,
            24.0 - 0.05 * current.abs(),
            35.0 + 0.01 * current * current,
            30.0,
            tau,
            qd * 100.0,
            0.0,
            t.cycle_counter as f64,
            1.0,
            0.0,
        ];
        for c in channels {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}
