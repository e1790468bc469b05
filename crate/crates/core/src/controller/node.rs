use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::bus::{Bus, BusError, ParamValue, ServiceSpec, Subscription, TopicSpec};
use crate::halsim::records::{decode_telemetry, encode_commands};
use crate::halsim::{CMD_TOPIC, CONFIGURE_SERVICE, DEFAULT_INERTIA, TELEMETRY_TOPIC};

use super::{
    impedance_torque, ControlMode, Controller, ControllerParams, CycleOutput, GainConfig, GoalRef, InterpolatorGoal,
    ModeRequest, NUM_JOINTS,
};

pub const STATE_TOPIC: &str = "controller/state";
pub const SIGNALS_TOPIC: &str = "controller/signals";
pub const MODE_PARAM: &str = "controller/mode";
pub const Q_DES_PARAM: &str = "controller/q_des";
pub const TAU_DES_PARAM: &str = "controller/tau_des";
pub const GAINS_PARAM: &str = "controller/gains";
pub const GOAL_PARAM: &str = "controller/goal";
pub const PLAN_SERVICE: &str = "controller/plan";

pub const STATE_RECORD_BYTES: usize = 64;
pub const SIGNAL_COUNT: usize = 63;

const HARD_LIMIT: f64 = 2.8;

#[derive(Debug, Deserialize)]
struct PlanRequest {
    qf: [f64; NUM_JOINTS],
    vmax: f64,
    amax: f64,
}

/// `controller/state` record: high level, requested mode, joint states,
/// interpolator phase, tracking error, cycle.
pub fn encode_state(out: &CycleOutput<f64>) -> Vec<u8> {
    let s = &out.status;
    let mut b = Vec::with_capacity(STATE_RECORD_BYTES);
    b.push(s.high_level.code());
    b.push(s.high_level.mode().map_or(0xff, mode_code));
    b.push(match s.requested {
        ModeRequest::Idle => 0xff,
        ModeRequest::Mode(m) => mode_code(m),
    });
    b.push(s.ipol_phase.code());
    b.extend(s.joints.iter().map(|j| j.code()));
    b.push(out.error as u8);
    b.push(out.reset_trigger as u8);
    b.push(out.plan_error.is_some() as u8);
    b.push(0);
    b.extend_from_slice(&s.stale_cycles.to_le_bytes());
    b.extend_from_slice(&s.cycle.to_le_bytes());
    b.extend_from_slice(&s.tracking_error.to_le_bytes());
    for c in &out.commands {
        b.extend_from_slice(&(c.q_des as f32).to_le_bytes());
    }
    for c in &out.commands {
        b.push(c.mode as u8);
    }
    b.resize(STATE_RECORD_BYTES, 0);
    b
}

/// The fields of a `controller/state` record the mission needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRecord {
    pub high_level: u8,
    pub ipol_phase: u8,
    pub error: bool,
    pub plan_error: bool,
    pub stale_cycles: u32,
    pub cycle: u64,
    pub tracking_error: f64,
}

pub fn decode_state(b: &[u8]) -> Option<StateRecord> {
    if b.len() != STATE_RECORD_BYTES {
        return None;
    }
    Some(StateRecord {
        high_level: b[0],
        ipol_phase: b[3],
        error: b[8] != 0,
        plan_error: b[10] != 0,
        stale_cycles: u32::from_le_bytes(b[12..16].try_into().ok()?),
        cycle: u64::from_le_bytes(b[16..24].try_into().ok()?),
        tracking_error: f64::from_le_bytes(b[24..32].try_into().ok()?),
    })
}

fn mode_code(m: ControlMode) -> u8 {
    ControlMode::ALL.iter().position(|x| *x == m).unwrap_or(0xff) as u8
}

/// Register the controller topics and the link topics it uses.
pub fn declare_topics(bus: &Bus) -> Result<(), BusError> {
    crate::halsim::node::declare_topics(bus)?;
    bus.ensure_topic(TopicSpec::new(STATE_TOPIC, "controller/state/v1", 100.0))?;
    bus.ensure_topic(TopicSpec::new(SIGNALS_TOPIC, "controller/signals/v1", 100.0))?;
    Ok(())
}

pub struct ControllerNode {
    bus: Bus,
    ctrl: Controller<f64>,
    telemetry: Subscription,
    last_goal_version: u64,
    goal: Option<GoalRef<f64>>,
    commands_published: u64,
}

impl ControllerNode {
    pub fn attach(bus: &Bus) -> Result<Self, BusError> {
        declare_topics(bus)?;
        let defaults = ControllerParams::<f64>::default();
        bus.declare_parameter(MODE_PARAM, ParamValue::Str("idle".into()), true);
        bus.declare_parameter(Q_DES_PARAM, ParamValue::FloatArray(vec![0.0; NUM_JOINTS]), true);
        bus.declare_parameter(TAU_DES_PARAM, ParamValue::FloatArray(vec![0.0; NUM_JOINTS]), true);
        bus.declare_parameter(GAINS_PARAM, ParamValue::FloatArray(defaults.gains.to_vec()), true);
        bus.declare_parameter(GOAL_PARAM, ParamValue::FloatArray(Vec::new()), true);
        if bus.service_spec(PLAN_SERVICE).is_none() {
            bus.register_service(ServiceSpec::new(PLAN_SERVICE, "json/plan", "json/result"))?;
        }
        let b = bus.clone();
        bus.attach_handler(PLAN_SERVICE, move |req| {
            let reply = match serde_json::from_slice::<PlanRequest>(req) {
                Ok(p) => {
                    let mut v = p.qf.to_vec();
                    v.extend([p.vmax, p.amax]);
                    match b.set_parameter(GOAL_PARAM, ParamValue::FloatArray(v)) {
                        Ok(()) => json!({"ok": true, "goal_id": b.parameter_version(GOAL_PARAM).unwrap_or(0)}),
                        Err(e) => json!({"ok": false, "error": e.to_string()}),
                    }
                }
                Err(e) => json!({"ok": false, "error": e.to_string()}),
            };
            reply.to_string().into_bytes()
        })?;
        Ok(Self {
            bus: bus.clone(),
            ctrl: Controller::default(),
            telemetry: bus.subscribe(TELEMETRY_TOPIC)?,
            last_goal_version: 0,
            goal: None,
            commands_published: 0,
        })
    }

    pub fn controller(&self) -> &Controller<f64> {
        &self.ctrl
    }

    pub fn commands_published(&self) -> u64 {
        self.commands_published
    }

    /// Parameters as seen at this cycle boundary. Malformed values keep
    /// the previous setting.
    fn read_params(&mut self, prev: &ControllerParams<f64>) -> ControllerParams<f64> {
        let mut p = prev.clone();
        if let Some(m) = self
            .bus
            .get_parameter(MODE_PARAM)
            .ok()
            .and_then(|v| v.as_str().and_then(ModeRequest::parse))
        {
            p.mode = m;
        }
        let arr = |name: &str| -> Option<[f64; NUM_JOINTS]> {
            let v = self.bus.get_parameter(name).ok()?;
            let a = v.as_array()?;
            (a.len() == NUM_JOINTS && a.iter().all(|x| x.is_finite())).then(|| std::array::from_fn(|i| a[i]))
        };
        if let Some(q) = arr(Q_DES_PARAM) {
            p.q_des = q;
        }
        if let Some(t) = arr(TAU_DES_PARAM) {
            p.tau_des = t;
        }
        if let Some(g) = self
            .bus
            .get_parameter(GAINS_PARAM)
            .ok()
            .and_then(|v| v.as_array().and_then(|a| GainConfig::from_slice(a, HARD_LIMIT)))
            .filter(|g| g.validate().is_ok())
        {
            p.gains = g;
        }
        let version = self.bus.parameter_version(GOAL_PARAM).unwrap_or(0);
        if version != self.last_goal_version {
            self.last_goal_version = version;
            self.goal = self.bus.get_parameter(GOAL_PARAM).ok().and_then(|v| {
                let a = v.as_array()?;
                (a.len() == NUM_JOINTS + 2).then(|| GoalRef {
                    id: version,
                    goal: InterpolatorGoal {
                        qf: std::array::from_fn(|i| a[i]),
                        vmax: a[NUM_JOINTS],
                        amax: a[NUM_JOINTS + 1],
                    },
                })
            });
        }
        p.goal = self.goal;
        p
    }

    /// One 10 ms tick: read telemetry and parameters, run the controller and
    /// publish exactly one command set.
    pub fn step(&mut self, now: Duration, params: &mut ControllerParams<f64>) -> CycleOutput<f64> {
        *params = self.read_params(params);
        let tm = self
            .telemetry
            .drain()
            .into_iter()
            .rev()
            .find_map(|m| decode_telemetry::<f64>(&m.payload));
        let t = now.as_secs_f64();
        let out = self.ctrl.cycle(tm, params, t);
        if out.reset_trigger && self.bus.service_spec(CONFIGURE_SERVICE).is_some() {
            let _ = self.bus.call_service(CONFIGURE_SERVICE, b"", Duration::from_secs(1));
        }
        if self.bus.publish(CMD_TOPIC, &encode_commands(&out.commands), now).is_ok() {
            self.commands_published += 1;
        }
        let _ = self.bus.publish(STATE_TOPIC, &encode_state(&out), now);
        let _ = self.bus.publish(SIGNALS_TOPIC, &self.signals(&out, params, t), now);
        out
    }

    fn signals(&self, out: &CycleOutput<f64>, params: &ControllerParams<f64>, t: f64) -> Vec<u8> {
        let tm = self.ctrl.last_telemetry();
        let q = tm.map_or([0.0; NUM_JOINTS], |tm| tm.map(|j| j.position));
        let qdot = tm.map_or([0.0; NUM_JOINTS], |tm| tm.map(|j| j.velocity));
        let tau = tm.map_or([0.0; NUM_JOINTS], |tm| tm.map(|j| j.torque));
        let reference = self.ctrl.interpolator().reference(t);
        let refs = |f: fn(&super::trajectory::Sample<f64>) -> f64| -> Vec<f64> {
            reference
                .as_ref()
                .map_or(vec![0.0; NUM_JOINTS], |r| r.iter().map(f).collect())
        };
        let q_des = out.commands.map(|c| c.q_des);
        let mut v: Vec<f64> = Vec::with_capacity(SIGNAL_COUNT);
        v.extend(q);
        v.extend(qdot);
        v.extend(tau);
        v.extend(q_des);
        v.extend(out.commands.map(|c| c.tau_des));
        v.extend(out.commands.map(|c| c.stiffness));
        v.extend(out.commands.map(|c| c.damping));
        v.extend(refs(|s| s.pos));
        v.extend(refs(|s| s.vel));
        v.extend(refs(|s| s.acc));
        v.extend((0..NUM_JOINTS).map(|i| q_des[i] - q[i]));
        v.extend(impedance_torque(&q, &qdot, &q_des, &params.gains));
        v.extend(DEFAULT_INERTIA);
        v.extend(out.commands.map(|c| c.mode as u8 as f64));
        v.extend([
            t,
            out.status.high_level.code() as f64,
            out.status.ipol_phase.code() as f64,
            out.status.tracking_error,
            out.status.stale_cycles as f64,
            out.status.cycle as f64,
            self.last_goal_version as f64,
        ]);
        debug_assert_eq!(v.len(), SIGNAL_COUNT);
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }
}
