//! The mission script: start handshake, power-up, health check, demo cycles
//! and sleep, stepped once per tick.
//!
//! The motion waypoints are a representative sequence, not flight values.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bus::{Bus, BusError, ParamValue, ServiceSpec, Subscription};
use crate::camsim::node::{RECORD_VIDEO_SERVICE, SELECT_SERVICE, TAKE_IMAGE_SERVICE};
use crate::camsim::{weighted_pick, CameraId};
use crate::controller::node::{decode_state, StateRecord, MODE_PARAM, PLAN_SERVICE, Q_DES_PARAM, STATE_TOPIC};
use crate::controller::{ControlMode, ModeRequest};
use crate::halsim::records::decode_telemetry;
use crate::halsim::{JointTelemetry, NUM_JOINTS, TELEMETRY_TOPIC};

use super::handshake::{StartMode, StartSource};
use super::health::{health_check, torque_valid, HEALTH_WINDOW};
use super::watchdog::PET_SERVICE;
use super::{EventKind, EventLog, MissionConfig, PersistentState, STATUS_SERVICE};

const CALL_TIMEOUT: Duration = Duration::from_secs(5);
const MOVE_TIMEOUT: Duration = Duration::from_secs(15);
const SETTLE_TIMEOUT: Duration = Duration::from_secs(1);
const SETTLE_TOLERANCE: f64 = 0.02;
/// Link configuration plus referencing plus one health window.
const WARM_UP: Duration = Duration::from_millis(300);
const MOVE_VMAX: f64 = 0.6;
const MOVE_AMAX: f64 = 1.2;

const UNFOLD: [f64; NUM_JOINTS] = [0.0, -0.6, 1.2, 0.0];
const VIEW: [f64; NUM_JOINTS] = [0.4, -0.9, 1.0, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Position,
    Excitation,
    TorqueGate,
    Impedance,
    VirtualFixtures,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Position => "position",
            Phase::Excitation => "excitation",
            Phase::TorqueGate => "torque_gate",
            Phase::Impedance => "impedance",
            Phase::VirtualFixtures => "virtual_fixtures",
        }
    }

    /// Share of the motion time.
    fn share(self) -> f64 {
        match self {
            Phase::Position => 0.3,
            Phase::Excitation => 0.3,
            Phase::TorqueGate => 0.0,
            Phase::Impedance => 0.25,
            Phase::VirtualFixtures => 0.15,
        }
    }

    fn needs_torque(self) -> bool {
        matches!(self, Phase::Impedance | Phase::VirtualFixtures)
    }

    /// Failures here leave the arm in an unknown state.
    fn reboot_on_failure(self) -> bool {
        matches!(self, Phase::Position | Phase::Excitation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseOutcome {
    Completed,
    Skipped,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub generation: u32,
    pub cycle: u32,
    pub phase: Phase,
    pub start: Duration,
    pub end: Duration,
    pub outcome: PhaseOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    Begin(Phase),
    End,
    Mode(ModeRequest),
    /// Set `q_des` to the measured position plus an offset.
    HoldOffset([f64; NUM_JOINTS]),
    Move([f64; NUM_JOINTS]),
    Image,
    Video,
    Gate,
    /// Flight seconds.
    Wait(f64),
}

fn add(a: [f64; NUM_JOINTS], b: [f64; NUM_JOINTS]) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|i| a[i] + b[i])
}

fn demo_script() -> Vec<Step> {
    use Step::*;
    let interp = ModeRequest::Mode(ControlMode::Interpolator);
    vec![
        Begin(Phase::Position),
        Mode(interp),
        Video,
        Move(UNFOLD),
        Image,
        Move(VIEW),
        Image,
        End,
        Begin(Phase::Excitation),
        Move(add(VIEW, [0.3, 0.0, 0.0, 0.0])),
        Image,
        Move(add(VIEW, [0.0, 0.3, -0.3, 0.0])),
        Image,
        Move(add(VIEW, [0.0, 0.0, 0.0, 0.6])),
        Move(VIEW),
        Image,
        End,
        Begin(Phase::TorqueGate),
        Gate,
        End,
        Begin(Phase::Impedance),
        HoldOffset([0.0; NUM_JOINTS]),
        Mode(ModeRequest::Mode(ControlMode::ManualImpedance)),
        Wait(30.0),
        HoldOffset([0.1; NUM_JOINTS]),
        Wait(90.0),
        HoldOffset([-0.1; NUM_JOINTS]),
        Wait(90.0),
        End,
        Begin(Phase::VirtualFixtures),
        HoldOffset([0.0; NUM_JOINTS]),
        Mode(ModeRequest::Mode(ControlMode::VirtualFixtures)),
        Wait(60.0),
        End,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AwaitStart,
    PoweringUp,
    WarmUp,
    Demo,
    Sleeping,
    GroundTest,
    Finished,
    Rebooting,
}

/// What the mission needs from the system around it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MissionRequest {
    /// Start the power, HAL and controller processes.
    PowerUp,
    Reboot(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissionStatus {
    pub generation: u32,
    pub stage: Stage,
    pub mode: Option<StartMode>,
    pub cycles_completed: u32,
    pub torque_ok: bool,
    pub camera: Option<CameraId>,
    pub phase: Option<Phase>,
}

#[derive(Debug, Clone, Copy)]
struct MoveState {
    issued: Duration,
    goal: [f64; NUM_JOINTS],
    planning_seen: bool,
    done_at: Option<Duration>,
}

pub struct Sequencer {
    cfg: MissionConfig,
    bus: Bus,
    state: PersistentState,
    generation: u32,
    telemetry: Subscription,
    ctrl_state: Subscription,
    window: VecDeque<[JointTelemetry<f64>; NUM_JOINTS]>,
    records: Vec<(Duration, StateRecord)>,
    status: Arc<Mutex<MissionStatus>>,
    stage: Stage,
    stage_since: Duration,
    start_deadline: Duration,
    next_pet: Duration,
    rng: ChaCha8Rng,
    script: Vec<Step>,
    pc: usize,
    step_started: Option<Duration>,
    mv: Option<MoveState>,
    phase: Option<(Phase, Duration)>,
    phases: Vec<PhaseRecord>,
    cycle_started: Duration,
    ground_cycles: u32,
}

impl Sequencer {
    /// A fresh mission process for boot `generation`.
    pub fn new(bus: &Bus, cfg: MissionConfig, state: PersistentState, generation: u32, now: Duration) -> Result<Self, BusError> {
        let status = Arc::new(Mutex::new(MissionStatus {
            generation,
            stage: Stage::AwaitStart,
            mode: None,
            cycles_completed: 0,
            torque_ok: true,
            camera: None,
            phase: None,
        }));
        if bus.service_spec(STATUS_SERVICE).is_none() {
            bus.register_service(ServiceSpec::new(STATUS_SERVICE, "empty", "json/status"))?;
        }
        let st = status.clone();
        bus.attach_handler(STATUS_SERVICE, move |_| {
            serde_json::to_vec(&*st.lock().unwrap()).unwrap_or_default()
        })?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ (generation as u64).rotate_left(32) ^ 0x5eed),
            start_deadline: now + cfg.start_timeout,
            cfg,
            telemetry: bus.subscribe_with_depth(TELEMETRY_TOPIC, 64)?,
            ctrl_state: bus.subscribe_with_depth(STATE_TOPIC, 64)?,
            bus: bus.clone(),
            state,
            generation,
            window: VecDeque::new(),
            records: Vec::new(),
            status,
            stage: Stage::AwaitStart,
            stage_since: now,
            next_pet: now,
            script: demo_script(),
            pc: 0,
            step_started: None,
            mv: None,
            phase: None,
            phases: Vec::new(),
            cycle_started: now,
            ground_cycles: 0,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn status(&self) -> MissionStatus {
        self.status.lock().unwrap().clone()
    }

    pub fn phases(&self) -> &[PhaseRecord] {
        &self.phases
    }

    pub fn ground_cycles(&self) -> u32 {
        self.ground_cycles
    }

    fn set_stage(&mut self, s: Stage, now: Duration) {
        self.stage = s;
        self.stage_since = now;
        self.status.lock().unwrap().stage = s;
    }

    fn call(&self, service: &str, body: &Value) -> Result<Value, String> {
        let r = self
            .bus
            .call_service(service, body.to_string().as_bytes(), CALL_TIMEOUT)
            .map_err(|e| e.to_string())?;
        let v: Value = serde_json::from_slice(&r).map_err(|e| e.to_string())?;
        if v["ok"] == Value::Bool(false) {
            return Err(v["error"].as_str().unwrap_or("failed").to_string());
        }
        Ok(v)
    }

    fn set_mode(&self, m: ModeRequest) {
        let _ = self.bus.set_parameter(MODE_PARAM, ParamValue::Str(m.as_str().into()));
    }

    fn measured_q(&self) -> Option<[f64; NUM_JOINTS]> {
        self.window.back().map(|t| t.map(|j| j.position))
    }

    fn ingest(&mut self) {
        for m in self.telemetry.drain() {
            if let Some(t) = decode_telemetry::<f64>(&m.payload) {
                if self.window.len() == HEALTH_WINDOW {
                    self.window.pop_front();
                }
                self.window.push_back(t);
            }
        }
        self.records = self
            .ctrl_state
            .drain()
            .into_iter()
            .filter_map(|m| decode_state(&m.payload).map(|r| (m.stamp, r)))
            .collect();
    }

    /// Advance by one tick.
    pub fn step(&mut self, now: Duration, log: &mut EventLog, start: &mut StartSource) -> Option<MissionRequest> {
        self.ingest();
        if now >= self.next_pet && self.call(PET_SERVICE, &Value::Null).is_ok() {
            self.next_pet = now + self.cfg.pet_period;
        }
        let req = match self.stage {
            Stage::AwaitStart => self.await_start(now, log, start),
            Stage::PoweringUp | Stage::Finished | Stage::Rebooting => None,
            Stage::WarmUp => self.warm_up(now, log),
            Stage::Demo => self.run_script(now, log),
            Stage::Sleeping => {
                if now >= self.stage_since + self.cfg.scaled(self.cfg.sleep_secs) {
                    self.begin_cycle(now, log);
                }
                None
            }
            Stage::GroundTest => {
                if now >= self.stage_since + self.cfg.cycle_duration() {
                    self.ground_cycles += 1;
                    log.push(now, self.generation, EventKind::Sleep, format!("ground_test cycle={}", self.ground_cycles));
                    self.stage_since = now;
                }
                None
            }
        };
        if let Some(MissionRequest::Reboot(_)) = &req {
            self.set_stage(Stage::Rebooting, now);
        }
        req
    }

    fn await_start(&mut self, now: Duration, log: &mut EventLog, start: &mut StartSource) -> Option<MissionRequest> {
        if self.state.hdrm_released() {
            // flight was commanded in an earlier boot
            self.status.lock().unwrap().mode = Some(StartMode::Flight);
            log.push(now, self.generation, EventKind::StartCmd, "flight resumed");
            self.set_stage(Stage::PoweringUp, now);
            return Some(MissionRequest::PowerUp);
        }
        let (valid, malformed) = start.poll(now);
        if malformed > 0 {
            log.push(now, self.generation, EventKind::Fault, format!("ignored {malformed} malformed start datagram(s)"));
        }
        if valid > 0 {
            self.status.lock().unwrap().mode = Some(StartMode::Flight);
            log.push(now, self.generation, EventKind::StartCmd, "flight");
            self.set_stage(Stage::PoweringUp, now);
            return Some(MissionRequest::PowerUp);
        }
        if now >= self.start_deadline {
            self.status.lock().unwrap().mode = Some(StartMode::GroundTest);
            log.push(now, self.generation, EventKind::StartCmd, "ground_test: no start command");
            self.set_stage(Stage::GroundTest, now);
        }
        None
    }

    /// Outcome of a [`MissionRequest::PowerUp`].
    pub fn robot_started(&mut self, result: Result<(), String>, now: Duration, log: &mut EventLog) -> Option<MissionRequest> {
        if let Err(e) = result {
            log.push(now, self.generation, EventKind::Fault, format!("power-up failed: {e}"));
            self.set_stage(Stage::Rebooting, now);
            return Some(MissionRequest::Reboot("power-up failed".into()));
        }
        if !self.state.hdrm_released() {
            log.push(now, self.generation, EventKind::HdrmRelease, "");
            if let Err(e) = self.state.set_hdrm_released(now) {
                log.push(now, self.generation, EventKind::Fault, format!("hdrm flag: {e}"));
            }
        }
        let cam = weighted_pick(&mut self.rng, self.cfg.end_effector_weight);
        match self.call(SELECT_SERVICE, &json!({"camera": cam})) {
            Ok(_) => self.status.lock().unwrap().camera = Some(cam),
            Err(e) => log.push(now, self.generation, EventKind::Fault, format!("camera select: {e}")),
        }
        self.set_stage(Stage::WarmUp, now);
        None
    }

    fn warm_up(&mut self, now: Duration, log: &mut EventLog) -> Option<MissionRequest> {
        if now < self.stage_since + WARM_UP {
            return None;
        }
        let window: Vec<_> = self.window.iter().copied().collect();
        match health_check(&window) {
            Ok(()) => {
                log.push(now, self.generation, EventKind::HealthCheck, "pass");
            }
            Err(f) if f.is_torque_only() => {
                log.push(now, self.generation, EventKind::HealthCheck, format!("fail {}", f.as_str()));
                self.status.lock().unwrap().torque_ok = false;
            }
            Err(f) => {
                log.push(now, self.generation, EventKind::HealthCheck, format!("fail {}", f.as_str()));
                return Some(MissionRequest::Reboot(format!("health check: {}", f.as_str())));
            }
        }
        self.begin_cycle(now, log);
        None
    }

    fn begin_cycle(&mut self, now: Duration, log: &mut EventLog) {
        let done = self.status.lock().unwrap().cycles_completed;
        if self.cfg.max_cycles.is_some_and(|m| done >= m) {
            self.set_mode(ModeRequest::Idle);
            self.set_stage(Stage::Finished, now);
            return;
        }
        log.push(now, self.generation, EventKind::DemoStart, format!("cycle={}", done + 1));
        self.pc = 0;
        self.step_started = None;
        self.mv = None;
        self.cycle_started = now;
        self.set_stage(Stage::Demo, now);
    }

    fn end_phase(&mut self, now: Duration, outcome: PhaseOutcome) {
        if let Some((phase, start)) = self.phase.take() {
            let cycle = self.status.lock().unwrap().cycles_completed + 1;
            self.phases.push(PhaseRecord {
                generation: self.generation,
                cycle,
                phase,
                start,
                end: now,
                outcome,
            });
        }
        self.status.lock().unwrap().phase = None;
    }

    /// Skip to the step after the current phase's `End`.
    fn skip_phase(&mut self) {
        while self.pc < self.script.len() && self.script[self.pc] != Step::End {
            self.pc += 1;
        }
        self.pc += 1;
        self.step_started = None;
        self.mv = None;
    }

    fn phase_failure(&mut self, now: Duration, log: &mut EventLog, reason: String) -> Option<MissionRequest> {
        let phase = self.phase.map(|p| p.0);
        log.push(
            now,
            self.generation,
            EventKind::Fault,
            format!("{} phase: {reason}", phase.map_or("?", Phase::as_str)),
        );
        self.end_phase(now, PhaseOutcome::Failed(reason.clone()));
        if phase.is_some_and(Phase::reboot_on_failure) {
            self.set_mode(ModeRequest::Idle);
            return Some(MissionRequest::Reboot(format!("{} phase failed", phase.unwrap().as_str())));
        }
        self.set_mode(ModeRequest::Idle);
        self.skip_phase();
        None
    }

    fn run_script(&mut self, now: Duration, log: &mut EventLog) -> Option<MissionRequest> {
        // at most a handful of instant steps per tick
        for _ in 0..8 {
            let Some(step) = self.script.get(self.pc).copied() else {
                self.finish_cycle(now, log);
                return None;
            };
            let started = *self.step_started.get_or_insert(now);
            if self.phase.is_some() && self.records.iter().any(|(t, r)| *t >= started && r.error) && matches!(step, Step::Move(_) | Step::Wait(_)) {
                return self.phase_failure(now, log, "controller error".into());
            }
            let complete = match step {
                Step::Begin(p) => {
                    let torque_ok = self.status.lock().unwrap().torque_ok;
                    self.phase = Some((p, now));
                    self.status.lock().unwrap().phase = Some(p);
                    if p.needs_torque() && !torque_ok {
                        self.end_phase(now, PhaseOutcome::Skipped);
                        self.skip_phase();
                        continue;
                    }
                    true
                }
                Step::End => {
                    let (p, start) = self.phase.expect("inside a phase");
                    if now < start + self.cfg.scaled(p.share() * self.cfg.motion_secs) {
                        return None;
                    }
                    self.end_phase(now, PhaseOutcome::Completed);
                    true
                }
                Step::Mode(m) => {
                    self.set_mode(m);
                    true
                }
                Step::HoldOffset(off) => {
                    let Some(q) = self.measured_q() else {
                        return self.phase_failure(now, log, "no telemetry".into());
                    };
                    let _ = self
                        .bus
                        .set_parameter(Q_DES_PARAM, ParamValue::FloatArray(add(q, off).to_vec()));
                    true
                }
                Step::Move(goal) => match self.advance_move(goal, now) {
                    Ok(done) => done,
                    Err(e) => return self.phase_failure(now, log, e),
                },
                Step::Image | Step::Video => {
                    let cam = self.status.lock().unwrap().camera;
                    match cam {
                        Some(cam) => {
                            let (service, params) = if step == Step::Video {
                                (RECORD_VIDEO_SERVICE, self.cfg.video)
                            } else {
                                (TAKE_IMAGE_SERVICE, self.cfg.image)
                            };
                            if let Err(e) = self.call(service, &json!({"camera": cam, "params": params})) {
                                log.push(now, self.generation, EventKind::Fault, format!("capture: {e}"));
                            }
                        }
                        None => log.push(now, self.generation, EventKind::Fault, "capture: no camera"),
                    }
                    true
                }
                Step::Gate => {
                    let window: Vec<_> = self.window.iter().copied().collect();
                    let ok = self.status.lock().unwrap().torque_ok && window.len() == HEALTH_WINDOW && torque_valid(&window);
                    if !ok {
                        self.status.lock().unwrap().torque_ok = false;
                        log.push(now, self.generation, EventKind::Fault, "torque gate failed: skipping impedance, virtual_fixtures");
                    }
                    true
                }
                Step::Wait(secs) => now >= started + self.cfg.scaled(secs),
            };
            if !complete {
                return None;
            }
            self.pc += 1;
            self.step_started = None;
            // steps that wait on the controller start on the next tick
            if matches!(step, Step::Mode(_) | Step::Move(_) | Step::HoldOffset(_)) {
                return None;
            }
        }
        None
    }

    fn advance_move(&mut self, goal: [f64; NUM_JOINTS], now: Duration) -> Result<bool, String> {
        let mv = match self.mv {
            Some(m) if m.goal == goal => m,
            _ => {
                let body = json!({"qf": goal, "vmax": MOVE_VMAX, "amax": MOVE_AMAX});
                self.call(PLAN_SERVICE, &body)?;
                let m = MoveState {
                    issued: now,
                    goal,
                    planning_seen: false,
                    done_at: None,
                };
                self.mv = Some(m);
                return Ok(false);
            }
        };
        let mut m = mv;
        for (stamp, r) in &self.records {
            if *stamp < m.issued {
                continue;
            }
            if r.plan_error {
                return Err("trajectory planning failed".into());
            }
            if r.ipol_phase == 1 {
                m.planning_seen = true;
            }
            if m.planning_seen && r.ipol_phase == 3 && m.done_at.is_none() {
                m.done_at = Some(now);
            }
        }
        self.mv = Some(m);
        if now > m.issued + MOVE_TIMEOUT {
            return Err("move timed out".into());
        }
        let Some(done_at) = m.done_at else {
            return Ok(false);
        };
        let err = self
            .measured_q()
            .map_or(f64::INFINITY, |q| (0..NUM_JOINTS).map(|i| (q[i] - goal[i]).abs()).fold(0.0, f64::max));
        if err < SETTLE_TOLERANCE {
            self.mv = None;
            return Ok(true);
        }
        if now > done_at + SETTLE_TIMEOUT {
            return Err(format!("did not settle, error {err:.3} rad"));
        }
        Ok(false)
    }

    fn finish_cycle(&mut self, now: Duration, log: &mut EventLog) {
        self.set_mode(ModeRequest::Idle);
        let n = {
            let mut s = self.status.lock().unwrap();
            s.cycles_completed += 1;
            s.cycles_completed
        };
        log.push(now, self.generation, EventKind::DemoEnd, format!("cycle={n}"));
        log.push(now, self.generation, EventKind::Sleep, format!("cycle={n}"));
        self.set_stage(Stage::Sleeping, now);
    }
}
