//! Single-threaded on-board computer, robot and ground station on a shared
//! 10 ms simulated clock.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bus::{Bus, BusError};
use crate::camsim::{CamConfig, CameraNode, CameraServer};
use crate::clock::SimClock;
use crate::controller::{ControllerNode, ControllerParams, HighLevel};
use crate::datasync::watcher::is_transferable;
use crate::datasync::{Channel, Receiver, Sender, SenderStats, WatchError};
use crate::halsim::{FaultInjection, FaultKind, HalNode, HalSim, JointMode, PlantState, NUM_JOINTS};
use crate::mission::watchdog;
use crate::mission::{
    run_startup, EmmcFault, EmmcId, EventKind, EventLog, MissionRequest, PersistentState, Sequencer, Stage,
    StartSource, StartupOutcome, StartupStep, Storage, Watchdog, START_MAGIC,
};
use crate::procman::{load_config, FnLauncher, ProcessSpec, ProcessState, ProcmanError, Supervisor};
use crate::recorder::{recover_partial, Recorder, RecorderError};

use super::report::{BootRecord, FileReport, FileStatus, RebootRecord, RunReport};
use super::scenario::{Expectation, FaultAction, Scenario, ScheduledFault};

pub const TICK: Duration = Duration::from_millis(10);
const PLANT_SAVE_PERIOD: Duration = Duration::from_secs(1);
const BOOT_RETRY: Duration = Duration::from_secs(1);

/// On-board process graph. The robot processes are started on demand.
pub const SYSTEM_PROCESSES: &str = r#"
[[process]]
name = "power"
command = ["power-daemon"]
ready_pattern = "ready$"
error_pattern = "^ERROR"

[[process]]
name = "camera"
command = ["camera-server"]
depends_on = ["power"]
ready_pattern = "ready$"
error_pattern = "^ERROR"

[[process]]
name = "recorder"
command = ["recorder"]
depends_on = ["power"]
ready_pattern = "ready$"
error_pattern = "^ERROR"

[[process]]
name = "datasync"
command = ["datasync-send"]
depends_on = ["power"]
ready_pattern = "ready$"
error_pattern = "^ERROR"

[[process]]
name = "mission"
command = ["mission"]
depends_on = ["camera", "recorder", "datasync"]
ready_pattern = "ready$"
error_pattern = "^ERROR"

[[process]]
name = "hal"
command = ["hal"]
depends_on = ["power"]
ready_pattern = "ready$"
error_pattern = "^ERROR"

[[process]]
name = "controller"
command = ["controller"]
depends_on = ["hal"]
ready_pattern = "ready$"
error_pattern = "^ERROR"
"#;

const BASE_PROCESSES: [&str; 5] = ["power", "camera", "recorder", "datasync", "mission"];
const ROBOT_PROCESSES: [&str; 2] = ["hal", "controller"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bus: {0}")]
    Bus(#[from] BusError),
    #[error("procman: {0}")]
    Procman(#[from] ProcmanError),
    #[error("recorder: {0}")]
    Recorder(#[from] RecorderError),
    #[error("datasync: {0}")]
    Watch(#[from] WatchError),
}

type StartFn = Box<dyn FnMut(&ProcessSpec) -> Result<Vec<String>, String>>;

struct Boot {
    generation: u32,
    card: EmmcId,
    bus: Bus,
    supervisor: Supervisor<FnLauncher<StartFn>>,
    hal: Option<HalNode>,
    ctrl: Option<ControllerNode>,
    params: ControllerParams<f64>,
    _camera: CameraNode,
    recorder: Option<Recorder>,
    recorder_since: Duration,
    sender: Sender,
    seq: Sequencer,
}

pub struct World {
    sc: Scenario,
    root: PathBuf,
    clock: SimClock,
    state: PersistentState,
    storage: Storage,
    hal: Arc<Mutex<HalSim<f64>>>,
    powered: Arc<AtomicBool>,
    watchdog: Arc<Mutex<Watchdog>>,
    channel: Channel,
    receiver: Receiver,
    log: EventLog,
    start: StartSource,
    boot: Option<Boot>,
    boot_due: Option<Duration>,
    pending_faults: Vec<ScheduledFault>,
    suspended: bool,
    reboot_request: Option<String>,
    q_at_reset: Option<[f64; NUM_JOINTS]>,
    next_plant_save: Duration,
    ticks: u64,
    winding_since: Option<Duration>,
    done: bool,
    sender_totals: SenderStats,
    last_wall: Option<Instant>,
    report: RunReport,
}

fn step_name(s: &StartupStep) -> String {
    match s {
        StartupStep::NetworksEnabled => "networks".into(),
        StartupStep::WatchdogArmed => "watchdog".into(),
        StartupStep::Picked(c) => format!("pick:{}", c.as_str()),
        StartupStep::MountFailed(c) => format!("mount_failed:{}", c.as_str()),
        StartupStep::Fallback(c) => format!("fallback:{}", c.as_str()),
        StartupStep::Reformat { ok } => format!("reformat:{}", if *ok { "ok" } else { "failed" }),
        StartupStep::Mounted(c) => format!("mounted:{}", c.as_str()),
        StartupStep::Reboot => "reboot".into(),
    }
}

fn hl_name(h: HighLevel) -> String {
    match h {
        HighLevel::Init => "init".into(),
        HighLevel::Idle => "idle".into(),
        HighLevel::Ready(m) => format!("ready:{}", m.as_str()),
    }
}

fn add_stats(a: &mut SenderStats, b: &SenderStats) {
    a.files += b.files;
    a.fragments += b.fragments;
    a.packets += b.packets;
    a.bytes += b.bytes;
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

impl World {
    /// Lay out `root` (`board/` for the flight computer, `ground/` for the
    /// receiver) and schedule the first boot at t = 0.
    pub fn new(sc: Scenario, root: impl Into<PathBuf>) -> Result<Self, SimError> {
        let root = root.into();
        let board = root.join("board");
        fs::create_dir_all(&board)?;
        fs::create_dir_all(root.join("ground"))?;
        let state = PersistentState::open(&board)?;
        let storage = Storage::new(&board)?;
        let mut datagrams: Vec<(Duration, Vec<u8>)> = sc
            .malformed_datagram_s
            .iter()
            .map(|t| (Duration::from_secs_f64(*t), b"SDRMG0?\n".to_vec()))
            .collect();
        if let Some(t) = sc.start_command_s {
            datagrams.push((Duration::from_secs_f64(t), START_MAGIC.to_vec()));
        }
        let mut faults = sc.faults.clone();
        faults.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        let report = RunReport {
            scenario: sc.name.clone(),
            seed: sc.seed,
            ..RunReport::default()
        };
        Ok(Self {
            clock: SimClock::new(),
            state,
            storage,
            hal: Arc::new(Mutex::new(HalSim::at([0.0; NUM_JOINTS]))),
            powered: Arc::new(AtomicBool::new(false)),
            watchdog: Arc::new(Mutex::new(Watchdog::new(Duration::from_secs_f64(sc.watchdog_timeout_s)))),
            channel: Channel::new(sc.channel_config()),
            receiver: Receiver::new(),
            log: EventLog::new(),
            start: StartSource::scripted(datagrams),
            boot: None,
            boot_due: Some(Duration::ZERO),
            pending_faults: faults,
            suspended: false,
            reboot_request: None,
            q_at_reset: None,
            next_plant_save: Duration::ZERO,
            ticks: 0,
            winding_since: None,
            done: false,
            sender_totals: SenderStats::default(),
            last_wall: None,
            report,
            root,
            sc,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn now(&self) -> Duration {
        self.clock.now()
    }

    pub fn receiver(&self) -> &Receiver {
        &self.receiver
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn events(&self) -> &EventLog {
        &self.log
    }

    pub fn hal(&self) -> &Arc<Mutex<HalSim<f64>>> {
        &self.hal
    }

    /// Stage of the running mission, if a boot is up.
    pub fn mission_stage(&self) -> Option<Stage> {
        self.boot.as_ref().map(|b| b.seq.stage())
    }

    pub fn generation(&self) -> u32 {
        self.boot.as_ref().map_or(0, |b| b.generation)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn launcher(&self) -> FnLauncher<StartFn> {
        let hal = self.hal.clone();
        let powered = self.powered.clone();
        FnLauncher::new(Box::new(move |spec: &ProcessSpec| {
            Ok(match spec.name.as_str() {
                "hal" if !powered.load(Ordering::Acquire) => vec!["ERROR robot power is off".into()],
                "hal" => match hal.lock().unwrap().configure_link() {
                    Ok(()) => vec!["link configured".into(), "hal ready".into()],
                    Err(e) => vec![format!("ERROR {e}")],
                },
                name => vec![format!("{name} ready")],
            })
        }))
    }

    fn apply_faults(&mut self, now: Duration) {
        let t = now.as_secs_f64() + 1e-9;
        let due = self.pending_faults.iter().take_while(|f| f.at_s <= t).count();
        let gen = self.state.boot_generation();
        for f in self.pending_faults.drain(..due).collect::<Vec<_>>() {
            let inject = |kind, joint_id, active| FaultInjection { kind, joint_id, active };
            let mut hal = self.hal.lock().unwrap();
            let detail = match f.action {
                FaultAction::TorqueSensorInvalid { joint } => {
                    let _ = hal.inject_fault(inject(FaultKind::TorqueSensorInvalid, joint, true));
                    format!("injected torque_sensor_invalid joint={joint}")
                }
                FaultAction::JointStuck { joint } => {
                    let _ = hal.inject_fault(inject(FaultKind::JointStuck, joint, true));
                    format!("injected joint_stuck joint={joint}")
                }
                FaultAction::LinkCorruptConfig => {
                    let _ = hal.inject_fault(inject(FaultKind::LinkCorruptConfig, 0, true));
                    "injected link_corrupt_config".into()
                }
                FaultAction::ClearHalFaults => {
                    for kind in [FaultKind::TorqueSensorInvalid, FaultKind::JointStuck, FaultKind::LinkCorruptConfig] {
                        for j in 0..NUM_JOINTS {
                            let _ = hal.inject_fault(inject(kind, j, false));
                        }
                    }
                    "cleared hal faults".into()
                }
                FaultAction::EmmcMountFail { card } => {
                    self.storage.set_fault(card, EmmcFault::MountFail);
                    format!("injected emmc_mount_fail card={}", card.as_str())
                }
                FaultAction::EmmcControllerHang { card } => {
                    self.storage.set_fault(card, EmmcFault::ControllerHang);
                    format!("injected emmc_controller_hang card={}", card.as_str())
                }
                FaultAction::EmmcReformatFails => {
                    self.storage.reformat_works = false;
                    "injected emmc_reformat_fails".into()
                }
                FaultAction::SuspendMission => {
                    self.suspended = true;
                    "mission process suspended".into()
                }
                FaultAction::Reboot => {
                    self.reboot_request.get_or_insert_with(|| "hard reset".into());
                    "hard reset requested".into()
                }
            };
            drop(hal);
            self.log.push(now, gen, EventKind::Fault, detail);
        }
    }

    fn boot(&mut self, now: Duration) -> Result<(), SimError> {
        let generation = self.state.next_generation()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.sc.seed ^ (generation as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let rep = {
            let mut wd = self.watchdog.lock().unwrap();
            run_startup(&mut self.storage, &mut wd, now, &mut rng)
        };
        let steps = rep.steps.iter().map(step_name).collect::<Vec<_>>().join(",");
        let card = match rep.outcome {
            StartupOutcome::Ready(c) => Some(c),
            StartupOutcome::Reboot => None,
        };
        self.report.boots.push(BootRecord {
            generation,
            at: now,
            card: card.map(|c| c.as_str().to_string()),
            steps: steps.clone(),
        });
        self.log.push(now, generation, EventKind::Boot, format!("steps={steps}"));
        let Some(card) = card else {
            self.log.push(now, generation, EventKind::Reboot, "no usable storage");
            self.report.reboots.push(RebootRecord {
                generation,
                at: now,
                cause: "no usable storage".into(),
            });
            self.boot_due = Some(now + BOOT_RETRY);
            return Ok(());
        };
        let dev = self.storage.device(card).clone();
        let recovered = recover_partial(&dev.tx_root())?;
        if !recovered.is_empty() {
            self.log.push(now, generation, EventKind::Fault, format!("recovered {} partial log(s)", recovered.len()));
        }
        let data = dev.data_root(generation);
        fs::create_dir_all(data.join("logs"))?;
        fs::create_dir_all(data.join("media"))?;
        let plant_path = self.state.plant_path();
        if plant_path.exists() {
            match PlantState::<f64>::load(&plant_path) {
                Ok(p) => {
                    if let Some(q0) = self.q_at_reset.take() {
                        let err = (0..NUM_JOINTS).map(|i| (p.q[i] - q0[i]).abs()).fold(0.0, f64::max);
                        self.report.resume_q_error = self.report.resume_q_error.max(err);
                    }
                    *self.hal.lock().unwrap().plant_mut() = p;
                }
                Err(e) => self.log.push(now, generation, EventKind::Fault, format!("plant state: {e}")),
            }
        }

        let bus = Bus::new();
        crate::halsim::node::declare_topics(&bus)?;
        crate::controller::node::declare_topics(&bus)?;
        watchdog::attach(&bus, self.watchdog.clone(), self.clock.clone())?;
        let mut supervisor = Supervisor::new(load_config(SYSTEM_PROCESSES)?, self.launcher());
        let status = supervisor.start_only(&BASE_PROCESSES)?;
        if let Some(bad) = status.values().find(|s| BASE_PROCESSES.contains(&s.name.as_str()) && s.state != ProcessState::Ready) {
            self.reboot_request = Some(format!("process {} failed", bad.name));
        }
        let camera = CameraNode::attach(
            &bus,
            CameraServer::new(
                data.join("media"),
                CamConfig {
                    seed: self.sc.seed ^ ((generation as u64) << 20),
                    time_scale: self.sc.time_scale,
                    ..CamConfig::default()
                },
            ),
            self.clock.clone(),
        )?;
        let recorder = Recorder::new(&bus, &self.sc.recording.config(), data.join("logs"), generation)?;
        let sender = Sender::watching(self.sc.sync_config(), dev.tx_root(), generation)?;
        let mut cfg = self.sc.mission_config();
        cfg.max_cycles = Some(self.sc.cycles.saturating_sub(self.report.cycles_completed));
        let seq = Sequencer::new(&bus, cfg, self.state.clone(), generation, now)?;
        self.boot = Some(Boot {
            generation,
            card,
            bus,
            supervisor,
            hal: None,
            ctrl: None,
            params: ControllerParams::default(),
            _camera: camera,
            recorder: Some(recorder),
            recorder_since: now,
            sender,
            seq,
        });
        Ok(())
    }

    fn power_up(&mut self, now: Duration) -> Result<Option<MissionRequest>, SimError> {
        let Some(b) = self.boot.as_mut() else { return Ok(None) };
        self.powered.store(true, Ordering::Release);
        self.report.robot_powered = true;
        let result = match b.supervisor.start_only(&ROBOT_PROCESSES) {
            Err(e) => Err(e.to_string()),
            Ok(st) => match ROBOT_PROCESSES.iter().find(|n| st[**n].state != ProcessState::Ready) {
                Some(n) => Err(format!("{n}: {}", st[*n].reason.clone().unwrap_or_default())),
                None => Ok(()),
            },
        };
        if result.is_ok() {
            b.hal = Some(HalNode::attach(&b.bus, self.hal.clone())?);
            b.ctrl = Some(ControllerNode::attach(&b.bus)?);
        }
        Ok(b.seq.robot_started(result, now, &mut self.log))
    }

    fn close_recorder(&mut self, now: Duration, graceful: bool) {
        let Some(b) = self.boot.as_mut() else { return };
        let Some(mut r) = b.recorder.take() else { return };
        if graceful {
            let _ = r.close();
            if let Some(w) = b.sender.watcher_mut() {
                for p in r.take_closed() {
                    w.hint(p);
                }
            }
        }
        self.report.recorder_bytes += r.total_bytes();
        self.report.recorder_seconds += (now - b.recorder_since).as_secs_f64();
        if graceful {
            drop(r);
        } else {
            r.abandon();
        }
    }

    fn retire_boot(&mut self) -> Option<Boot> {
        let b = self.boot.take()?;
        let st = b.seq.status();
        self.report.cycles_completed += st.cycles_completed;
        self.report.ground_cycles += b.seq.ground_cycles();
        self.report.phases.extend(b.seq.phases().iter().cloned());
        add_stats(&mut self.sender_totals, b.sender.stats());
        Some(b)
    }

    fn reboot(&mut self, now: Duration, cause: String) -> Result<(), SimError> {
        let generation = self.generation();
        self.log.push(now, generation, EventKind::Reboot, cause.clone());
        self.report.reboots.push(RebootRecord {
            generation,
            at: now,
            cause,
        });
        self.close_recorder(now, false);
        if let Some(mut b) = self.retire_boot() {
            b.supervisor.stop_all();
        }
        {
            let mut hal = self.hal.lock().unwrap();
            hal.disconnect();
            let plant = hal.plant_mut();
            plant.qdot = [0.0; NUM_JOINTS];
            self.q_at_reset = Some(plant.q);
            plant.save(&self.state.plant_path())?;
        }
        self.powered.store(false, Ordering::Release);
        self.suspended = false;
        self.boot_due = Some(now + TICK);
        Ok(())
    }

    fn mission_over(&self, now: Duration) -> bool {
        if now.as_secs_f64() >= self.sc.duration_s {
            return true;
        }
        let Some(b) = self.boot.as_ref() else { return false };
        b.seq.stage() == Stage::Finished || self.report.ground_cycles + b.seq.ground_cycles() >= self.sc.cycles.max(1) && b.seq.stage() == Stage::GroundTest
    }

    /// Advance one tick. Returns `true` once the run is over.
    pub fn tick(&mut self) -> Result<bool, SimError> {
        if self.done {
            return Ok(true);
        }
        let now = TICK * self.ticks as u32;
        self.ticks += 1;
        self.clock.set(now);
        let winding = self.winding_since.is_some();
        if !winding {
            self.apply_faults(now);
        }
        if self.boot_due.is_some_and(|t| now >= t) {
            self.boot_due = None;
            self.boot(now)?;
        }

        let mut request = None;
        if let Some(b) = self.boot.as_mut() {
            if !self.suspended {
                request = b.seq.step(now, &mut self.log, &mut self.start);
            }
        }
        if request == Some(MissionRequest::PowerUp) {
            request = self.power_up(now)?;
        }
        if let Some(b) = self.boot.as_mut() {
            if let Some(h) = b.hal.as_mut() {
                let _ = h.step(now);
            }
            if let Some(c) = b.ctrl.as_mut() {
                let before = c.commands_published();
                let out = c.step(now, &mut b.params);
                self.report.controller_ticks += 1;
                if c.commands_published() > before {
                    self.report.command_sets += 1;
                }
                if out.commands.iter().any(|c| c.mode != JointMode::Off) {
                    self.report.motion_commands += 1;
                }
                *self.report.mode_residence.entry(hl_name(out.status.high_level)).or_default() += TICK;
                self.report.max_tracking_error = self.report.max_tracking_error.max(out.status.tracking_error);
            }
            if let Some(r) = b.recorder.as_mut() {
                r.poll(now);
                if let Some(w) = b.sender.watcher_mut() {
                    for p in r.take_closed() {
                        w.hint(p);
                    }
                }
            }
        }
        if !winding && self.watchdog.lock().unwrap().check(now) {
            let last = self.watchdog.lock().unwrap().last_pet();
            self.report.watchdog_latency.push(now - last);
            request = Some(MissionRequest::Reboot("watchdog timeout".into()));
        }
        if let Some(b) = self.boot.as_mut() {
            for p in b.sender.poll(now)? {
                self.channel.send(now, p);
            }
        }
        for p in self.channel.deliver(now) {
            self.receiver.ingest_packet(&p);
        }
        if now >= self.next_plant_save {
            self.next_plant_save = now + PLANT_SAVE_PERIOD;
            self.hal.lock().unwrap().plant_mut().save(&self.state.plant_path())?;
        }

        if let Some(hard) = self.reboot_request.take() {
            request = Some(MissionRequest::Reboot(hard));
        }
        if let (Some(MissionRequest::Reboot(cause)), false) = (request, winding) {
            self.reboot(now, cause)?;
        }

        match self.winding_since {
            None if self.mission_over(now) => {
                self.winding_since = Some(now);
                self.close_recorder(now, true);
            }
            Some(since) => {
                let rescan = Duration::from_millis(self.sc.sync_config().rescan_period_ms) + TICK;
                let idle = self.boot.as_ref().is_none_or(|b| b.sender.queue_pending() == 0) && self.channel.in_transit() == 0;
                if now >= since + rescan && idle {
                    self.report.drained = true;
                    self.done = true;
                } else if now >= since + Duration::from_secs_f64(self.sc.drain_s) {
                    self.done = true;
                }
            }
            None => {}
        }
        Ok(self.done)
    }

    /// Run to completion, pacing against the wall clock if asked to.
    pub fn run(mut self) -> Result<RunReport, SimError> {
        let wall0 = Instant::now();
        while !self.done {
            if self.sc.wall_clock {
                let target = wall0 + TICK * self.ticks as u32;
                let t = Instant::now();
                if target > t {
                    std::thread::sleep(target - t);
                }
                let t = Instant::now();
                if let Some(prev) = self.last_wall {
                    let period = t - prev;
                    let dev = period.abs_diff(TICK);
                    self.report.controller_jitter = self.report.controller_jitter.max(dev);
                }
                self.last_wall = Some(t);
            }
            self.tick()?;
        }
        self.finish()
    }

    /// Flush the downlink, write the ground products and build the report.
    pub fn finish(mut self) -> Result<RunReport, SimError> {
        let now = self.clock.now();
        for p in self.channel.flush(now) {
            self.receiver.ingest_packet(&p);
        }
        let final_card = self.boot.as_ref().map(|b| b.card);
        self.close_recorder(now, true);
        if let Some(mut b) = self.retire_boot() {
            b.supervisor.stop_all();
        }
        self.receiver.write_outputs(&self.root.join("ground").join("rx"))?;
        let mut r = std::mem::take(&mut self.report);
        r.sim_time = now;
        r.ticks = self.ticks;
        r.events = self.log.events().to_vec();
        r.sender = self.sender_totals.clone();
        r.channel = self.channel.stats().clone();
        r.rx = self.receiver.counters().clone();
        r.files = self.inventory(final_card)?;
        r.header_copy_rescues = self
            .receiver
            .manifests()
            .iter()
            .filter(|m| m.total_frags > 0 && m.header_copy && !m.received[0])
            .count() as u32;
        r.assertions = self.sc.expect.iter().map(|e| (*e, evaluate(*e, &r, &self.sc))).collect();
        Ok(r)
    }

    /// Every closed file left on either card, matched against what the
    /// ground station reassembled.
    fn inventory(&self, final_card: Option<EmmcId>) -> Result<Vec<FileReport>, SimError> {
        let manifests = self.receiver.manifests();
        let mut out = Vec::new();
        for card in [EmmcId::A, EmmcId::B] {
            let tx = self.storage.device(card).tx_root();
            let mut files = Vec::new();
            walk(&tx, &mut files)?;
            for p in files.into_iter().filter(|p| is_transferable(p)) {
                let rel = p.strip_prefix(&tx).unwrap_or(&p);
                let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                let Some(generation) = parts.first().and_then(|g| g.parse::<u32>().ok()) else { continue };
                let name = parts[1..].join("/");
                let content = fs::read(&p)?;
                let candidates: Vec<_> = manifests
                    .iter()
                    .filter(|m| m.generation == generation && m.name.as_deref() == Some(name.as_str()))
                    .collect();
                let exact = candidates.iter().any(|m| {
                    m.complete
                        && self
                            .receiver
                            .reassemble(m.generation, m.file_id)
                            .is_ok_and(|ra| ra.bytes == content)
                });
                let crc = crc32fast::hash(&content);
                let same_version = candidates
                    .iter()
                    .filter(|m| m.size == Some(content.len() as u64) && m.file_id == crate::datasync::wire::file_id(&name, crc))
                    .map(|m| m.holes)
                    .min();
                let status = if exact {
                    FileStatus::Complete
                } else if let Some(h) = same_version {
                    FileStatus::Holes(h)
                } else if final_card != Some(card) {
                    FileStatus::Stranded
                } else {
                    FileStatus::Missing
                };
                out.push(FileReport {
                    generation,
                    name,
                    size: content.len() as u64,
                    status,
                });
            }
        }
        out.sort_by(|a, b| (a.generation, &a.name).cmp(&(b.generation, &b.name)));
        Ok(out)
    }
}

fn evaluate(e: Expectation, r: &RunReport, sc: &Scenario) -> bool {
    use crate::mission::{Phase, PhaseOutcome};
    match e {
        Expectation::ZeroReboots => r.reboots.is_empty(),
        Expectation::OneWatchdogReboot => {
            let limit = Duration::from_secs_f64(sc.watchdog_timeout_s) + TICK;
            r.reboots.len() == 1 && r.watchdog_reboots() == 1 && r.watchdog_latency.iter().all(|l| *l <= limit)
        }
        Expectation::CyclesCompleted => r.cycles_completed >= sc.cycles,
        Expectation::AllFilesDelivered => {
            !r.files.is_empty() && r.files.iter().all(|f| f.status.delivered() || f.status == FileStatus::Stranded)
        }
        Expectation::AllFilesComplete => !r.files.is_empty() && r.files.iter().all(|f| f.status == FileStatus::Complete),
        Expectation::GroundTestSafe => {
            r.motion_commands == 0
                && !r.robot_powered
                && r.ground_cycles >= sc.cycles.max(1)
                && r.events.iter().all(|e| e.kind != EventKind::HdrmRelease)
        }
        Expectation::StartupFallback => {
            r.boots.iter().any(|b| b.steps.contains("fallback:")) && r.boots.iter().all(|b| b.card.is_some())
        }
        Expectation::TorqueGateSkips => {
            let torque = |p: Phase| matches!(p, Phase::Impedance | Phase::VirtualFixtures);
            let tp: Vec<_> = r.phases.iter().filter(|p| torque(p.phase)).collect();
            !tp.is_empty() && tp.iter().all(|p| p.outcome == PhaseOutcome::Skipped)
        }
        Expectation::ResumedAfterReboot => {
            r.boots.len() >= 2
                && r.resume_q_error < 1e-9
                && r.events.iter().any(|e| e.kind == EventKind::StartCmd && e.detail == "flight resumed")
        }
    }
}

/// Run `sc` in a fresh directory tree under `root`.
pub fn run_scenario(sc: &Scenario, root: &Path) -> Result<RunReport, SimError> {
    World::new(sc.clone(), root)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn process_graph_starts_power_first_and_hal_before_controller() {
        let g = load_config(SYSTEM_PROCESSES).unwrap();
        let order = g.order();
        let pos = |n: &str| order.iter().position(|o| o == n).unwrap();
        assert_eq!(order[0], "power");
        assert!(pos("hal") < pos("controller"));
        assert!(pos("camera") < pos("mission") && pos("datasync") < pos("mission"));
    }

    #[test]
    fn hal_refuses_to_start_unpowered() {
        let dir = tempfile::tempdir().unwrap();
        let w = World::new(Scenario::default(), dir.path()).unwrap();
        let mut sup = Supervisor::new(load_config(SYSTEM_PROCESSES).unwrap(), w.launcher());
        sup.start_only(&["power"]).unwrap();
        let st = sup.start_only(&ROBOT_PROCESSES).unwrap();
        assert_eq!(st["hal"].state, ProcessState::Failed);
        assert_eq!(st["controller"].state, ProcessState::Failed);
        w.powered.store(true, Ordering::Release);
        let st = sup.start_only(&ROBOT_PROCESSES).unwrap();
        assert_eq!(st["controller"].state, ProcessState::Ready);
    }

    #[test]
    fn ground_test_never_moves() {
        let dir = tempfile::tempdir().unwrap();
        let sc = Scenario::builtin("ground_test").unwrap();
        let r = run_scenario(&sc, dir.path()).unwrap();
        assert!(r.passed(), "{}", r.to_kv());
        assert_eq!(r.controller_ticks, 0);
    }
}
