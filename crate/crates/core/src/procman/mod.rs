//! Headless process supervisor.
//!
//! Processes are declared in a TOML document (see [`config`]), started in
//! dependency order, and declared ready once a line of their output matches
//! `ready_pattern`. A line matching `error_pattern` before that marks the
//! process failed. How a process is actually started is abstracted by
//! [`Launcher`]: [`OsLauncher`] spawns real child processes, while the
//! simulation supplies an in-process launcher.

pub mod config;
mod launcher;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use config::{load_config, ProcessGraph, ProcessSpec};
pub use launcher::{FnLauncher, Launcher, OsLauncher, OutputEvent, RunningProcess};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcmanError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("dependency cycle involving `{0}`")]
    Cycle(String),
    #[error("`{process}` depends on unknown process `{dependency}`")]
    UnknownDependency { process: String, dependency: String },
    #[error("failed to spawn `{0}`: {1}")]
    Spawn(String, String),
    #[error("`{0}` did not report ready in time")]
    ReadyTimeout(String),
    #[error("unknown process `{0}`")]
    UnknownProcess(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProcessState {
    Stopped,
    Starting,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessStatus {
    pub name: String,
    pub state: ProcessState,
    pub last_output_line: String,
    pub restarts: u32,
    /// Why the process is failed, if it is.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Launched,
    Ready,
    Failed,
    Stopped,
    /// Error output from a process already marked ready. Logged only.
    LateError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorEvent {
    /// Global order of events within this supervisor.
    pub seq: u64,
    pub at: Instant,
    pub process: String,
    pub kind: EventKind,
    pub detail: String,
}

struct Slot {
    status: ProcessStatus,
    handle: Option<Box<dyn RunningProcess>>,
    generation: u64,
}

pub struct Supervisor<L: Launcher> {
    graph: ProcessGraph,
    launcher: L,
    slots: HashMap<String, Slot>,
    tx: mpsc::Sender<OutputEvent>,
    rx: mpsc::Receiver<OutputEvent>,
    history: Vec<SupervisorEvent>,
    next_generation: u64,
}

impl<L: Launcher> Supervisor<L> {
    pub fn new(graph: ProcessGraph, launcher: L) -> Self {
        let (tx, rx) = mpsc::channel();
        let slots = graph
            .specs()
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    Slot {
                        status: ProcessStatus {
                            name: s.name.clone(),
                            state: ProcessState::Stopped,
                            last_output_line: String::new(),
                            restarts: 0,
                            reason: None,
                        },
                        handle: None,
                        generation: 0,
                    },
                )
            })
            .collect();
        Self {
            graph,
            launcher,
            slots,
            tx,
            rx,
            history: Vec::new(),
            next_generation: 1,
        }
    }

    pub fn graph(&self) -> &ProcessGraph {
        &self.graph
    }

    pub fn launcher_mut(&mut self) -> &mut L {
        &mut self.launcher
    }

    pub fn history(&self) -> &[SupervisorEvent] {
        &self.history
    }

    pub fn status(&mut self) -> BTreeMap<String, ProcessStatus> {
        self.pump(Duration::ZERO);
        self.snapshot()
    }

    fn snapshot(&self) -> BTreeMap<String, ProcessStatus> {
        self.slots
            .iter()
            .map(|(k, v)| (k.clone(), v.status.clone()))
            .collect()
    }

    pub fn all_ready(&mut self) -> bool {
        self.status()
            .values()
            .all(|s| s.state == ProcessState::Ready)
    }

    fn log(&mut self, process: &str, kind: EventKind, detail: impl Into<String>) {
        self.history.push(SupervisorEvent {
            seq: self.history.len() as u64,
            at: Instant::now(),
            process: process.to_string(),
            kind,
            detail: detail.into(),
        });
    }

    fn set_state(&mut self, name: &str, state: ProcessState, reason: Option<String>) {
        let slot = self.slots.get_mut(name).expect("known process");
        slot.status.state = state;
        slot.status.reason = reason;
    }

    /// Handle one output event; returns the affected process name if its
    /// state changed.
    fn apply(&mut self, ev: OutputEvent) -> Option<String> {
        let spec = self.graph.spec(&ev.process)?.clone();
        let slot = self.slots.get_mut(&ev.process)?;
        if slot.generation != ev.generation {
            return None;
        }
        let Some(line) = ev.line else {
            // process exited
            slot.handle = None;
            return match slot.status.state {
                ProcessState::Starting => {
                    self.set_state(&ev.process, ProcessState::Failed, Some("exited before ready".into()));
                    self.log(&ev.process, EventKind::Failed, "exited before ready");
                    Some(ev.process)
                }
                ProcessState::Ready => {
                    self.set_state(&ev.process, ProcessState::Stopped, Some("exited".into()));
                    self.log(&ev.process, EventKind::Stopped, "exited");
                    Some(ev.process)
                }
                _ => None,
            };
        };
        slot.status.last_output_line = line.clone();
        let is_error = spec.error_pattern.as_ref().is_some_and(|re| re.is_match(&line));
        match slot.status.state {
            ProcessState::Starting if is_error => {
                if let Some(mut h) = slot.handle.take() {
                    h.kill();
                }
                self.set_state(&ev.process, ProcessState::Failed, Some(line.clone()));
                self.log(&ev.process, EventKind::Failed, line);
                Some(ev.process)
            }
            ProcessState::Starting if spec.ready_pattern.is_match(&line) => {
                self.set_state(&ev.process, ProcessState::Ready, None);
                self.log(&ev.process, EventKind::Ready, line);
                Some(ev.process)
            }
            ProcessState::Ready if is_error => {
                self.log(&ev.process, EventKind::LateError, line);
                None
            }
            _ => None,
        }
    }

    fn pump(&mut self, wait: Duration) {
        let deadline = Instant::now() + wait;
        loop {
            let ev = match self.rx.try_recv() {
                Ok(ev) => ev,
                Err(_) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return;
                    }
                    match self.rx.recv_timeout(deadline - now) {
                        Ok(ev) => ev,
                        Err(_) => return,
                    }
                }
            };
            self.apply(ev);
        }
    }

    fn launch_and_wait(&mut self, name: &str) -> Result<(), ProcmanError> {
        let spec = self.graph.spec(name).expect("known").clone();
        let generation = self.next_generation;
        self.next_generation += 1;
        {
            let slot = self.slots.get_mut(name).unwrap();
            slot.generation = generation;
            slot.status.state = ProcessState::Starting;
            slot.status.reason = None;
        }
        self.log(name, EventKind::Launched, spec.command.join(" "));
        match self.launcher.launch(&spec, generation, self.tx.clone()) {
            Ok(h) => self.slots.get_mut(name).unwrap().handle = Some(h),
            Err(e) => {
                self.set_state(name, ProcessState::Failed, Some(e.clone()));
                self.log(name, EventKind::Failed, e.clone());
                return Err(ProcmanError::Spawn(name.to_string(), e));
            }
        }
        let deadline = Instant::now() + spec.start_timeout;
        loop {
            let state = self.slots[name].status.state;
            if state != ProcessState::Starting {
                return Ok(());
            }
            let now = Instant::now();
            if now >= deadline {
                if let Some(mut h) = self.slots.get_mut(name).unwrap().handle.take() {
                    h.kill();
                }
                self.set_state(name, ProcessState::Failed, Some("ready timeout".into()));
                self.log(name, EventKind::Failed, "ready timeout");
                return Err(ProcmanError::ReadyTimeout(name.to_string()));
            }
            if let Ok(ev) = self.rx.recv_timeout(deadline - now) {
                self.apply(ev);
            }
        }
    }

    fn start_subset(&mut self, subset: Option<&HashSet<String>>) -> Result<(), ProcmanError> {
        self.pump(Duration::ZERO);
        for name in self.graph.order().to_vec() {
            if subset.is_some_and(|s| !s.contains(&name)) {
                continue;
            }
            if self.slots[&name].status.state == ProcessState::Ready {
                continue;
            }
            let deps = self.graph.spec(&name).unwrap().depends_on.clone();
            if let Some(bad) = deps
                .iter()
                .find(|d| self.slots[*d].status.state != ProcessState::Ready)
            {
                let reason = format!("dependency `{bad}` not ready");
                self.set_state(&name, ProcessState::Failed, Some(reason.clone()));
                self.log(&name, EventKind::Failed, reason);
                continue;
            }
            self.launch_and_wait(&name)?;
        }
        Ok(())
    }

    /// Start every process not already ready, in dependency order.
    pub fn start_all(&mut self) -> Result<BTreeMap<String, ProcessStatus>, ProcmanError> {
        self.start_subset(None)?;
        Ok(self.snapshot())
    }

    /// Start the named processes in dependency order. Dependencies outside
    /// the set must already be ready.
    pub fn start_only(&mut self, names: &[&str]) -> Result<BTreeMap<String, ProcessStatus>, ProcmanError> {
        if let Some(bad) = names.iter().find(|n| self.graph.spec(n).is_none()) {
            return Err(ProcmanError::UnknownProcess(bad.to_string()));
        }
        let set: HashSet<String> = names.iter().map(|s| s.to_string()).collect();
        self.start_subset(Some(&set))?;
        Ok(self.snapshot())
    }

    fn stop_one(&mut self, name: &str) {
        let slot = self.slots.get_mut(name).unwrap();
        if let Some(mut h) = slot.handle.take() {
            h.kill();
        }
        // invalidate late events from the old instance
        slot.generation = 0;
        if slot.status.state != ProcessState::Stopped {
            slot.status.state = ProcessState::Stopped;
            slot.status.reason = None;
            self.log(name, EventKind::Stopped, "stopped");
        }
    }

    pub fn stop_all(&mut self) {
        for name in self.graph.order().to_vec().iter().rev() {
            self.stop_one(name);
        }
    }

    /// Kill a single process without touching its dependents, as a crash
    /// would.
    pub fn kill(&mut self, name: &str) -> Result<(), ProcmanError> {
        if self.graph.spec(name).is_none() {
            return Err(ProcmanError::UnknownProcess(name.to_string()));
        }
        self.stop_one(name);
        Ok(())
    }

    /// Stop `name` and everything depending on it, then start them again in
    /// dependency order.
    pub fn restart(&mut self, name: &str) -> Result<ProcessStatus, ProcmanError> {
        if self.graph.spec(name).is_none() {
            return Err(ProcmanError::UnknownProcess(name.to_string()));
        }
        let affected = self.graph.dependents_closure(name);
        for n in self.graph.order().to_vec().iter().rev() {
            if affected.contains(n) {
                self.stop_one(n);
                self.slots.get_mut(n).unwrap().status.restarts += 1;
            }
        }
        self.start_subset(Some(&affected))?;
        Ok(self.slots[name].status.clone())
    }
}

impl<L: Launcher> Drop for Supervisor<L> {
    fn drop(&mut self) {
        self.stop_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(name: &str, script: &str, deps: &[&str], timeout_ms: u64) -> String {
        let deps: Vec<String> = deps.iter().map(|d| format!("\"{d}\"")).collect();
        format!(
            "[[process]]\nname = \"{name}\"\ncommand = [\"/bin/sh\", \"-c\", \"{script}\"]\n\
             depends_on = [{}]\nready_pattern = \"^READY\"\nerror_pattern = \"^ERROR\"\n\
             start_timeout_ms = {timeout_ms}\n",
            deps.join(", ")
        )
    }

    fn chain_config() -> String {
        [
            sh("power", "echo READY; sleep 30", &[], 3000),
            sh("hal", "echo booting; echo READY; sleep 30", &["power"], 3000),
            sh("controller", "echo READY; sleep 30", &["hal"], 3000),
        ]
        .concat()
    }

    fn launch_order(sup: &Supervisor<OsLauncher>) -> Vec<String> {
        sup.history()
            .iter()
            .filter(|e| e.kind == EventKind::Launched)
            .map(|e| e.process.clone())
            .collect()
    }

    fn assert_launch_after_dependencies(sup: &Supervisor<OsLauncher>) {
        for ev in sup.history().iter().filter(|e| e.kind == EventKind::Launched) {
            for dep in &sup.graph().spec(&ev.process).unwrap().depends_on {
                let ready = sup
                    .history()
                    .iter()
                    .rfind(|e| &e.process == dep && e.kind == EventKind::Ready && e.seq < ev.seq)
                    .expect("dependency ready before launch");
                assert!(ready.at <= ev.at);
            }
        }
    }

    #[test]
    fn chain_starts_in_order() {
        let graph = load_config(&chain_config()).unwrap();
        let mut sup = Supervisor::new(graph, OsLauncher);
        let st = sup.start_all().unwrap();
        assert!(st.values().all(|s| s.state == ProcessState::Ready));
        assert_eq!(launch_order(&sup), ["power", "hal", "controller"]);
        assert_eq!(st["hal"].last_output_line, "READY");
        assert_launch_after_dependencies(&sup);
    }

    #[test]
    fn error_output_fails_process_and_blocks_dependents() {
        let cfg = [
            sh("power", "echo READY; sleep 30", &[], 3000),
            sh("hal", "echo ERROR link down; echo READY; sleep 30", &["power"], 3000),
            sh("controller", "echo READY; sleep 30", &["hal"], 3000),
        ]
        .concat();
        let mut sup = Supervisor::new(load_config(&cfg).unwrap(), OsLauncher);
        let st = sup.start_all().unwrap();
        assert_eq!(st["hal"].state, ProcessState::Failed);
        assert_eq!(st["controller"].state, ProcessState::Failed);
        assert_eq!(launch_order(&sup), ["power", "hal"]);
    }

    #[test]
    fn silent_process_times_out() {
        let cfg = sh("mute", "sleep 30", &[], 200);
        let mut sup = Supervisor::new(load_config(&cfg).unwrap(), OsLauncher);
        assert_eq!(sup.start_all(), Err(ProcmanError::ReadyTimeout("mute".into())));
        assert_eq!(sup.status()["mute"].state, ProcessState::Failed);
    }

    #[test]
    fn spawn_failure() {
        let cfg = "[[process]]\nname = \"x\"\ncommand = [\"/nonexistent/binary\"]\nready_pattern = \"r\"\n";
        let mut sup = Supervisor::new(load_config(cfg).unwrap(), OsLauncher);
        assert!(matches!(sup.start_all(), Err(ProcmanError::Spawn(n, _)) if n == "x"));
    }

    #[test]
    fn environment_is_fresh() {
        let cfg = "[[process]]\nname = \"env\"\ncommand = [\"/bin/sh\", \"-c\", \"echo V=$FOO H=$HOME\"]\n\
                   ready_pattern = \"^V=bar H=$\"\nstart_timeout_ms = 3000\n[process.env]\nFOO = \"bar\"\n";
        let mut sup = Supervisor::new(load_config(cfg).unwrap(), OsLauncher);
        assert_eq!(sup.start_all().unwrap()["env"].state, ProcessState::Ready);
    }

    #[test]
    fn restart_cascades_to_dependents() {
        let mut sup = Supervisor::new(load_config(&chain_config()).unwrap(), OsLauncher);
        sup.start_all().unwrap();
        let before = sup.history().len();
        let st = sup.restart("hal").unwrap();
        assert_eq!(st.state, ProcessState::Ready);
        assert_eq!(st.restarts, 1);
        let relaunched: Vec<_> = sup.history()[before..]
            .iter()
            .filter(|e| e.kind == EventKind::Launched)
            .map(|e| e.process.as_str())
            .collect();
        assert_eq!(relaunched, ["hal", "controller"]);
        assert_eq!(sup.restart("hal").unwrap().restarts, 2);
        assert!(sup.all_ready());
        assert_launch_after_dependencies(&sup);
        assert_eq!(
            sup.restart("ghost"),
            Err(ProcmanError::UnknownProcess("ghost".into()))
        );
    }

    #[test]
    fn killed_process_recovers_with_start_all() {
        let mut sup = Supervisor::new(load_config(&chain_config()).unwrap(), OsLauncher);
        sup.start_all().unwrap();
        sup.kill("hal").unwrap();
        assert_eq!(sup.status()["hal"].state, ProcessState::Stopped);
        sup.start_all().unwrap();
        assert!(sup.all_ready());
    }

    #[test]
    fn late_error_is_logged_not_restarted() {
        let cfg = sh("p", "echo READY; sleep 0.1; echo ERROR late; sleep 30", &[], 3000);
        let mut sup = Supervisor::new(load_config(&cfg).unwrap(), OsLauncher);
        sup.start_all().unwrap();
        std::thread::sleep(Duration::from_millis(400));
        let st = sup.status();
        assert_eq!(st["p"].state, ProcessState::Ready);
        assert!(sup.history().iter().any(|e| e.kind == EventKind::LateError));
    }

    #[test]
    fn empty_config_is_a_no_op() {
        let mut sup = Supervisor::new(load_config("").unwrap(), OsLauncher);
        assert!(sup.start_all().unwrap().is_empty());
        assert!(sup.history().is_empty());
    }

    #[test]
    fn in_process_launcher_never_ready_without_match() {
        let cfg = "[[process]]\nname = \"a\"\ncommand = [\"a\"]\nready_pattern = \"^up$\"\nstart_timeout_ms = 50\n";
        let launcher = FnLauncher::new(|_spec: &ProcessSpec| Ok(vec!["starting".to_string(), "upx".into()]));
        let mut sup = Supervisor::new(load_config(cfg).unwrap(), launcher);
        assert_eq!(sup.start_all(), Err(ProcmanError::ReadyTimeout("a".into())));
        assert!(sup.history().iter().all(|e| e.kind != EventKind::Ready));
    }
}
