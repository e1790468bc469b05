use std::io::{BufRead, BufReader, Read};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::Sender;
use std::thread;

use super::ProcessSpec;

/// One line of process output, or `line == None` when the process exited.
#[derive(Debug, Clone)]
pub struct OutputEvent {
    pub process: String,
    pub generation: u64,
    pub line: Option<String>,
}

pub trait RunningProcess: Send {
    fn kill(&mut self);
}

pub trait Launcher {
    /// Start `spec`. Output lines must be forwarded to `events` tagged with
    /// `generation`.
    fn launch(
        &mut self,
        spec: &ProcessSpec,
        generation: u64,
        events: Sender<OutputEvent>,
    ) -> Result<Box<dyn RunningProcess>, String>;
}

/// Spawns real child processes with a freshly built environment.
pub struct OsLauncher;

struct OsChild(Child);

impl RunningProcess for OsChild {
    fn kill(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

impl Drop for OsChild {
    fn drop(&mut self) {
        self.kill();
    }
}

fn forward<R: Read + Send + 'static>(
    stream: R,
    name: String,
    generation: u64,
    events: Sender<OutputEvent>,
    report_exit: bool,
) {
    thread::spawn(move || {
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            if events
                .send(OutputEvent {
                    process: name.clone(),
                    generation,
                    line: Some(line),
                })
                .is_err()
            {
                return;
            }
        }
        if report_exit {
            let _ = events.send(OutputEvent {
                process: name,
                generation,
                line: None,
            });
        }
    });
}

impl Launcher for OsLauncher {
    fn launch(
        &mut self,
        spec: &ProcessSpec,
        generation: u64,
        events: Sender<OutputEvent>,
    ) -> Result<Box<dyn RunningProcess>, String> {
        let mut child = Command::new(&spec.command[0])
            .args(&spec.command[1..])
            .env_clear()
            .envs(&spec.env)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        let stdout = child.stdout.take().expect("piped");
        let stderr = child.stderr.take().expect("piped");
        forward(stdout, spec.name.clone(), generation, events.clone(), true);
        forward(stderr, spec.name.clone(), generation, events, false);
        Ok(Box::new(OsChild(child)))
    }
}

/// In-process launcher: a closure produces the output lines of a
/// "process" synchronously at launch time.
pub struct FnLauncher<F> {
    start: F,
}

impl<F> FnLauncher<F>
where
    F: FnMut(&ProcessSpec) -> Result<Vec<String>, String>,
{
    pub fn new(start: F) -> Self {
        Self { start }
    }
}

struct Inert;

impl RunningProcess for Inert {
    fn kill(&mut self) {}
}

impl<F> Launcher for FnLauncher<F>
where
    F: FnMut(&ProcessSpec) -> Result<Vec<String>, String>,
{
    fn launch(
        &mut self,
        spec: &ProcessSpec,
        generation: u64,
        events: Sender<OutputEvent>,
    ) -> Result<Box<dyn RunningProcess>, String> {
        for line in (self.start)(spec)? {
            let _ = events.send(OutputEvent {
                process: spec.name.clone(),
                generation,
                line: Some(line),
            });
        }
        Ok(Box::new(Inert))
    }
}
