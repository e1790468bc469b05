//! Shared plumbing for the command-line tools.

use std::fs;
use std::io::{self, Write};
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use spacedream::datasync::Receiver;
use spacedream::procman::{ProcessState, ProcessStatus};
use spacedream::sim::{Scenario, BUILTIN};

pub const MAX_DATAGRAM: usize = 65_536;

/// A scenario file path, or the name of a built-in scenario.
pub fn load_scenario(arg: &str) -> Result<Scenario> {
    let p = Path::new(arg);
    if p.is_file() {
        let text = fs::read_to_string(p).with_context(|| format!("reading {arg}"))?;
        return Ok(Scenario::from_toml(&text)?);
    }
    if BUILTIN.iter().any(|(n, _)| *n == arg) {
        return Ok(Scenario::builtin(arg)?);
    }
    bail!("{arg}: no such scenario file or built-in scenario")
}

/// An empty directory for a run; refuses to reuse a non-empty one.
pub fn prepare_root(root: &Path) -> Result<()> {
    if root.exists() && fs::read_dir(root)?.next().is_some() {
        bail!("{} is not empty; pick a fresh --root", root.display());
    }
    fs::create_dir_all(root)?;
    Ok(())
}

pub fn default_root(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("spacedream-{name}-{}", std::process::id()))
}

pub fn print_status(out: &mut impl Write, st: &[ProcessStatus]) -> io::Result<()> {
    writeln!(out, "{:<14} {:<9} {:>8}  last output", "process", "state", "restarts")?;
    for s in st {
        let state = match s.state {
            ProcessState::Stopped => "stopped",
            ProcessState::Starting => "starting",
            ProcessState::Ready => "ready",
            ProcessState::Failed => "failed",
        };
        let last = s.reason.as_deref().unwrap_or(&s.last_output_line);
        writeln!(out, "{:<14} {:<9} {:>8}  {}", s.name, state, s.restarts, last)?;
    }
    Ok(())
}

/// Ground receiver loop: ingest datagrams from `socket` and rewrite the
/// output tree every `flush_every`. Returns after `idle_exit` without
/// traffic, if given.
pub fn run_receiver(socket: &UdpSocket, out: &Path, flush_every: Duration, idle_exit: Option<Duration>) -> Result<Receiver> {
    let mut rx = Receiver::new();
    let mut buf = vec![0u8; MAX_DATAGRAM];
    socket.set_read_timeout(Some(Duration::from_millis(100)))?;
    let mut last_packet = Instant::now();
    let mut last_flush = Instant::now();
    let mut dirty = false;
    loop {
        match socket.recv_from(&mut buf) {
            Ok((n, _)) => {
                rx.ingest_packet(&buf[..n]);
                last_packet = Instant::now();
                dirty = true;
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
        if dirty && last_flush.elapsed() >= flush_every {
            rx.write_outputs(out)?;
            last_flush = Instant::now();
            dirty = false;
        }
        if idle_exit.is_some_and(|d| last_packet.elapsed() >= d) {
            rx.write_outputs(out)?;
            return Ok(rx);
        }
    }
}

pub fn receiver_summary(rx: &Receiver) -> String {
    let c = rx.counters();
    let m = rx.manifests();
    let complete = m.iter().filter(|f| f.complete).count();
    format!(
        "packets={} fragments={} duplicates={} corrupt={} malformed={} files={} complete={} with_holes={}",
        c.packets,
        c.fragments,
        c.duplicates,
        c.corrupt,
        c.malformed,
        m.len(),
        complete,
        m.len() - complete
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names_resolve() {
        assert_eq!(load_scenario("nominal").unwrap().name, "nominal");
        assert!(load_scenario("no-such-thing").is_err());
    }

    #[test]
    fn non_empty_root_refused() {
        let d = std::env::temp_dir().join(format!("sd-cli-test-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("x"), b"1").unwrap();
        assert!(prepare_root(&d).is_err());
        fs::remove_dir_all(&d).unwrap();
    }
}
