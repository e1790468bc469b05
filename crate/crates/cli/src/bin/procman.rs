use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use spacedream::procman::{load_config, OsLauncher, ProcessState, ProcessStatus, Supervisor};
use spacedream_cli::print_status;

/// Start and supervise a dependency graph of processes.
#[derive(Parser)]
#[command(name = "procman", version)]
struct Cli {
    /// Directory shared between the supervisor and the status/restart commands.
    #[arg(long, global = true, default_value = ".procman")]
    state_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Start every process in dependency order and keep supervising.
    Start {
        config: PathBuf,
        /// Stop everything and exit right after start-up.
        #[arg(long)]
        once: bool,
    },
    /// Print the last status written by the supervisor.
    Status,
    /// Ask the running supervisor to restart a process and its dependents.
    Restart {
        name: String,
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
    },
    /// Ask the running supervisor to stop everything and exit.
    Stop,
}

const STATUS_FILE: &str = "status";
const STOP_FILE: &str = "stop";

fn state_name(s: ProcessState) -> &'static str {
    match s {
        ProcessState::Stopped => "stopped",
        ProcessState::Starting => "starting",
        ProcessState::Ready => "ready",
        ProcessState::Failed => "failed",
    }
}

fn parse_state(s: &str) -> Option<ProcessState> {
    Some(match s {
        "stopped" => ProcessState::Stopped,
        "starting" => ProcessState::Starting,
        "ready" => ProcessState::Ready,
        "failed" => ProcessState::Failed,
        _ => return None,
    })
}

/// One tab-separated line per process: name, state, restarts, detail.
fn write_status(dir: &Path, order: &[String], st: &std::collections::BTreeMap<String, ProcessStatus>) -> Result<()> {
    let mut text = String::new();
    for name in order {
        let s = &st[name];
        let detail = s.reason.as_deref().unwrap_or(&s.last_output_line).replace(['\t', '\n'], " ");
        text.push_str(&format!("{}\t{}\t{}\t{}\n", s.name, state_name(s.state), s.restarts, detail));
    }
    let tmp = dir.join(".status.tmp");
    fs::write(&tmp, text)?;
    fs::rename(tmp, dir.join(STATUS_FILE))?;
    Ok(())
}

fn read_status(dir: &Path) -> Result<Vec<ProcessStatus>> {
    let text = fs::read_to_string(dir.join(STATUS_FILE)).with_context(|| format!("no supervisor status in {}", dir.display()))?;
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.splitn(4, '\t').collect();
            let [name, state, restarts, detail] = f[..] else { bail!("malformed status line `{l}`") };
            Ok(ProcessStatus {
                name: name.into(),
                state: parse_state(state).context("bad state")?,
                last_output_line: detail.into(),
                restarts: restarts.parse()?,
                reason: None,
            })
        })
        .collect()
}

fn all_ready(st: &[ProcessStatus]) -> bool {
    !st.is_empty() && st.iter().all(|s| s.state == ProcessState::Ready)
}

fn start(dir: &Path, config: &Path, once: bool) -> Result<ExitCode> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let graph = load_config(&text)?;
    let order = graph.order().to_vec();
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join(STOP_FILE));
    let mut sup = Supervisor::new(graph, OsLauncher);
    if let Err(e) = sup.start_all() {
        eprintln!("start-up error: {e}");
    }
    let st = sup.status();
    write_status(dir, &order, &st)?;
    let list: Vec<ProcessStatus> = order.iter().map(|n| st[n].clone()).collect();
    print_status(&mut std::io::stdout(), &list)?;
    let ok = all_ready(&list);
    if once || !ok {
        sup.stop_all();
        return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }
    loop {
        std::thread::sleep(Duration::from_millis(200));
        if dir.join(STOP_FILE).exists() {
            let _ = fs::remove_file(dir.join(STOP_FILE));
            sup.stop_all();
            write_status(dir, &order, &sup.status())?;
            return Ok(ExitCode::SUCCESS);
        }
        let mut requests: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("restart-")))
            .collect();
        requests.sort();
        for r in requests {
            let name = r.file_name().unwrap().to_string_lossy()["restart-".len()..].to_string();
            if let Err(e) = sup.restart(&name) {
                eprintln!("restart {name}: {e}");
            }
            let _ = fs::remove_file(&r);
        }
        write_status(dir, &order, &sup.status())?;
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let dir = cli.state_dir;
    match cli.cmd {
        Cmd::Start { config, once } => start(&dir, &config, once),
        Cmd::Status => {
            let st = read_status(&dir)?;
            print_status(&mut std::io::stdout(), &st)?;
            Ok(if all_ready(&st) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Restart { name, timeout } => {
            let before = read_status(&dir)?;
            let Some(prev) = before.iter().find(|s| s.name == name) else { bail!("unknown process `{name}`") };
            let req = dir.join(format!("restart-{name}"));
            fs::write(&req, b"")?;
            let deadline = Instant::now() + Duration::from_secs_f64(timeout);
            while req.exists() {
                if Instant::now() >= deadline {
                    let _ = fs::remove_file(&req);
                    bail!("no supervisor picked up the request");
                }
                std::thread::sleep(Duration::from_millis(100));
            }
            std::thread::sleep(Duration::from_millis(300));
            let st = read_status(&dir)?;
            print_status(&mut std::io::stdout(), &st)?;
            let now = st.iter().find(|s| s.name == name).context("process vanished")?;
            Ok(if now.restarts > prev.restarts && all_ready(&st) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Stop => {
            fs::write(dir.join(STOP_FILE), b"")?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
