use std::fs;
use std::net::UdpSocket;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::Result;
use clap::{Parser, Subcommand};
use spacedream::sim::{World, BUILTIN};
use spacedream_cli::{default_root, load_scenario, prepare_root, receiver_summary, run_receiver};

/// Desk-scale simulation of the robot-arm mission and its downlink.
#[derive(Parser)]
#[command(name = "spacedream", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file (or built-in scenario name) and print the report.
    Run {
        scenario: String,
        /// Directory for the board and ground file trees; must be empty.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Pace the 10 ms loop against the wall clock and measure jitter.
        #[arg(long)]
        wall_clock: bool,
        /// Also write the key=value report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Keep the run directory (a temporary default root is removed).
        #[arg(long)]
        keep: bool,
        /// Print only the summary table.
        #[arg(long)]
        quiet: bool,
    },
    /// Ground receiver: reassemble downlink datagrams into an output tree.
    Receiver {
        #[arg(long, default_value = "0.0.0.0:47100")]
        listen: String,
        #[arg(long, default_value = "rx")]
        out: PathBuf,
        /// Exit after this many seconds without traffic.
        #[arg(long)]
        idle_exit: Option<f64>,
    },
    /// Built-in scenarios.
    Scenarios {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    List,
    /// Print the scenario file of a built-in scenario.
    Show { name: String },
}

fn main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            root,
            seed,
            wall_clock,
            report,
            keep,
            quiet,
        } => {
            let mut sc = load_scenario(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            sc.wall_clock |= wall_clock;
            let temp = root.is_none();
            let root = root.unwrap_or_else(|| default_root(&sc.name));
            prepare_root(&root)?;
            let started = Instant::now();
            let r = World::new(sc, &root)?.run()?;
            let kv = r.to_kv();
            if let Some(p) = report {
                fs::write(p, &kv)?;
            }
            if !quiet {
                print!("{kv}");
                println!();
            }
            print!("{}", r.summary_table());
            println!("wall time {:.1} s, run directory {}", started.elapsed().as_secs_f64(), root.display());
            if temp && !keep {
                fs::remove_dir_all(&root)?;
            }
            Ok(if r.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Receiver { listen, out, idle_exit } => {
            let socket = UdpSocket::bind(&listen)?;
            eprintln!("listening on {}", socket.local_addr()?);
            let rx = run_receiver(&socket, &out, Duration::from_secs(1), idle_exit.map(Duration::from_secs_f64))?;
            println!("{}", receiver_summary(&rx));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Scenarios { cmd } => {
            match cmd {
                ScenarioCmd::List => {
                    for (name, _) in BUILTIN {
                        let sc = load_scenario(name)?;
                        println!("{name:<20} {}", sc.description);
                    }
                }
                ScenarioCmd::Show { name } => match BUILTIN.iter().find(|(n, _)| *n == name) {
                    Some((_, text)) => print!("{text}"),
                    None => anyhow::bail!("unknown built-in scenario `{name}`"),
                },
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
