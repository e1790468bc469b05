use std::fs;
use std::net::UdpSocket;
use std::path::PathBuf;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use clap::Parser;
use notify::{RecursiveMode, Watcher};
use spacedream::datasync::{Sender, SyncConfig};

/// Watch a transmission folder and downlink its files over UDP.
#[derive(Parser)]
#[command(name = "datasync-send", version)]
struct Args {
    /// Transmission folder; files live at `<root>/<generation>/<name>`.
    #[arg(long)]
    root: PathBuf,
    /// Destination address.
    #[arg(long, default_value = "127.0.0.1:47100")]
    to: String,
    /// Link rate in bit/s; overrides the config file.
    #[arg(long)]
    rate: Option<f64>,
    /// Sender config (TOML): fragment size, rate, per-folder transfer settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generation for files outside a numeric generation folder.
    #[arg(long, default_value_t = 1)]
    generation: u32,
    /// Exit once the queue has been empty for this many seconds.
    #[arg(long)]
    exit_when_idle: Option<f64>,
}

fn main() -> Result<()> {
    let a = Args::parse();
    let mut cfg = match &a.config {
        Some(p) => SyncConfig::from_toml(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SyncConfig::default(),
    };
    if let Some(r) = a.rate {
        cfg.rate_bps = r;
    }
    let mut sender = Sender::watching(cfg, &a.root, a.generation)?;
    let (tx, hints) = mpsc::channel();
    let mut watcher = notify::recommended_watcher(move |res: notify::Result<notify::Event>| {
        if let Ok(ev) = res {
            for p in ev.paths {
                let _ = tx.send(p);
            }
        }
    })?;
    watcher.watch(&a.root, RecursiveMode::Recursive)?;
    let socket = UdpSocket::bind("0.0.0.0:0")?;
    socket.connect(&a.to)?;
    let t0 = Instant::now();
    let mut idle_since: Option<Instant> = None;
    loop {
        while let Ok(p) = hints.try_recv() {
            if let Some(w) = sender.watcher_mut() {
                w.hint(p);
            }
        }
        for p in sender.poll(t0.elapsed())? {
            socket.send(&p)?;
        }
        if let Some(limit) = a.exit_when_idle {
            if sender.queue_pending() == 0 {
                let since = *idle_since.get_or_insert_with(Instant::now);
                if since.elapsed().as_secs_f64() >= limit {
                    break;
                }
            } else {
                idle_since = None;
            }
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    let s = sender.stats();
    println!("files={} fragments={} packets={} bytes={}", s.files, s.fragments, s.packets, s.bytes);
    Ok(())
}
