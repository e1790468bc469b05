use std::net::UdpSocket;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Result;
use clap::Parser;
use spacedream_cli::{receiver_summary, run_receiver};

/// Receive downlink datagrams and write `<out>/<generation>/<name>` plus
/// `.holes` reports for incomplete files.
#[derive(Parser)]
#[command(name = "datasync-recv", version)]
struct Args {
    #[arg(long, default_value = "0.0.0.0:47100")]
    listen: String,
    #[arg(long, default_value = "rx")]
    out: PathBuf,
    /// Seconds between rewrites of the output tree.
    #[arg(long, default_value_t = 1.0)]
    flush: f64,
    /// Exit after this many seconds without traffic.
    #[arg(long)]
    idle_exit: Option<f64>,
}

fn main() -> Result<()> {
    let a = Args::parse();
    let socket = UdpSocket::bind(&a.listen)?;
    eprintln!("listening on {}", socket.local_addr()?);
    let rx = run_receiver(
        &socket,
        &a.out,
        Duration::from_secs_f64(a.flush),
        a.idle_exit.map(Duration::from_secs_f64),
    )?;
    println!("{}", receiver_summary(&rx));
    Ok(())
}
