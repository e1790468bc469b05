use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use anyhow::Result;
use clap::Parser;
use spacedream::datasync::{Channel, ChannelConfig};
use spacedream_cli::MAX_DATAGRAM;

/// UDP relay that drops, corrupts, reorders and rate-limits datagrams.
#[derive(Parser)]
#[command(name = "channel-sim", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:47099")]
    listen: String,
    #[arg(long, default_value = "127.0.0.1:47100")]
    forward: String,
    /// Packet loss probability.
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// Probability of flipping one byte.
    #[arg(long, default_value_t = 0.0)]
    corrupt: f64,
    /// Reorder window in packets (0 keeps order).
    #[arg(long, default_value_t = 0)]
    reorder: usize,
    /// Bit/s; 0 is unlimited.
    #[arg(long, default_value_t = 0.0)]
    bandwidth: f64,
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Exit after this many seconds without traffic.
    #[arg(long)]
    idle_exit: Option<f64>,
}

fn main() -> Result<()> {
    let a = Args::parse();
    anyhow::ensure!((0.0..=1.0).contains(&a.loss) && (0.0..=1.0).contains(&a.corrupt), "probabilities must lie in [0, 1]");
    let mut ch = Channel::new(ChannelConfig {
        loss: a.loss,
        corrupt: a.corrupt,
        reorder_window: a.reorder,
        bandwidth_bps: a.bandwidth,
        latency: Duration::from_millis(a.latency_ms),
        seed: a.seed,
    });
    let socket = UdpSocket::bind(&a.listen)?;
    socket.set_read_timeout(Some(Duration::from_millis(2)))?;
    let to: SocketAddr = a.forward.parse()?;
    eprintln!("relaying {} -> {to}", socket.local_addr()?);
    let t0 = Instant::now();
    let mut last = Instant::now();
    let mut buf = vec![0u8; MAX_DATAGRAM];
    loop {
        match socket.recv_from(&mut buf) {
            Ok((n, _)) => {
                ch.send(t0.elapsed(), buf[..n].to_vec());
                last = Instant::now();
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
        for p in ch.deliver(t0.elapsed()) {
            socket.send_to(&p, to)?;
        }
        if a.idle_exit.is_some_and(|d| last.elapsed().as_secs_f64() >= d) {
            for p in ch.flush(t0.elapsed()) {
                socket.send_to(&p, to)?;
            }
            break;
        }
    }
    let s = ch.stats();
    println!("offered={} dropped={} corrupted={} delivered={}", s.offered, s.dropped, s.corrupted, s.delivered);
    Ok(())
}
