//! UDP start command.

use std::io;
use std::net::UdpSocket;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub const START_MAGIC: [u8; 8] = *b"SDRMGO!\n";
pub const DEFAULT_START_PORT: u16 = 47000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    Flight,
    GroundTest,
}

impl StartMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StartMode::Flight => "flight",
            StartMode::GroundTest => "ground_test",
        }
    }
}

pub fn is_start_datagram(b: &[u8]) -> bool {
    b == START_MAGIC
}

/// Where start datagrams come from.
#[derive(Debug)]
pub enum StartSource {
    Udp(UdpSocket),
    /// `(arrival, payload)` pairs, for the simulated harness.
    Scripted(Vec<(Duration, Vec<u8>)>),
}

impl StartSource {
    pub fn udp(port: u16) -> io::Result<Self> {
        let s = UdpSocket::bind(("0.0.0.0", port))?;
        s.set_nonblocking(true)?;
        Ok(StartSource::Udp(s))
    }

    pub fn scripted(datagrams: impl IntoIterator<Item = (Duration, Vec<u8>)>) -> Self {
        StartSource::Scripted(datagrams.into_iter().collect())
    }

    /// Consume datagrams that arrived by `now`. Returns `(valid, malformed)`
    /// counts.
    pub fn poll(&mut self, now: Duration) -> (u32, u32) {
        let mut counts = (0, 0);
        let mut tally = |b: &[u8]| {
            if is_start_datagram(b) {
                counts.0 += 1;
            } else {
                counts.1 += 1;
            }
        };
        match self {
            StartSource::Udp(s) => {
                let mut buf = [0u8; 1500];
                while let Ok((n, _)) = s.recv_from(&mut buf) {
                    tally(&buf[..n]);
                }
            }
            StartSource::Scripted(list) => {
                list.retain(|(t, b)| {
                    if *t <= now {
                        tally(b);
                        false
                    } else {
                        true
                    }
                });
            }
        }
        counts
    }
}

/// Block on `socket` until a valid start datagram or `timeout`.
/// Malformed datagrams are ignored.
pub fn await_start_command(socket: &UdpSocket, timeout: Duration) -> io::Result<StartMode> {
    let deadline = Instant::now() + timeout;
    let mut buf = [0u8; 1500];
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Ok(StartMode::GroundTest);
        }
        socket.set_read_timeout(Some(left))?;
        match socket.recv_from(&mut buf) {
            Ok((n, _)) if is_start_datagram(&buf[..n]) => return Ok(StartMode::Flight),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_bytes() {
        assert_eq!(START_MAGIC, [0x53, 0x44, 0x52, 0x4D, 0x47, 0x4F, 0x21, 0x0A]);
        assert!(!is_start_datagram(b"SDRMGO!"));
        assert!(!is_start_datagram(b"SDRMGO!\n\n"));
    }

    #[test]
    fn udp_handshake() {
        let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
        let addr = rx.local_addr().unwrap();
        let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
        tx.send_to(b"garbage", addr).unwrap();
        tx.send_to(&START_MAGIC, addr).unwrap();
        assert_eq!(await_start_command(&rx, Duration::from_secs(2)).unwrap(), StartMode::Flight);
        assert_eq!(
            await_start_command(&rx, Duration::from_millis(50)).unwrap(),
            StartMode::GroundTest
        );
    }

    #[test]
    fn scripted_source() {
        let mut s = StartSource::scripted([
            (Duration::from_millis(10), b"nope".to_vec()),
            (Duration::from_millis(20), START_MAGIC.to_vec()),
        ]);
        assert_eq!(s.poll(Duration::from_millis(5)), (0, 0));
        assert_eq!(s.poll(Duration::from_millis(15)), (0, 1));
        assert_eq!(s.poll(Duration::from_millis(25)), (1, 0));
    }
}
