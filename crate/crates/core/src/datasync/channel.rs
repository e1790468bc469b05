//! Seeded lossy link: loss, single byte corruption, bounded reorder,
//! bandwidth delay.

use std::collections::VecDeque;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub loss: f64,
    pub corrupt: f64,
    /// Packets held back for shuffling; 0 or 1 keeps order.
    pub reorder_window: usize,
    /// 0 means unlimited.
    pub bandwidth_bps: f64,
    pub latency: Duration,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            loss: 0.0,
            corrupt: 0.0,
            reorder_window: 0,
            bandwidth_bps: 0.0,
            latency: Duration::ZERO,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub offered: u64,
    pub dropped: u64,
    pub corrupted: u64,
    pub delivered: u64,
}

#[derive(Debug)]
pub struct Channel {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
    held: Vec<(Duration, Vec<u8>)>,
    in_flight: VecDeque<(Duration, Vec<u8>)>,
    link_free: Duration,
    stats: ChannelStats,
}

/// Longest a packet waits in the reorder buffer.
const MAX_HOLD: Duration = Duration::from_millis(200);

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            held: Vec::new(),
            in_flight: VecDeque::new(),
            link_free: Duration::ZERO,
            stats: ChannelStats::default(),
        }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }

    pub fn send(&mut self, now: Duration, mut packet: Vec<u8>) {
        self.stats.offered += 1;
        if self.cfg.loss > 0.0 && self.rng.random_bool(self.cfg.loss.min(1.0)) {
            self.stats.dropped += 1;
            return;
        }
        if self.cfg.corrupt > 0.0 && !packet.is_empty() && self.rng.random_bool(self.cfg.corrupt.min(1.0)) {
            let i = self.rng.random_range(0..packet.len());
            packet[i] ^= self.rng.random_range(1..=255u8);
            self.stats.corrupted += 1;
        }
        if self.cfg.reorder_window > 1 {
            self.held.push((now, packet));
            if self.held.len() >= self.cfg.reorder_window {
                let i = self.rng.random_range(0..self.held.len());
                let (_, p) = self.held.swap_remove(i);
                self.transmit(now, p);
            }
        } else {
            self.transmit(now, packet);
        }
    }

    fn transmit(&mut self, now: Duration, packet: Vec<u8>) {
        let start = now.max(self.link_free);
        let tx = if self.cfg.bandwidth_bps > 0.0 {
            Duration::from_secs_f64(packet.len() as f64 * 8.0 / self.cfg.bandwidth_bps)
        } else {
            Duration::ZERO
        };
        self.link_free = start + tx;
        self.in_flight.push_back((self.link_free + self.cfg.latency, packet));
    }

    /// Packets whose arrival time is at or before `now`.
    pub fn deliver(&mut self, now: Duration) -> Vec<Vec<u8>> {
        while let Some(i) = self.held.iter().position(|(t, _)| now.saturating_sub(*t) >= MAX_HOLD) {
            let (_, p) = self.held.remove(i);
            self.transmit(now, p);
        }
        let mut out = Vec::new();
        while self.in_flight.front().is_some_and(|(t, _)| *t <= now) {
            out.push(self.in_flight.pop_front().unwrap().1);
        }
        self.stats.delivered += out.len() as u64;
        out
    }

    /// Release everything regardless of timing.
    pub fn flush(&mut self, now: Duration) -> Vec<Vec<u8>> {
        while !self.held.is_empty() {
            let i = self.rng.random_range(0..self.held.len());
            let (_, p) = self.held.swap_remove(i);
            self.transmit(now, p);
        }
        let out: Vec<Vec<u8>> = self.in_flight.drain(..).map(|(_, p)| p).collect();
        self.stats.delivered += out.len() as u64;
        out
    }

    pub fn in_transit(&self) -> usize {
        self.held.len() + self.in_flight.len()
    }
}
