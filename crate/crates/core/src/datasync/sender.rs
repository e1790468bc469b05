use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::fragment::{fragment_file, FragmentError, TransferConfig};
use super::limiter::TokenBucket;
use super::queue::{Recency, Scheduled, SendQueue};
use super::watcher::{FileVersion, FolderWatcher, WatchError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FolderRule {
    /// Matched against the file name below the generation folder.
    pub prefix: String,
    pub transfer: TransferConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    pub fragment_size: usize,
    pub packet_budget: usize,
    pub rate_bps: f64,
    pub rescan_period_ms: u64,
    pub recycle_idle: bool,
    pub default: TransferConfig,
    #[serde(rename = "folder")]
    pub folders: Vec<FolderRule>,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            fragment_size: 1024,
            packet_budget: 1400,
            rate_bps: 1e6,
            rescan_period_ms: 1000,
            recycle_idle: false,
            default: TransferConfig::default(),
            folders: Vec::new(),
        }
    }
}

impl SyncConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Longest matching prefix wins.
    pub fn transfer_for(&self, name: &str) -> TransferConfig {
        self.folders
            .iter()
            .filter(|r| name.starts_with(&r.prefix))
            .max_by_key(|r| r.prefix.len())
            .map_or(self.default, |r| r.transfer)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenderStats {
    pub files: u64,
    pub fragments: u64,
    pub packets: u64,
    pub bytes: u64,
}

/// One send in the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub at: Duration,
    pub packet: u64,
    pub sched: Scheduled,
}

pub struct Sender {
    cfg: SyncConfig,
    watcher: Option<FolderWatcher>,
    queue: SendQueue,
    bucket: TokenBucket,
    order: u64,
    stats: SenderStats,
    trace: Option<Vec<TraceEntry>>,
    enqueued: Vec<(u64, u32, String)>,
}

impl Sender {
    pub fn new(cfg: SyncConfig) -> Self {
        Self {
            queue: SendQueue::new(cfg.recycle_idle),
            bucket: TokenBucket::new(cfg.rate_bps, cfg.packet_budget),
            cfg,
            watcher: None,
            order: 0,
            stats: SenderStats::default(),
            trace: None,
            enqueued: Vec::new(),
        }
    }

    /// Watch `root` (`<root>/<generation>/...`).
    pub fn watching(cfg: SyncConfig, root: impl Into<PathBuf>, generation: u32) -> Result<Self, WatchError> {
        let period = Duration::from_millis(cfg.rescan_period_ms);
        let mut s = Self::new(cfg);
        s.watcher = Some(FolderWatcher::new(root, period, generation)?);
        Ok(s)
    }

    pub fn record_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn stats(&self) -> &SenderStats {
        &self.stats
    }

    pub fn config(&self) -> &SyncConfig {
        &self.cfg
    }

    pub fn watcher_mut(&mut self) -> Option<&mut FolderWatcher> {
        self.watcher.as_mut()
    }

    /// `(file_id, generation, name)` of every enqueued file version.
    pub fn enqueued(&self) -> &[(u64, u32, String)] {
        &self.enqueued
    }

    pub fn queue_pending(&self) -> usize {
        self.queue.pending()
    }

    pub fn next_eligible(&self) -> Option<Duration> {
        self.queue.next_eligible()
    }

    pub fn enqueue(&mut self, name: &str, content: &[u8], generation: u32) -> Result<u64, FragmentError> {
        let transfer = self.cfg.transfer_for(name);
        self.enqueue_with(name, content, generation, transfer)
    }

    pub fn enqueue_with(&mut self, name: &str, content: &[u8], generation: u32, transfer: TransferConfig) -> Result<u64, FragmentError> {
        let frags = fragment_file(name, content, generation, self.cfg.fragment_size, transfer)?;
        let id = frags[0].fragment.file_id;
        self.stats.files += 1;
        self.enqueued.push((id, generation, name.to_string()));
        self.queue.extend(
            frags,
            Recency {
                generation,
                order: self.order,
            },
        );
        self.order += 1;
        Ok(id)
    }

    fn enqueue_version(&mut self, v: FileVersion) -> Result<(), FragmentError> {
        self.enqueue(&v.name, &v.content, v.generation).map(|_| ())
    }

    /// Pick up folder changes, then emit the packets the rate allows at `now`.
    pub fn poll(&mut self, now: Duration) -> Result<Vec<Vec<u8>>, WatchError> {
        if let Some(w) = self.watcher.as_mut() {
            for v in w.poll(now)? {
                // names too long for metadata are skipped
                let _ = self.enqueue_version(v);
            }
        }
        Ok(self.packets(now))
    }

    /// Pack whole fragments into packets up to the packet budget while
    /// tokens last.
    pub fn packets(&mut self, now: Duration) -> Vec<Vec<u8>> {
        self.bucket.refill(now);
        let mut out = Vec::new();
        let mut cur: Vec<u8> = Vec::new();
        while let Some(len) = self.queue.peek_len(now) {
            if !cur.is_empty() && cur.len() + len > self.cfg.packet_budget {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            if !self.bucket.try_take(len as f64 * 8.0) {
                break;
            }
            let s = self.queue.schedule_next(now).expect("peeked entry");
            cur.extend_from_slice(&s.bytes);
            self.stats.fragments += 1;
            if let Some(t) = self.trace.as_mut() {
                t.push(TraceEntry {
                    at: now,
                    packet: self.stats.packets + out.len() as u64,
                    sched: s,
                });
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        self.stats.packets += out.len() as u64;
        self.stats.bytes += out.iter().map(|p| p.len() as u64).sum::<u64>();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasync::wire::{decode, OVERHEAD};

    #[test]
    fn config_from_toml() {
        let c = SyncConfig::from_toml(
            r#"
            rate_bps = 500000
            [default]
            priority = 0
            resend_count = 2
            min_resend_interval_ms = 250
            [[folder]]
            prefix = "media/"
            transfer = { priority = 5, resend_count = 3, min_resend_interval_ms = 100 }
            [[folder]]
            prefix = "media/base/"
            transfer = { priority = 7, resend_count = 1, min_resend_interval_ms = 0 }
            "#,
        )
        .unwrap();
        assert_eq!(c.rate_bps, 500000.0);
        assert_eq!(c.fragment_size, 1024);
        assert_eq!(c.transfer_for("media/end_effector/1.jpg").priority, 5);
        assert_eq!(c.transfer_for("media/base/1.jpg").priority, 7);
        assert_eq!(c.transfer_for("logs/x.sdlg").min_resend_interval, Duration::from_millis(250));
        assert!(SyncConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn one_data_fragment_per_packet() {
        let mut s = Sender::new(SyncConfig::default());
        s.enqueue("f", &[5u8; 10 * 1024], 1).unwrap();
        let packets = s.packets(Duration::ZERO);
        assert!(!packets.is_empty());
        for p in &packets {
            assert!(p.len() <= 1400);
            let mut i = 0;
            let mut n = 0;
            while i < p.len() {
                let (f, len) = decode(&p[i..]).unwrap();
                i += len;
                n += (f.payload.len() == 1024) as usize;
            }
            assert!(n <= 1);
        }
        assert_eq!(packets[0].len(), OVERHEAD + 23 + OVERHEAD + 1024);
    }

    #[test]
    fn empty_queue_is_idle() {
        let mut s = Sender::new(SyncConfig::default());
        for ms in 0..100 {
            assert!(s.packets(Duration::from_millis(ms)).is_empty());
        }
        assert_eq!(s.stats().packets, 0);
    }
}
