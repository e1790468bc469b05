//! Topic recorder writing rate-limited, rotated `.sdlg` logs.

pub mod format;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{Bus, BusError, Message, Subscription};

pub use format::{read_log, Footer, LogFile, LogHeader, LogRecord, RECORD_OVERHEAD};

/// Extension of closed log files; the active file carries `.part` after it.
pub const LOG_EXT: &str = "sdlg";
pub const PART_EXT: &str = "part";

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("record rate for {topic} must be in (0, {nominal}] Hz, got {rate}")]
    BadRate { topic: String, rate: f64, nominal: f64 },
    #[error("rotation size must be > 0")]
    BadRotation,
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRate {
    pub topic: String,
    /// Hz
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingConfig {
    pub topics: Vec<TopicRate>,
    pub rotation_bytes: u64,
    pub capacity_bytes: Option<u64>,
}

/// Nominal payload sizes of the recorded topics, bytes.
pub const PROFILE_TOPICS: [(&str, usize); 5] = [
    ("hal/telemetry", 160),
    ("hal/command", 160),
    ("controller/state", 64),
    ("hal/raw", 640),
    ("controller/signals", 504),
];

impl RecordingConfig {
    fn profile(rates: [f64; 5]) -> Self {
        Self {
            topics: PROFILE_TOPICS
                .iter()
                .zip(rates)
                .map(|((t, _), rate)| TopicRate {
                    topic: t.to_string(),
                    rate,
                })
                .collect(),
            rotation_bytes: 256 * 1024,
            capacity_bytes: None,
        }
    }

    /// Everything at the 100 Hz loop rate.
    pub fn full() -> Self {
        Self::profile([100.0; 5])
    }

    /// Reduced rates for the space flight downlink budget.
    pub fn flight() -> Self {
        Self::profile([100.0, 50.0, 10.0, 10.0, 20.0])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.topics.iter_mut().for_each(|t| t.rate *= factor);
        c
    }

    /// Expected output in bit/s given payload sizes per topic.
    pub fn expected_bit_rate(&self, payload_bytes: impl Fn(&str) -> usize) -> f64 {
        self.topics
            .iter()
            .map(|t| t.rate * (payload_bytes(&t.topic) + RECORD_OVERHEAD) as f64 * 8.0)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecorderFault {
    StorageFull { topic: String },
    Io(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicStats {
    pub records: u64,
    pub bytes: u64,
    pub files_closed: u64,
    pub dropped: u64,
}

fn file_stem(topic: &str) -> String {
    topic.replace('/', "-")
}

struct ActiveFile {
    file: File,
    part: PathBuf,
    final_path: PathBuf,
    crc: crc32fast::Hasher,
    size: u64,
    count: u64,
}

impl ActiveFile {
    fn write(&mut self, b: &[u8]) -> io::Result<()> {
        self.file.write_all(b)?;
        self.crc.update(b);
        self.size += b.len() as u64;
        Ok(())
    }

    fn close(mut self) -> io::Result<PathBuf> {
        let footer = format::encode_footer(self.count, self.crc.clone().finalize());
        self.file.write_all(&footer)?;
        self.file.sync_data()?;
        fs::rename(&self.part, &self.final_path)?;
        Ok(self.final_path)
    }
}

struct TopicWriter {
    topic: String,
    schema: String,
    sub: Subscription,
    period_ns: u64,
    next_tick: Option<u64>,
    latest: Option<Message>,
    index: u32,
    active: Option<ActiveFile>,
    stats: TopicStats,
}

pub struct Recorder {
    dir: PathBuf,
    generation: u32,
    rotation: u64,
    capacity: Option<u64>,
    writers: Vec<TopicWriter>,
    fault: Option<RecorderFault>,
    closed: Vec<PathBuf>,
    total_bytes: u64,
}

impl Recorder {
    /// Subscribe to every configured topic and record into `dir`
    /// (normally `tx/<generation>/logs`).
    pub fn new(bus: &Bus, cfg: &RecordingConfig, dir: impl Into<PathBuf>, generation: u32) -> Result<Self, RecorderError> {
        if cfg.rotation_bytes == 0 {
            return Err(RecorderError::BadRotation);
        }
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut writers = Vec::new();
        for t in &cfg.topics {
            let spec = bus.topic_spec(&t.topic).ok_or_else(|| BusError::UnknownTopic(t.topic.clone()))?;
            let nominal = spec.nominal_rate;
            if !(t.rate > 0.0) || (nominal > 0.0 && t.rate > nominal * (1.0 + 1e-9)) {
                return Err(RecorderError::BadRate {
                    topic: t.topic.clone(),
                    rate: t.rate,
                    nominal,
                });
            }
            writers.push(TopicWriter {
                topic: t.topic.clone(),
                schema: spec.schema_id.clone(),
                sub: bus.subscribe_with_depth(&t.topic, 256)?,
                period_ns: (1e9 / t.rate).round() as u64,
                next_tick: None,
                latest: None,
                index: 0,
                active: None,
                stats: TopicStats::default(),
            });
        }
        Ok(Self {
            dir,
            generation,
            rotation: cfg.rotation_bytes,
            capacity: cfg.capacity_bytes,
            writers,
            fault: None,
            closed: Vec::new(),
            total_bytes: 0,
        })
    }

    pub fn fault(&self) -> Option<&RecorderFault> {
        self.fault.as_ref()
    }

    pub fn stats(&self) -> BTreeMap<String, TopicStats> {
        self.writers
            .iter()
            .map(|w| {
                let mut s = w.stats.clone();
                s.dropped = w.sub.overflow_count();
                (w.topic.clone(), s)
            })
            .collect()
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    /// Files closed since the last call.
    pub fn take_closed(&mut self) -> Vec<PathBuf> {
        std::mem::take(&mut self.closed)
    }

    /// Pull pending messages and write at most one record per topic whose
    /// record tick is due at `now`. The newest message wins.
    pub fn poll(&mut self, now: Duration) -> Option<RecorderFault> {
        if self.fault.is_some() {
            for w in &self.writers {
                w.sub.drain();
            }
            return None;
        }
        let now_ns = now.as_nanos() as u64;
        for i in 0..self.writers.len() {
            let w = &mut self.writers[i];
            if let Some(m) = w.sub.drain().pop() {
                w.latest = Some(m);
            }
            let tick = *w.next_tick.get_or_insert(now_ns);
            if now_ns < tick {
                continue;
            }
            let due = w.next_tick.unwrap() + w.period_ns;
            // skip missed ticks rather than bursting
            w.next_tick = Some(if due <= now_ns { now_ns + w.period_ns } else { due });
            let Some(msg) = w.latest.take() else { continue };
            if let Err(f) = self.write_record(i, msg) {
                self.fault = Some(f.clone());
                return Some(f);
            }
        }
        None
    }

    fn open(&self, i: usize) -> io::Result<ActiveFile> {
        let w = &self.writers[i];
        let final_path = self.dir.join(format!("{}_{}.{LOG_EXT}", file_stem(&w.topic), w.index));
        let part = final_path.with_extension(format!("{LOG_EXT}.{PART_EXT}"));
        let mut f = ActiveFile {
            file: File::create(&part)?,
            part,
            final_path,
            crc: crc32fast::Hasher::new(),
            size: 0,
            count: 0,
        };
        let header = LogHeader {
            boot_generation: self.generation,
            topic: w.topic.clone(),
            schema_id: w.schema.clone(),
        };
        f.write(&header.encode())?;
        Ok(f)
    }

    fn write_record(&mut self, i: usize, msg: Message) -> Result<(), RecorderFault> {
        let bytes = format::encode_record(&LogRecord {
            seq: msg.seq,
            stamp: msg.stamp,
            payload: msg.payload,
        });
        let io_fault = |e: io::Error| RecorderFault::Io(e.to_string());
        if let Some(cap) = self.capacity {
            if self.total_bytes + bytes.len() as u64 > cap {
                return Err(RecorderFault::StorageFull {
                    topic: self.writers[i].topic.clone(),
                });
            }
        }
        if self.writers[i].active.is_none() {
            let f = self.open(i).map_err(io_fault)?;
            self.total_bytes += f.size;
            self.writers[i].active = Some(f);
        }
        let w = &mut self.writers[i];
        let f = w.active.as_mut().unwrap();
        f.write(&bytes).map_err(io_fault)?;
        f.count += 1;
        w.stats.records += 1;
        w.stats.bytes += bytes.len() as u64;
        self.total_bytes += bytes.len() as u64;
        if f.size >= self.rotation {
            self.rotate_writer(i).map_err(io_fault)?;
        }
        Ok(())
    }

    fn rotate_writer(&mut self, i: usize) -> io::Result<()> {
        let w = &mut self.writers[i];
        if let Some(f) = w.active.take() {
            let path = f.close()?;
            self.total_bytes += format::FOOTER_BYTES as u64;
            w.index += 1;
            w.stats.files_closed += 1;
            self.closed.push(path);
        }
        Ok(())
    }

    /// Close every active file (end of run or before a reboot).
    pub fn close(&mut self) -> io::Result<()> {
        for i in 0..self.writers.len() {
            self.rotate_writer(i)?;
        }
        Ok(())
    }
}

impl Recorder {
    /// Stop without finalising, as a hard reset would: active files stay
    /// `.part` with no footer.
    pub fn abandon(mut self) {
        for w in &mut self.writers {
            w.active.take();
        }
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

/// Rename `.part` logs left by a reset under `dir` (recursively) so they
/// can be transmitted. Their footer is missing; records stay readable.
pub fn recover_partial(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(recover_partial(&p)?);
        } else if p.to_string_lossy().ends_with(&format!(".{LOG_EXT}.{PART_EXT}")) {
            let target = p.with_extension("");
            fs::rename(&p, &target)?;
            out.push(target);
        }
    }
    Ok(out)
}

/// Closed logs under `dir`, sorted by name.
pub fn closed_logs(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == LOG_EXT))
        .collect();
    v.sort();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::TopicSpec;

    fn bus_with(topic: &str, rate: f64) -> Bus {
        let bus = Bus::new();
        bus.register_topic(TopicSpec::new(topic, "test/v1", rate)).unwrap();
        bus
    }

    fn cfg(topic: &str, rate: f64, rotation: u64) -> RecordingConfig {
        RecordingConfig {
            topics: vec![TopicRate {
                topic: topic.into(),
                rate,
            }],
            rotation_bytes: rotation,
            capacity_bytes: None,
        }
    }

    /// Publish at 100 Hz for `secs` and poll after each publish.
    fn drive(bus: &Bus, rec: &mut Recorder, topic: &str, payload: usize, secs: u64) {
        for k in 0..secs * 100 {
            let t = Duration::from_millis(10 * k);
            bus.publish(topic, &vec![k as u8; payload], t).unwrap();
            rec.poll(t);
        }
    }

    #[test]
    fn abandoned_logs_recover_without_footer() {
        let dir = tempfile::tempdir().unwrap();
        let bus = bus_with("a", 100.0);
        let mut rec = Recorder::new(&bus, &cfg("a", 100.0, 1 << 30), dir.path().join("1/logs"), 1).unwrap();
        drive(&bus, &mut rec, "a", 8, 1);
        rec.abandon();
        assert!(closed_logs(&dir.path().join("1/logs")).unwrap().is_empty());
        let rec = recover_partial(dir.path()).unwrap();
        assert_eq!(rec, vec![dir.path().join("1/logs/a_0.sdlg")]);
        let log = read_log(&fs::read(&rec[0]).unwrap()).unwrap();
        assert_eq!(log.footer, format::Footer::Missing);
        assert_eq!(log.records.len(), 100);
    }

    #[test]
    fn downsamples_to_record_rate() {
        let dir = tempfile::tempdir().unwrap();
        let bus = bus_with("a", 100.0);
        let mut rec = Recorder::new(&bus, &cfg("a", 10.0, 1 << 30), dir.path(), 1).unwrap();
        drive(&bus, &mut rec, "a", 16, 10);
        rec.close().unwrap();
        let logs = closed_logs(dir.path()).unwrap();
        assert_eq!(logs.len(), 1);
        let log = read_log(&fs::read(&logs[0]).unwrap()).unwrap();
        assert!((90..=110).contains(&log.records.len()), "{}", log.records.len());
        assert_eq!(log.footer, Footer::Valid { count: log.records.len() as u64 });
        // last value: record k was published at the record tick itself
        assert!(log.records.iter().all(|r| r.seq % 10 == 0));
    }

    #[test]
    fn full_rate_has_no_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let bus = bus_with("a", 100.0);
        let mut rec = Recorder::new(&bus, &cfg("a", 100.0, 1 << 30), dir.path(), 1).unwrap();
        drive(&bus, &mut rec, "a", 8, 3);
        rec.close().unwrap();
        let log = read_log(&fs::read(&closed_logs(dir.path()).unwrap()[0]).unwrap()).unwrap();
        let seqs: Vec<u64> = log.records.iter().map(|r| r.seq).collect();
        assert_eq!(seqs, (0..300).collect::<Vec<_>>());
        assert!(log.records.windows(2).all(|w| w[0].stamp <= w[1].stamp));
    }

    #[test]
    fn rotation_produces_closed_files() {
        let dir = tempfile::tempdir().unwrap();
        let bus = bus_with("x/y", 100.0);
        // each record is 100 + 20 bytes; header is 4+2+4+2+3+2+7 = 24 bytes
        let rotation = 24 + 10 * 120;
        let mut rec = Recorder::new(&bus, &cfg("x/y", 100.0, rotation), dir.path(), 2).unwrap();
        drive(&bus, &mut rec, "x/y", 100, 0);
        assert!(rec.take_closed().is_empty());
        for k in 0..25 {
            let t = Duration::from_millis(10 * k);
            bus.publish("x/y", &[1u8; 100], t).unwrap();
            rec.poll(t);
        }
        let closed = rec.take_closed();
        assert_eq!(closed.len(), 2);
        assert!(closed[0].ends_with("x-y_0.sdlg"));
        assert!(dir.path().join("x-y_2.sdlg.part").exists());
        for p in &closed {
            let b = fs::read(p).unwrap();
            assert_eq!(b.len() as u64, rotation + format::FOOTER_BYTES as u64);
            let log = read_log(&b).unwrap();
            assert_eq!(log.records.len(), 10);
            assert_eq!(log.header.boot_generation, 2);
            assert_eq!(log.footer, Footer::Valid { count: 10 });
        }
        rec.close().unwrap();
        assert_eq!(closed_logs(dir.path()).unwrap().len(), 3);
    }

    #[test]
    fn no_writes_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let bus = bus_with("a", 100.0);
        let mut rec = Recorder::new(&bus, &cfg("a", 10.0, 100), dir.path(), 1).unwrap();
        for k in 0..100 {
            rec.poll(Duration::from_millis(10 * k));
        }
        rec.close().unwrap();
        assert!(closed_logs(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn storage_full_stops_recording() {
        let dir = tempfile::tempdir().unwrap();
        let bus = bus_with("a", 100.0);
        let mut c = cfg("a", 100.0, 1 << 20);
        c.capacity_bytes = Some(500);
        let mut rec = Recorder::new(&bus, &c, dir.path(), 1).unwrap();
        let mut fault = None;
        for k in 0..20 {
            let t = Duration::from_millis(10 * k);
            bus.publish("a", &[0u8; 80], t).unwrap();
            fault = fault.or(rec.poll(t));
        }
        assert!(matches!(fault, Some(RecorderFault::StorageFull { .. })));
        assert!(rec.total_bytes() <= 500);
        assert_eq!(rec.stats()["a"].records, 4);
    }

    #[test]
    fn rejects_bad_rates() {
        let dir = tempfile::tempdir().unwrap();
        let bus = bus_with("a", 10.0);
        assert!(matches!(
            Recorder::new(&bus, &cfg("a", 20.0, 10), dir.path(), 1),
            Err(RecorderError::BadRate { .. })
        ));
        assert!(matches!(
            Recorder::new(&bus, &cfg("a", 0.0, 10), dir.path(), 1),
            Err(RecorderError::BadRate { .. })
        ));
        assert!(matches!(
            Recorder::new(&bus, &cfg("b", 1.0, 10), dir.path(), 1),
            Err(RecorderError::Bus(BusError::UnknownTopic(_)))
        ));
    }

    #[test]
    fn profile_rates() {
        let size = |t: &str| PROFILE_TOPICS.iter().find(|(n, _)| *n == t).unwrap().1;
        let full = RecordingConfig::full().expected_bit_rate(size);
        let flight = RecordingConfig::flight().expected_bit_rate(size);
        assert!((full / 1.3e6 - 1.0).abs() < 0.15, "{full}");
        assert!(flight < 1e6, "{flight}");
        let half = RecordingConfig::full().scaled(0.5).expected_bit_rate(size);
        assert!((half / full - 0.5).abs() < 1e-12);
    }
}
