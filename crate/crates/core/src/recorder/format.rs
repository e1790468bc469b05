//! `.sdlg` log files.
//!
//! ```text
//! header : "SDLG" | version u16 | boot_generation u32
//!          | topic_len u16 | topic | schema_len u16 | schema
//! record : payload_len u32 | seq u64 | stamp_ns u64 | payload
//! footer : "SDLE" | record_count u64 | crc32 u32   (crc over all bytes before it)
//! ```
//! All integers little endian.

use std::time::Duration;

use thiserror::Error;

pub const LOG_MAGIC: &[u8; 4] = b"SDLG";
pub const FOOTER_MAGIC: &[u8; 4] = b"SDLE";
pub const LOG_VERSION: u16 = 1;
pub const RECORD_OVERHEAD: usize = 20;
pub const FOOTER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogHeader {
    pub boot_generation: u32,
    pub topic: String,
    pub schema_id: String,
}

impl LogHeader {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(14 + self.topic.len() + self.schema_id.len());
        b.extend_from_slice(LOG_MAGIC);
        b.extend_from_slice(&LOG_VERSION.to_le_bytes());
        b.extend_from_slice(&self.boot_generation.to_le_bytes());
        for s in [&self.topic, &self.schema_id] {
            b.extend_from_slice(&(s.len() as u16).to_le_bytes());
            b.extend_from_slice(s.as_bytes());
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub seq: u64,
    pub stamp: Duration,
    pub payload: Vec<u8>,
}

pub fn encode_record(rec: &LogRecord) -> Vec<u8> {
    let mut b = Vec::with_capacity(RECORD_OVERHEAD + rec.payload.len());
    b.extend_from_slice(&(rec.payload.len() as u32).to_le_bytes());
    b.extend_from_slice(&rec.seq.to_le_bytes());
    b.extend_from_slice(&(rec.stamp.as_nanos() as u64).to_le_bytes());
    b.extend_from_slice(&rec.payload);
    b
}

pub fn encode_footer(count: u64, crc: u32) -> [u8; FOOTER_BYTES] {
    let mut b = [0u8; FOOTER_BYTES];
    b[..4].copy_from_slice(FOOTER_MAGIC);
    b[4..12].copy_from_slice(&count.to_le_bytes());
    b[12..].copy_from_slice(&crc.to_le_bytes());
    b
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogError {
    #[error("not a log file")]
    BadMagic,
    #[error("unsupported log version {0}")]
    Version(u16),
    #[error("truncated header")]
    TruncatedHeader,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Footer {
    /// Footer present and the checksum matches.
    Valid { count: u64 },
    /// Footer present but the checksum or count disagrees.
    Invalid,
    /// File ends without a footer (still open, or truncated).
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogFile {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
    pub footer: Footer,
    /// Bytes after the last complete record that could not be parsed.
    pub trailing: usize,
}

struct Cursor<'a> {
    b: &'a [u8],
    i: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.b.get(self.i..self.i.checked_add(n)?)?;
        self.i += n;
        Some(s)
    }
    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_le_bytes(self.take(2)?.try_into().ok()?))
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn string(&mut self) -> Option<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }
}

pub fn read_log(b: &[u8]) -> Result<LogFile, LogError> {
    let mut c = Cursor { b, i: 0 };
    if c.take(4) != Some(LOG_MAGIC.as_slice()) {
        return Err(LogError::BadMagic);
    }
    let version = c.u16().ok_or(LogError::TruncatedHeader)?;
    if version != LOG_VERSION {
        return Err(LogError::Version(version));
    }
    let boot_generation = c.u32().ok_or(LogError::TruncatedHeader)?;
    let topic = c.string().ok_or(LogError::TruncatedHeader)?;
    let schema_id = c.string().ok_or(LogError::TruncatedHeader)?;
    let header = LogHeader {
        boot_generation,
        topic,
        schema_id,
    };
    let mut records = Vec::new();
    let mut footer = Footer::Missing;
    loop {
        let start = c.i;
        if b.len() - start == FOOTER_BYTES && &b[start..start + 4] == FOOTER_MAGIC {
            let count = u64::from_le_bytes(b[start + 4..start + 12].try_into().unwrap());
            let crc = u32::from_le_bytes(b[start + 12..].try_into().unwrap());
            footer = if crc == crc32fast::hash(&b[..start]) && count == records.len() as u64 {
                Footer::Valid { count }
            } else {
                Footer::Invalid
            };
            c.i = b.len();
            break;
        }
        let rec = (|| {
            let len = c.u32()? as usize;
            let seq = c.u64()?;
            let stamp = Duration::from_nanos(c.u64()?);
            let payload = c.take(len)?.to_vec();
            Some(LogRecord { seq, stamp, payload })
        })();
        match rec {
            Some(r) => records.push(r),
            None => {
                c.i = start;
                break;
            }
        }
    }
    Ok(LogFile {
        header,
        records,
        footer,
        trailing: b.len() - c.i,
    })
}
