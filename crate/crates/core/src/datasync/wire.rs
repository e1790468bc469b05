//! Fragment wire format.
//!
//! ```text
//! "SDFR" | version u8 = 1 | kind u8 | file_id u64 | generation u32
//!        | frag_index u32 | total_frags u32 | payload_len u16 | payload | crc32 u32
//! ```
//! Little endian; the CRC (IEEE) covers every preceding byte of the fragment.

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SDFR";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 28;
pub const OVERHEAD: usize = HEADER_BYTES + 4;
pub const MAX_PAYLOAD: usize = u16::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FragmentKind {
    Data = 0,
    Metadata = 1,
    HeaderCopy = 2,
}

impl FragmentKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Data),
            1 => Some(Self::Metadata),
            2 => Some(Self::HeaderCopy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub kind: FragmentKind,
    pub file_id: u64,
    pub generation: u32,
    pub frag_index: u32,
    pub total_frags: u32,
    pub payload: Vec<u8>,
}

impl Fragment {
    pub fn wire_len(&self) -> usize {
        OVERHEAD + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        assert!(self.payload.len() <= MAX_PAYLOAD, "fragment payload too large");
        let mut b = Vec::with_capacity(self.wire_len());
        b.extend_from_slice(MAGIC);
        b.push(VERSION);
        b.push(self.kind as u8);
        b.extend_from_slice(&self.file_id.to_le_bytes());
        b.extend_from_slice(&self.generation.to_le_bytes());
        b.extend_from_slice(&self.frag_index.to_le_bytes());
        b.extend_from_slice(&self.total_frags.to_le_bytes());
        b.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        b.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("no magic at offset")]
    NoMagic,
    #[error("truncated fragment")]
    Truncated,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unknown kind {0}")]
    Kind(u8),
    #[error("checksum mismatch")]
    Crc,
}

/// Decode one fragment at the start of `b`; returns it and its wire length.
pub fn decode(b: &[u8]) -> Result<(Fragment, usize), DecodeError> {
    if b.len() < 4 || &b[..4] != MAGIC {
        return Err(DecodeError::NoMagic);
    }
    if b.len() < HEADER_BYTES {
        return Err(DecodeError::Truncated);
    }
    let len = u16::from_le_bytes([b[26], b[27]]) as usize;
    let end = HEADER_BYTES + len;
    if b.len() < end + 4 {
        return Err(DecodeError::Truncated);
    }
    let crc = u32::from_le_bytes(b[end..end + 4].try_into().unwrap());
    if crc32fast::hash(&b[..end]) != crc {
        return Err(DecodeError::Crc);
    }
    if b[4] != VERSION {
        return Err(DecodeError::Version(b[4]));
    }
    let kind = FragmentKind::from_u8(b[5]).ok_or(DecodeError::Kind(b[5]))?;
    let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
    Ok((
        Fragment {
            kind,
            file_id: u64::from_le_bytes(b[6..14].try_into().unwrap()),
            generation: u32_at(14),
            frag_index: u32_at(18),
            total_frags: u32_at(22),
            payload: b[HEADER_BYTES..end].to_vec(),
        },
        end + 4,
    ))
}

/// Payload of a metadata fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metadata {
    pub name: String,
    pub size: u64,
    pub total_frags: u32,
    pub file_crc: u32,
    pub fragment_size: u32,
}

impl Metadata {
    /// `name_len u16 | name | size u64 | total u32 | file_crc u32 | fragment_size u32`
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(22 + self.name.len());
        b.extend_from_slice(&(self.name.len() as u16).to_le_bytes());
        b.extend_from_slice(self.name.as_bytes());
        b.extend_from_slice(&self.size.to_le_bytes());
        b.extend_from_slice(&self.total_frags.to_le_bytes());
        b.extend_from_slice(&self.file_crc.to_le_bytes());
        b.extend_from_slice(&self.fragment_size.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        let n = u16::from_le_bytes(b.get(..2)?.try_into().ok()?) as usize;
        let name = std::str::from_utf8(b.get(2..2 + n)?).ok()?.to_string();
        let r = b.get(2 + n..)?;
        if r.len() != 20 {
            return None;
        }
        Some(Self {
            name,
            size: u64::from_le_bytes(r[..8].try_into().ok()?),
            total_frags: u32::from_le_bytes(r[8..12].try_into().ok()?),
            file_crc: u32::from_le_bytes(r[12..16].try_into().ok()?),
            fragment_size: u32::from_le_bytes(r[16..20].try_into().ok()?),
        })
    }

    /// Sizes agree with each other.
    pub fn consistent(&self) -> bool {
        self.fragment_size > 0
            && self.fragment_size as usize <= MAX_PAYLOAD
            && self.size.div_ceil(self.fragment_size as u64) == self.total_frags as u64
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Identity of one content version of a file: FNV-1a over the relative
/// path followed by the little-endian file CRC32.
pub fn file_id(rel_path: &str, file_crc: u32) -> u64 {
    fnv1a64(&[rel_path.as_bytes(), &file_crc.to_le_bytes()])
}
