use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::{file_id, Fragment, FragmentKind, Metadata, MAX_PAYLOAD};

pub const MIN_FRAGMENT_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Higher is more important.
    pub priority: i32,
    /// Total number of transmissions per fragment.
    pub resend_count: u32,
    #[serde(with = "millis", rename = "min_resend_interval_ms")]
    pub min_resend_interval: Duration,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            priority: 0,
            resend_count: 2,
            min_resend_interval: Duration::from_secs(1),
        }
    }
}

impl TransferConfig {
    /// Settings for metadata and header copies.
    pub fn elevated(&self) -> Self {
        Self {
            priority: self.priority.saturating_add(1),
            resend_count: self.resend_count.saturating_add(2),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FragmentError {
    #[error("fragment size {0} outside [{MIN_FRAGMENT_SIZE}, {MAX_PAYLOAD}]")]
    FragmentSize(usize),
    #[error("name too long for a metadata fragment")]
    NameTooLong,
}

/// A fragment with the transfer settings that apply to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub fragment: Fragment,
    pub transfer: TransferConfig,
}

pub fn is_jpeg_name(name: &str) -> bool {
    let n = name.to_ascii_lowercase();
    n.ends_with(".jpg") || n.ends_with(".jpeg")
}

/// Split one file version into data fragments, a metadata fragment and, for
/// JPEG files, a copy of the first data fragment. An empty file yields the
/// metadata fragment only.
pub fn fragment_file(
    name: &str,
    content: &[u8],
    generation: u32,
    fragment_size: usize,
    cfg: TransferConfig,
) -> Result<Vec<Outgoing>, FragmentError> {
    if !(MIN_FRAGMENT_SIZE..=MAX_PAYLOAD).contains(&fragment_size) {
        return Err(FragmentError::FragmentSize(fragment_size));
    }
    let file_crc = crc32fast::hash(content);
    let id = file_id(name, file_crc);
    let total = content.len().div_ceil(fragment_size) as u32;
    let meta = Metadata {
        name: name.to_string(),
        size: content.len() as u64,
        total_frags: total,
        file_crc,
        fragment_size: fragment_size as u32,
    }
    .encode();
    if meta.len() > MAX_PAYLOAD.min(fragment_size.max(1024)) {
        return Err(FragmentError::NameTooLong);
    }
    let frag = |kind, frag_index, payload: &[u8]| Fragment {
        kind,
        file_id: id,
        generation,
        frag_index,
        total_frags: total,
        payload: payload.to_vec(),
    };
    let elevated = cfg.elevated();
    let mut out = vec![Outgoing {
        fragment: frag(FragmentKind::Metadata, 0, &meta),
        transfer: elevated,
    }];
    if is_jpeg_name(name) && !content.is_empty() {
        out.push(Outgoing {
            fragment: frag(FragmentKind::HeaderCopy, 0, &content[..fragment_size.min(content.len())]),
            transfer: elevated,
        });
    }
    out.extend(content.chunks(fragment_size).enumerate().map(|(i, c)| Outgoing {
        fragment: frag(FragmentKind::Data, i as u32, c),
        transfer: cfg,
    }));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TransferConfig {
        TransferConfig {
            priority: 5,
            resend_count: 3,
            min_resend_interval: Duration::ZERO,
        }
    }

    fn data(out: &[Outgoing]) -> Vec<&Fragment> {
        out.iter().map(|o| &o.fragment).filter(|f| f.kind == FragmentKind::Data).collect()
    }

    #[test]
    fn splits_2500_bytes() {
        let content: Vec<u8> = (0..2500u32).map(|i| i as u8).collect();
        let out = fragment_file("logs/a.sdlg", &content, 1, 1024, cfg()).unwrap();
        let d = data(&out);
        assert_eq!(d.iter().map(|f| f.payload.len()).collect::<Vec<_>>(), vec![1024, 1024, 452]);
        assert!(d.iter().all(|f| f.total_frags == 3));
        let metas: Vec<&Outgoing> = out.iter().filter(|o| o.fragment.kind == FragmentKind::Metadata).collect();
        assert_eq!(metas.len(), 1);
        assert_eq!(metas[0].transfer.priority, 6);
        assert_eq!(metas[0].transfer.resend_count, 5);
        let m = Metadata::decode(&metas[0].fragment.payload).unwrap();
        assert_eq!((m.size, m.total_frags, m.file_crc), (2500, 3, crc32fast::hash(&content)));
        assert!(out.iter().all(|o| o.fragment.kind != FragmentKind::HeaderCopy));
    }

    #[test]
    fn jpeg_gets_header_copy() {
        let content = vec![0xAB; 3000];
        let out = fragment_file("media/base/1.jpg", &content, 1, 1024, cfg()).unwrap();
        let hc: Vec<&Outgoing> = out.iter().filter(|o| o.fragment.kind == FragmentKind::HeaderCopy).collect();
        assert_eq!(hc.len(), 1);
        assert_eq!(hc[0].fragment.payload, data(&out)[0].payload);
        assert_eq!(hc[0].transfer.priority, 6);
    }

    #[test]
    fn empty_file_is_metadata_only() {
        let out = fragment_file("x.jpg", &[], 1, 1024, cfg()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].fragment.kind, FragmentKind::Metadata);
        assert_eq!(out[0].fragment.total_frags, 0);
    }

    #[test]
    fn rejects_tiny_fragments() {
        assert_eq!(fragment_file("x", b"abc", 1, 63, cfg()), Err(FragmentError::FragmentSize(63)));
    }
}
