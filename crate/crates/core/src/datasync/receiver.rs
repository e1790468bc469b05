//! Ground-side reassembly. Any byte sequence is accepted; bad input only
//! moves counters.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fragment::is_jpeg_name;
use super::wire::{self, DecodeError, Fragment, FragmentKind, Metadata, MAGIC, MAX_PAYLOAD};

/// Upper bound on fragments per file accepted from the wire.
pub const MAX_TOTAL_FRAGS: u32 = 1 << 22;
/// Upper bound on announced file size.
pub const MAX_FILE_SIZE: u64 = 1 << 32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RxCounters {
    pub packets: u64,
    pub fragments: u64,
    pub duplicates: u64,
    pub corrupt: u64,
    pub malformed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReassembleError {
    #[error("file length unknown: metadata not received")]
    UnknownLength,
    #[error("unknown file")]
    UnknownFile,
}

#[derive(Debug, Default, Clone)]
struct RxFile {
    meta: Option<Metadata>,
    total_frags: u32,
    frags: BTreeMap<u32, Vec<u8>>,
    header_copy: Option<Vec<u8>>,
    first_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileManifest {
    pub file_id: u64,
    pub generation: u32,
    pub name: Option<String>,
    pub size: Option<u64>,
    pub total_frags: u32,
    pub received: Vec<bool>,
    pub header_copy: bool,
    pub holes: u32,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reassembly {
    pub bytes: Vec<u8>,
    /// Missing data fragment indices (zero filled).
    pub holes: Vec<u32>,
    pub crc_ok: bool,
    pub header_copy_used: bool,
}

#[derive(Debug, Default)]
pub struct Receiver {
    files: HashMap<(u32, u64), RxFile>,
    counters: RxCounters,
    seen: u64,
}

impl Receiver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> &RxCounters {
        &self.counters
    }

    /// Parse every fragment in `b`, resynchronising on the magic after
    /// damage.
    pub fn ingest_packet(&mut self, b: &[u8]) {
        self.counters.packets += 1;
        let mut i = 0;
        while i < b.len() {
            match wire::decode(&b[i..]) {
                Ok((f, len)) => {
                    self.ingest(f);
                    i += len;
                }
                Err(e) => {
                    match e {
                        DecodeError::NoMagic => {}
                        DecodeError::Truncated | DecodeError::Crc => self.counters.corrupt += 1,
                        DecodeError::Version(_) | DecodeError::Kind(_) => self.counters.malformed += 1,
                    }
                    match find_magic(&b[i + 1..]) {
                        Some(off) => i += 1 + off,
                        None => break,
                    }
                }
            }
        }
    }

    fn ingest(&mut self, f: Fragment) {
        let plausible = f.total_frags <= MAX_TOTAL_FRAGS
            && f.payload.len() <= MAX_PAYLOAD
            && match f.kind {
                FragmentKind::Data => f.frag_index < f.total_frags && !f.payload.is_empty(),
                FragmentKind::HeaderCopy => f.frag_index == 0 && f.total_frags > 0 && !f.payload.is_empty(),
                FragmentKind::Metadata => true,
            };
        if !plausible {
            self.counters.malformed += 1;
            return;
        }
        let meta = if f.kind == FragmentKind::Metadata {
            match Metadata::decode(&f.payload).filter(|m| {
                m.consistent() && m.total_frags == f.total_frags && m.size <= MAX_FILE_SIZE && sanitize(&m.name).is_some()
            }) {
                Some(m) => Some(m),
                None => {
                    self.counters.malformed += 1;
                    return;
                }
            }
        } else {
            None
        };
        let seen = self.seen;
        let entry = self.files.entry((f.generation, f.file_id)).or_insert_with(|| RxFile {
            total_frags: f.total_frags,
            first_seen: seen,
            ..RxFile::default()
        });
        if entry.total_frags != f.total_frags {
            self.counters.malformed += 1;
            return;
        }
        if let Some(m) = entry.meta.as_ref() {
            let expected = m.fragment_size as usize;
            let last = f.frag_index + 1 == f.total_frags;
            let len_ok = match f.kind {
                FragmentKind::Data if last => f.payload.len() as u64 == m.size - expected as u64 * f.frag_index as u64,
                FragmentKind::Data | FragmentKind::HeaderCopy => {
                    f.payload.len() == expected.min(m.size as usize)
                }
                FragmentKind::Metadata => true,
            };
            if !len_ok {
                self.counters.malformed += 1;
                return;
            }
        }
        self.seen += 1;
        self.counters.fragments += 1;
        let dup = match f.kind {
            FragmentKind::Metadata => {
                let dup = entry.meta.is_some();
                entry.meta.get_or_insert(meta.unwrap());
                dup
            }
            FragmentKind::HeaderCopy => entry.header_copy.replace(f.payload).is_some(),
            FragmentKind::Data => entry.frags.insert(f.frag_index, f.payload).is_some(),
        };
        if dup {
            self.counters.duplicates += 1;
        }
        // drop data stored before metadata that turns out to be the wrong length
        if let Some(m) = entry.meta.clone() {
            let fs = m.fragment_size as u64;
            entry.frags.retain(|&i, p| {
                let want = if i + 1 == m.total_frags { m.size - fs * i as u64 } else { fs };
                p.len() as u64 == want
            });
            if entry.header_copy.as_ref().is_some_and(|h| h.len() as u64 != fs.min(m.size)) {
                entry.header_copy = None;
            }
        }
    }

    pub fn manifests(&self) -> Vec<FileManifest> {
        let mut keys: Vec<&(u32, u64)> = self.files.keys().collect();
        keys.sort_by_key(|k| (k.0, self.files[k].first_seen));
        keys.into_iter().map(|k| self.manifest(k.0, k.1).unwrap()).collect()
    }

    pub fn manifest(&self, generation: u32, file_id: u64) -> Option<FileManifest> {
        let f = self.files.get(&(generation, file_id))?;
        let received: Vec<bool> = (0..f.total_frags).map(|i| f.frags.contains_key(&i)).collect();
        let mut holes = received.iter().filter(|r| !**r).count() as u32;
        let jpeg = f.meta.as_ref().is_some_and(|m| is_jpeg_name(&m.name));
        if jpeg && f.header_copy.is_some() && !received.first().copied().unwrap_or(true) {
            holes -= 1;
        }
        Some(FileManifest {
            file_id,
            generation,
            name: f.meta.as_ref().map(|m| m.name.clone()),
            size: f.meta.as_ref().map(|m| m.size),
            total_frags: f.total_frags,
            received,
            header_copy: f.header_copy.is_some(),
            holes,
            complete: f.meta.is_some() && holes == 0,
        })
    }

    pub fn reassemble(&self, generation: u32, file_id: u64) -> Result<Reassembly, ReassembleError> {
        let f = self.files.get(&(generation, file_id)).ok_or(ReassembleError::UnknownFile)?;
        let m = f.meta.as_ref().ok_or(ReassembleError::UnknownLength)?;
        let fs = m.fragment_size as usize;
        let mut bytes = vec![0u8; m.size as usize];
        let mut holes = Vec::new();
        let mut header_copy_used = false;
        for i in 0..m.total_frags {
            let start = i as usize * fs;
            let src = match f.frags.get(&i) {
                Some(p) => Some(p),
                None if i == 0 && is_jpeg_name(&m.name) && f.header_copy.is_some() => {
                    header_copy_used = true;
                    f.header_copy.as_ref()
                }
                None => None,
            };
            match src {
                Some(p) => bytes[start..start + p.len()].copy_from_slice(p),
                None => holes.push(i),
            }
        }
        let crc_ok = crc32fast::hash(&bytes) == m.file_crc;
        Ok(Reassembly {
            bytes,
            holes,
            crc_ok,
            header_copy_used,
        })
    }

    /// Write every file with known metadata to `out/<generation>/<name>`,
    /// plus `<name>.holes` when fragments are missing. When several
    /// versions share a name, the one with fewest holes (then the latest)
    /// is written.
    pub fn write_outputs(&self, out: &Path) -> io::Result<Vec<PathBuf>> {
        let mut best: BTreeMap<(u32, String), (u32, u64, u64)> = BTreeMap::new();
        for ((g, id), f) in &self.files {
            let Some(m) = f.meta.as_ref() else { continue };
            let holes = self.manifest(*g, *id).unwrap().holes;
            let cand = (holes, f.first_seen, *id);
            best.entry((*g, m.name.clone()))
                .and_modify(|b| {
                    if cand.0 < b.0 || (cand.0 == b.0 && cand.1 > b.1) {
                        *b = cand;
                    }
                })
                .or_insert(cand);
        }
        let mut written = Vec::new();
        for ((g, name), (_, _, id)) in best {
            let Some(rel) = sanitize(&name) else { continue };
            let r = self.reassemble(g, id).expect("metadata present");
            let path = out.join(g.to_string()).join(rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(&path, &r.bytes)?;
            let holes_path = holes_path(&path);
            if r.holes.is_empty() {
                let _ = fs::remove_file(&holes_path);
            } else {
                let list: Vec<String> = r.holes.iter().map(u32::to_string).collect();
                let m = self.files[&(g, id)].meta.as_ref().unwrap();
                fs::write(
                    &holes_path,
                    format!(
                        "file_id={id:016x}\nsize={}\nfragment_size={}\ntotal_frags={}\nholes={}\nmissing={}\n",
                        m.size,
                        m.fragment_size,
                        m.total_frags,
                        r.holes.len(),
                        list.join(",")
                    ),
                )?;
            }
            written.push(path);
        }
        Ok(written)
    }
}

pub fn holes_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".holes");
    PathBuf::from(s)
}

fn find_magic(b: &[u8]) -> Option<usize> {
    b.windows(MAGIC.len()).position(|w| w == MAGIC)
}

/// Relative path with normal components only.
pub fn sanitize(name: &str) -> Option<PathBuf> {
    if name.is_empty() || name.contains('\0') || name.contains('\\') {
        return None;
    }
    let p = Path::new(name);
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::Normal(s) => out.push(s),
            _ => return None,
        }
    }
    (!out.as_os_str().is_empty()).then_some(out)
}
