//! Transmission-folder watcher: change hints plus a periodic checksum rescan.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WatchError {
    #[error("watch root {0} does not exist")]
    RootMissing(PathBuf),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// One distinct content version of a file under the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileVersion {
    pub path: PathBuf,
    /// Path below the generation folder, `/`-separated.
    pub name: String,
    pub generation: u32,
    pub crc: u32,
    pub content: Vec<u8>,
}

/// In-progress and hidden files are skipped.
pub fn is_transferable(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    !(name.starts_with('.') || name.ends_with(".part") || name.ends_with(".tmp"))
}

pub struct FolderWatcher {
    root: PathBuf,
    rescan_period: Duration,
    default_generation: u32,
    last_scan: Option<Duration>,
    seen: HashMap<PathBuf, u32>,
    stat: HashMap<PathBuf, (u64, Option<SystemTime>)>,
    hints: BTreeSet<PathBuf>,
    rescans: u64,
}

impl FolderWatcher {
    /// Files live at `<root>/<generation>/<name>`; files outside a numeric
    /// generation folder are attributed to `default_generation`.
    pub fn new(root: impl Into<PathBuf>, rescan_period: Duration, default_generation: u32) -> Result<Self, WatchError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(WatchError::RootMissing(root));
        }
        Ok(Self {
            root,
            rescan_period,
            default_generation,
            last_scan: None,
            seen: HashMap::new(),
            stat: HashMap::new(),
            hints: BTreeSet::new(),
            rescans: 0,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn rescans(&self) -> u64 {
        self.rescans
    }

    /// A change notification for `path`.
    pub fn hint(&mut self, path: impl Into<PathBuf>) {
        self.hints.insert(path.into());
    }

    /// Process pending hints and, when due, rescan everything.
    pub fn poll(&mut self, now: Duration) -> Result<Vec<FileVersion>, WatchError> {
        if !self.root.is_dir() {
            return Err(WatchError::RootMissing(self.root.clone()));
        }
        let mut out = Vec::new();
        for p in std::mem::take(&mut self.hints) {
            if p.starts_with(&self.root) && p.is_file() {
                out.extend(self.check(&p)?);
            }
        }
        let due = self.last_scan.is_none_or(|t| now >= t + self.rescan_period);
        if due {
            self.last_scan = Some(now);
            self.rescans += 1;
            let mut files = Vec::new();
            walk(&self.root, &mut files)?;
            for p in files {
                // unchanged size and mtime: skip the read
                let meta = fs::metadata(&p).ok().map(|m| (m.len(), m.modified().ok()));
                if meta.is_some() && self.stat.get(&p) == meta.as_ref() {
                    continue;
                }
                out.extend(self.check(&p)?);
                if let Some(m) = meta {
                    self.stat.insert(p, m);
                }
            }
        }
        Ok(out)
    }

    fn check(&mut self, path: &Path) -> Result<Option<FileVersion>, WatchError> {
        if !is_transferable(path) {
            return Ok(None);
        }
        let content = match fs::read(path) {
            Ok(c) => c,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let crc = crc32fast::hash(&content);
        if self.seen.get(path) == Some(&crc) {
            return Ok(None);
        }
        self.seen.insert(path.to_path_buf(), crc);
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        let mut parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let generation = match parts.first().and_then(|p| p.parse::<u32>().ok()) {
            Some(g) if parts.len() > 1 => {
                parts.remove(0);
                g
            }
            _ => self.default_generation,
        };
        Ok(Some(FileVersion {
            path: path.to_path_buf(),
            name: parts.join("/"),
            generation,
            crc,
            content,
        }))
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else if p.is_file() {
            out.push(p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_root() {
        assert!(matches!(
            FolderWatcher::new("/definitely/not/here", Duration::from_secs(1), 1),
            Err(WatchError::RootMissing(_))
        ));
    }

    #[test]
    fn new_file_found_by_rescan_and_deduplicated() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = FolderWatcher::new(dir.path(), Duration::from_secs(1), 9).unwrap();
        assert!(w.poll(Duration::ZERO).unwrap().is_empty());
        fs::create_dir_all(dir.path().join("3/logs")).unwrap();
        fs::write(dir.path().join("3/logs/a.sdlg"), b"abc").unwrap();
        fs::write(dir.path().join("3/logs/b.sdlg.part"), b"open").unwrap();
        fs::write(dir.path().join("loose.txt"), b"x").unwrap();
        // not yet due
        assert!(w.poll(Duration::from_millis(500)).unwrap().is_empty());
        let v = w.poll(Duration::from_millis(1000)).unwrap();
        let names: Vec<(&str, u32)> = v.iter().map(|f| (f.name.as_str(), f.generation)).collect();
        assert_eq!(names, vec![("logs/a.sdlg", 3), ("loose.txt", 9)]);
        for k in 2..12 {
            assert!(w.poll(Duration::from_secs(k)).unwrap().is_empty());
        }
        assert_eq!(w.rescans(), 12);
    }

    #[test]
    fn hint_is_immediate_and_silent_change_caught_by_rescan() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = FolderWatcher::new(dir.path(), Duration::from_secs(10), 1).unwrap();
        w.poll(Duration::ZERO).unwrap();
        let p = dir.path().join("f.bin");
        fs::write(&p, b"one").unwrap();
        w.hint(&p);
        assert_eq!(w.poll(Duration::from_secs(1)).unwrap().len(), 1);
        // modified without a hint
        fs::write(&p, b"two").unwrap();
        assert!(w.poll(Duration::from_secs(2)).unwrap().is_empty());
        let v = w.poll(Duration::from_secs(10)).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].content, b"two");
    }
}
