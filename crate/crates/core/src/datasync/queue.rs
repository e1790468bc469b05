//! Send queue ordered by (priority desc, sends_done asc, recency desc,
//! frag_index asc). Entries wait `min_resend_interval` between sends and
//! retire after `resend_count` sends.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::time::Duration;

use super::fragment::{Outgoing, TransferConfig};
use super::wire::FragmentKind;

/// Newer generations first, then newer files within a generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Recency {
    pub generation: u32,
    pub order: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Key {
    priority: i32,
    sends_done: u32,
    recency: Recency,
    frag_index: u32,
    kind: FragmentKind,
    id: usize,
}

impl Ord for Key {
    fn cmp(&self, o: &Self) -> Ordering {
        self.priority
            .cmp(&o.priority)
            .then(o.sends_done.cmp(&self.sends_done))
            .then(self.recency.cmp(&o.recency))
            .then(o.frag_index.cmp(&self.frag_index))
            // metadata, header copy, data
            .then(kind_rank(self.kind).cmp(&kind_rank(o.kind)))
            .then(o.id.cmp(&self.id))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

fn kind_rank(k: FragmentKind) -> u8 {
    match k {
        FragmentKind::Metadata => 2,
        FragmentKind::HeaderCopy => 1,
        FragmentKind::Data => 0,
    }
}

#[derive(Debug, Clone)]
struct Entry {
    bytes: Vec<u8>,
    transfer: TransferConfig,
    recency: Recency,
    kind: FragmentKind,
    file_id: u64,
    generation: u32,
    frag_index: u32,
    sends_done: u32,
    last_sent: Option<Duration>,
}

impl Entry {
    fn key(&self, id: usize) -> Key {
        Key {
            priority: self.transfer.priority,
            sends_done: self.sends_done,
            recency: self.recency,
            frag_index: self.frag_index,
            kind: self.kind,
            id,
        }
    }
}

/// What was sent, for traces and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scheduled {
    pub bytes: Vec<u8>,
    pub file_id: u64,
    pub generation: u32,
    pub kind: FragmentKind,
    pub frag_index: u32,
    pub priority: i32,
    /// Sends of this fragment including this one.
    pub send_number: u32,
    /// Sent from the idle recycle pool.
    pub recycled: bool,
}

#[derive(Debug, Default)]
pub struct SendQueue {
    entries: Vec<Entry>,
    ready: BinaryHeap<Key>,
    waiting: BinaryHeap<Reverse<(Duration, usize)>>,
    retired: VecDeque<usize>,
    recycle_idle: bool,
}

impl SendQueue {
    pub fn new(recycle_idle: bool) -> Self {
        Self {
            recycle_idle,
            ..Self::default()
        }
    }

    pub fn push(&mut self, o: Outgoing, recency: Recency) {
        let id = self.entries.len();
        let f = &o.fragment;
        let e = Entry {
            bytes: f.encode(),
            transfer: o.transfer,
            recency,
            kind: f.kind,
            file_id: f.file_id,
            generation: f.generation,
            frag_index: f.frag_index,
            sends_done: 0,
            last_sent: None,
        };
        if e.transfer.resend_count == 0 {
            self.entries.push(e);
            self.retired.push_back(id);
            return;
        }
        self.ready.push(e.key(id));
        self.entries.push(e);
    }

    pub fn extend(&mut self, frags: impl IntoIterator<Item = Outgoing>, recency: Recency) {
        for o in frags {
            self.push(o, recency);
        }
    }

    fn promote(&mut self, now: Duration) {
        while let Some(Reverse((t, id))) = self.waiting.peek().copied() {
            if t > now {
                break;
            }
            self.waiting.pop();
            self.ready.push(self.entries[id].key(id));
        }
    }

    /// Entries still owed a transmission.
    pub fn pending(&self) -> usize {
        self.ready.len() + self.waiting.len()
    }

    pub fn retired(&self) -> usize {
        self.retired.len()
    }

    pub fn next_eligible(&self) -> Option<Duration> {
        self.waiting.peek().map(|Reverse((t, _))| *t)
    }

    /// Wire length of what [`schedule_next`](Self::schedule_next) would return.
    pub fn peek_len(&mut self, now: Duration) -> Option<usize> {
        self.promote(now);
        match self.ready.peek() {
            Some(k) => Some(self.entries[k.id].bytes.len()),
            None if self.recycle_idle => self.retired.front().map(|&id| self.entries[id].bytes.len()),
            None => None,
        }
    }

    pub fn schedule_next(&mut self, now: Duration) -> Option<Scheduled> {
        self.promote(now);
        let Some(key) = self.ready.pop() else {
            return self.recycle();
        };
        let id = key.id;
        let e = &mut self.entries[id];
        e.sends_done += 1;
        e.last_sent = Some(now);
        if e.sends_done < e.transfer.resend_count {
            self.waiting.push(Reverse((now + e.transfer.min_resend_interval, id)));
        } else {
            self.retired.push_back(id);
        }
        Some(self.scheduled(id, false))
    }

    /// Bandwidth would otherwise idle: resend retired fragments round-robin
    /// below every fresh entry.
    fn recycle(&mut self) -> Option<Scheduled> {
        if !self.recycle_idle {
            return None;
        }
        let id = self.retired.pop_front()?;
        self.retired.push_back(id);
        self.entries[id].sends_done += 1;
        Some(self.scheduled(id, true))
    }

    fn scheduled(&self, id: usize, recycled: bool) -> Scheduled {
        let e = &self.entries[id];
        Scheduled {
            bytes: e.bytes.clone(),
            file_id: e.file_id,
            generation: e.generation,
            kind: e.kind,
            frag_index: e.frag_index,
            priority: if recycled { i32::MIN } else { e.transfer.priority },
            send_number: e.sends_done,
            recycled,
        }
    }
}
