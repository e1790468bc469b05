//! Acknowledgement-free downlink: fragmenting sender, lossy channel,
//! reassembling receiver.

pub mod channel;
pub mod fragment;
pub mod limiter;
pub mod queue;
pub mod receiver;
pub mod sender;
pub mod watcher;
pub mod wire;

pub use channel::{Channel, ChannelConfig, ChannelStats};
pub use fragment::{fragment_file, FragmentError, Outgoing, TransferConfig};
pub use limiter::TokenBucket;
pub use queue::{Recency, Scheduled, SendQueue};
pub use receiver::{FileManifest, Reassembly, ReassembleError, Receiver, RxCounters};
pub use sender::{FolderRule, Sender, SenderStats, SyncConfig, TraceEntry};
pub use watcher::{FileVersion, FolderWatcher, WatchError};
pub use wire::{Fragment, FragmentKind, Metadata};
