//! Storage elements: the pluggable backend interface, the logical
//! volume manager, the local disk cache, and the SE service and client.

mod cache;
mod client;
mod lvm;
mod plugin;
mod service;

pub use cache::{CachedFile, FileCache};
pub use client::SeClient;
pub use lvm::{Lifetime, Lvm, Placement, ResyncReport, VolumeSpec};
pub use plugin::{CpDirection, FilePlugin, MemPlugin, SePlugin};
pub use service::{FaultHook, PluginKind, SeConfig, SeInfoReply, SeService};
