//! The virtual file catalogue: directory tables, LFN index, replica
//! table, permissions, metadata, plus the service and client layers.

mod client;
pub mod journal;
mod service;
mod store;

pub use client::CatClient;
pub use service::{CatalogueConfig, CatalogueService, OpExtension};
pub use store::{
    Catalogue, CatalogueEntry, DirectoryTable, EntryKind, ListedEntry, Resolved, ResolvedLocation,
    SeInfo, META_SUFFIX,
};
