//! Cache-and-forward I/O servers: route chains, access tickets, the
//! GUID-keyed page cache, bandwidth regulation, gate keepers and the
//! server/client pair.

mod client;
mod gatekeeper;
mod pages;
mod ratelimit;
mod route;
mod server;

pub use client::{
    fetch_stats, locate_guid, open_session, send_load_report, AiodSession, AiodStats, MAX_REDIRECTS,
};
pub use gatekeeper::{load_score, pick_io_slave, LoadBoard, LoadReport, STALENESS_WINDOW_MS};
pub use pages::{covering_pages, page_size_for, AccessKind, PageCounters, PageStore, MAX_PAGE, MIN_PAGE};
pub use ratelimit::TokenBucket;
pub use route::{AccessTicket, EncryptionKind, RouteChain};
pub use server::{AiodConfig, AiodServer, Role};
