//! A desk-scale grid file system.
//!
//! The library models a worldwide data grid on one machine: a virtual
//! file catalogue mapping logical file names to physical replicas,
//! storage elements with pluggable backends and a logical volume
//! manager, a write-once generic file-access API, an asynchronous
//! transfer broker, and a network of cache-and-forward I/O servers with
//! gate-keeper routing.  Every service runs both over real TCP sockets
//! and inside a deterministic in-process network simulator, which is how
//! the examples and the test suite exercise multi-site scenarios
//! reproducibly.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run -p gridfs --example catalogue_tour
//! cargo run -p gridfs --example write_read_roundtrip
//! cargo run -p gridfs --example cache_forwarding
//! ```

pub mod access;
pub mod aiod;
pub mod catalogue;
pub mod cli;
pub mod config;
pub mod error;
pub mod net;
pub mod proto;
pub mod scenario;
pub mod simnet;
pub mod storage;
pub mod transfer;
pub mod types;

pub use error::{ErrorCode, GridError, GridResult};
pub use types::{Guid, LfnPath, Mode, OpenMode, Pfn, Principal};
