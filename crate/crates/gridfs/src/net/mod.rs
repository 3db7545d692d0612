//! Transport abstraction shared by all services.
//!
//! Every service and client is written against [`Net`], [`Conn`] and
//! [`Listener`].  Two implementations exist: the deterministic in-process
//! simulator in [`crate::simnet`] and the tokio TCP transport in
//! [`tcp`].  Frames are opaque byte strings; the TCP transport adds the
//! 4-byte big-endian length prefix on the wire, the simulator carries
//! frames as discrete messages and accounts the prefix in its byte math.

pub mod tcp;

use futures::future::BoxFuture;

/// Transport-level failures, distinct from grid operation errors.
#[derive(Debug, Clone, thiserror::Error)]
pub enum NetError {
    #[error("link down")]
    LinkDown,
    #[error("no route to {0}")]
    NoRoute(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("connection closed")]
    Closed,
    #[error("connection refused by {0}")]
    Refused(String),
    #[error("io: {0}")]
    Io(String),
}

pub type NetResult<T> = Result<T, NetError>;

/// One bidirectional frame connection.
#[async_trait::async_trait]
pub trait Conn: Send {
    /// Queue one frame toward the peer.
    async fn send(&mut self, frame: &[u8]) -> NetResult<()>;
    /// Receive the next frame; `Ok(None)` means the peer closed cleanly.
    async fn recv(&mut self) -> NetResult<Option<Vec<u8>>>;
    /// Address of the peer, mostly for diagnostics.
    fn peer(&self) -> String;
}

#[async_trait::async_trait]
pub trait Listener: Send {
    async fn accept(&mut self) -> NetResult<Box<dyn Conn>>;
    fn local_addr(&self) -> String;
}

/// A node-local view of the network plus clock and task spawning.
///
/// `now_ms` is virtual time under the simulator and monotonic wall time
/// under TCP; services must never consult any other clock.
#[async_trait::async_trait]
pub trait Net: Send + Sync {
    fn now_ms(&self) -> u64;
    async fn sleep_ms(&self, ms: u64);
    async fn dial(&self, to: &str) -> NetResult<Box<dyn Conn>>;
    async fn listen(&self, addr: &str) -> NetResult<Box<dyn Listener>>;
    fn spawn(&self, fut: BoxFuture<'static, ()>);
    /// Address this handle acts from (the local node in the simulator).
    fn local_addr(&self) -> String;
}
