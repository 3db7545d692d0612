//! Real-socket transport over tokio.
//!
//! Frames are length-prefixed on the wire: a 4-byte big-endian unsigned
//! length followed by the body.  Used by the `gridfs` binary; the test
//! suite exercises it through one smoke test, everything else runs under
//! the simulator.

use super::{Conn, Listener, Net, NetError, NetResult};
use futures::future::BoxFuture;
use std::sync::Arc;
use std::time::Instant;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

/// Frame bodies larger than this are rejected as protocol errors.
pub const MAX_FRAME_LEN: u32 = 64 << 20;

pub struct TokioNet {
    epoch: Instant,
    local: String,
}

impl TokioNet {
    pub fn new(local: &str) -> Arc<TokioNet> {
        Arc::new(TokioNet { epoch: Instant::now(), local: local.to_string() })
    }
}

#[async_trait::async_trait]
impl Net for TokioNet {
    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    async fn sleep_ms(&self, ms: u64) {
        tokio::time::sleep(std::time::Duration::from_millis(ms)).await;
    }

    async fn dial(&self, to: &str) -> NetResult<Box<dyn Conn>> {
        let stream = TcpStream::connect(to).await.map_err(|e| NetError::Io(e.to_string()))?;
        stream.set_nodelay(true).ok();
        Ok(Box::new(TcpConn { stream, peer: to.to_string() }))
    }

    async fn listen(&self, addr: &str) -> NetResult<Box<dyn Listener>> {
        let listener = TcpListener::bind(addr).await.map_err(|e| NetError::Io(e.to_string()))?;
        let local = listener.local_addr().map(|a| a.to_string()).unwrap_or_else(|_| addr.to_string());
        Ok(Box::new(TcpFrameListener { listener, local }))
    }

    fn spawn(&self, fut: BoxFuture<'static, ()>) {
        tokio::spawn(fut);
    }

    fn local_addr(&self) -> String {
        self.local.clone()
    }
}

struct TcpConn {
    stream: TcpStream,
    peer: String,
}

#[async_trait::async_trait]
impl Conn for TcpConn {
    async fn send(&mut self, frame: &[u8]) -> NetResult<()> {
        let len = u32::try_from(frame.len()).map_err(|_| NetError::Io("frame too large".into()))?;
        if len > MAX_FRAME_LEN {
            return Err(NetError::Io("frame too large".into()));
        }
        self.stream
            .write_all(&len.to_be_bytes())
            .await
            .map_err(|e| NetError::Io(e.to_string()))?;
        self.stream.write_all(frame).await.map_err(|e| NetError::Io(e.to_string()))?;
        Ok(())
    }

    async fn recv(&mut self) -> NetResult<Option<Vec<u8>>> {
        let mut len_buf = [0u8; 4];
        match self.stream.read_exact(&mut len_buf).await {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(NetError::Io(e.to_string())),
        }
        let len = u32::from_be_bytes(len_buf);
        if len > MAX_FRAME_LEN {
            return Err(NetError::Io(format!("oversized frame: {len} bytes")));
        }
        let mut body = vec![0u8; len as usize];
        self.stream.read_exact(&mut body).await.map_err(|e| NetError::Io(e.to_string()))?;
        Ok(Some(body))
    }

    fn peer(&self) -> String {
        self.peer.clone()
    }
}

struct TcpFrameListener {
    listener: TcpListener,
    local: String,
}

#[async_trait::async_trait]
impl Listener for TcpFrameListener {
    async fn accept(&mut self) -> NetResult<Box<dyn Conn>> {
        let (stream, peer) = self.listener.accept().await.map_err(|e| NetError::Io(e.to_string()))?;
        stream.set_nodelay(true).ok();
        Ok(Box::new(TcpConn { stream, peer: peer.to_string() }))
    }

    fn local_addr(&self) -> String {
        self.local.clone()
    }
}
