//! Deterministic in-process network harness.
//!
//! A single-threaded cooperative executor drives all service and client
//! tasks over virtual time.  Frames travel along configured links with
//! per-link latency and bandwidth; delivery order is total and
//! reproducible: identical topology, seed and operation script yield an
//! identical event trace.
//!
//! Services obtain a per-node [`Net`] handle via [`Sim::handle`] and are
//! otherwise unaware they run under simulation.

mod exec;
mod trace;

pub use trace::TraceEvent;

use crate::net::{Conn, Listener, Net, NetError, NetResult};
use exec::{Core, EventKind};
use futures::future::BoxFuture;
use std::collections::VecDeque;
use std::future::Future;
use std::pin::Pin;
use std::sync::{Arc, Mutex, Weak};
use std::task::{Context, Poll, Waker};

/// Role label for a topology node, used in traces and topology files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Client,
    Catalogue,
    Se,
    Aiod,
}

/// One symmetric link between two node addresses.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SimLink {
    pub a: String,
    pub b: String,
    pub latency_ms: u64,
    pub bandwidth_bps: u64,
    #[serde(default = "default_up")]
    pub up: bool,
}

fn default_up() -> bool {
    true
}

/// The simulation world: topology, virtual clock, executor and trace.
pub struct Sim {
    core: Arc<Mutex<Core>>,
}

impl Default for Sim {
    fn default() -> Self {
        Self::new()
    }
}

impl Sim {
    pub fn new() -> Sim {
        Sim { core: Arc::new(Mutex::new(Core::new())) }
    }

    pub fn add_node(&self, addr: &str, role: NodeRole) {
        self.core.lock().unwrap().add_node(addr, role);
    }

    pub fn add_link(&self, a: &str, b: &str, latency_ms: u64, bandwidth_bps: u64) {
        self.core.lock().unwrap().add_link(a, b, latency_ms, bandwidth_bps);
    }

    /// Current virtual time in milliseconds.
    pub fn now_ms(&self) -> u64 {
        self.core.lock().unwrap().now_ms
    }

    /// Low-level frame delivery: schedules `frame` from `a` to `b` and
    /// returns the arrival timestamp (send time + latency + len/bandwidth,
    /// FIFO per link direction).
    pub fn deliver(&self, from: &str, to: &str, frame: &[u8]) -> NetResult<u64> {
        let (arrival, wakers) = {
            let mut core = self.core.lock().unwrap();
            let arrival = core.schedule_frame(from, to, None, frame.len() as u64)?;
            (arrival, core.take_pending_wakers())
        };
        for w in wakers {
            w.wake();
        }
        Ok(arrival)
    }

    /// Mark every link of `node` down and drop its in-flight frames.
    /// Existing connections touching the node are broken; new connections
    /// succeed again after [`Sim::heal`].
    pub fn partition(&self, node: &str) -> NetResult<()> {
        let wakers = {
            let mut core = self.core.lock().unwrap();
            core.set_node_links(node, false)?;
            core.take_pending_wakers()
        };
        for w in wakers {
            w.wake();
        }
        Ok(())
    }

    /// Mark every link of `node` up again.
    pub fn heal(&self, node: &str) -> NetResult<()> {
        let wakers = {
            let mut core = self.core.lock().unwrap();
            core.set_node_links(node, true)?;
            core.take_pending_wakers()
        };
        for w in wakers {
            w.wake();
        }
        Ok(())
    }

    /// Set one specific link up or down.
    pub fn set_link(&self, a: &str, b: &str, up: bool) -> NetResult<()> {
        let mut core = self.core.lock().unwrap();
        core.set_link(a, b, up)
    }

    /// A [`Net`] handle bound to `addr`; the address must be a node.
    pub fn handle(&self, addr: &str) -> Arc<dyn Net> {
        Arc::new(SimNet { core: Arc::downgrade(&self.core), addr: addr.to_string() })
    }

    pub fn spawn(&self, fut: impl Future<Output = ()> + Send + 'static) {
        self.core.lock().unwrap().spawn(Box::pin(fut));
    }

    /// Run until no task is runnable and no event is pending.
    pub fn run_until_idle(&self) {
        loop {
            if !self.turn() {
                break;
            }
        }
    }

    /// Drain the ready queue without advancing virtual time.  Newly
    /// spawned services run up to their first await on network input,
    /// so their listeners are registered when this returns.
    pub fn run_ready(&self) {
        loop {
            let id = self.core.lock().unwrap().pop_ready();
            match id {
                Some(id) => exec::poll_task(&self.core, id),
                None => break,
            }
        }
    }

    /// Drive the simulation until `fut` completes and return its output.
    /// The future is polled inline on this thread, so it may borrow
    /// locals.  Panics if the simulation goes quiescent first (a
    /// deadlock).
    pub fn block_on<T>(&self, fut: impl Future<Output = T>) -> T {
        struct FlagWaker(std::sync::atomic::AtomicBool);
        impl futures::task::ArcWake for FlagWaker {
            fn wake_by_ref(arc_self: &Arc<Self>) {
                arc_self.0.store(true, std::sync::atomic::Ordering::SeqCst);
            }
        }
        let flag = Arc::new(FlagWaker(std::sync::atomic::AtomicBool::new(true)));
        let waker = futures::task::waker(flag.clone());
        let mut cx = Context::from_waker(&waker);
        let mut fut = std::pin::pin!(fut);
        loop {
            if flag.0.swap(false, std::sync::atomic::Ordering::SeqCst) {
                if let Poll::Ready(out) = fut.as_mut().poll(&mut cx) {
                    return out;
                }
            }
            let progressed = self.turn();
            if !progressed && !flag.0.load(std::sync::atomic::Ordering::SeqCst) {
                panic!("simulation deadlock: driven future is stuck and no events remain");
            }
        }
    }

    /// One executor turn: drain the ready queue, then fire the earliest
    /// event.  Returns false when fully quiescent.
    fn turn(&self) -> bool {
        let mut progressed = false;
        loop {
            let id = self.core.lock().unwrap().pop_ready();
            match id {
                Some(id) => {
                    progressed = true;
                    exec::poll_task(&self.core, id);
                }
                None => break,
            }
        }
        let wakers = {
            let mut core = self.core.lock().unwrap();
            if core.fire_next_event() {
                progressed = true;
            }
            core.take_pending_wakers()
        };
        for w in wakers {
            w.wake();
        }
        progressed
    }

    /// Snapshot of the event trace so far.
    pub fn trace(&self) -> Vec<TraceEvent> {
        self.core.lock().unwrap().trace.clone()
    }

    /// SHA-256 over the serialized trace; equal hashes mean equal runs.
    pub fn trace_hash(&self) -> String {
        trace::hash(&self.core.lock().unwrap().trace)
    }

    /// Counts of sent / delivered / dropped frames, for conservation checks.
    pub fn frame_accounting(&self) -> (u64, u64, u64) {
        let core = self.core.lock().unwrap();
        let mut sent = 0;
        let mut delivered = 0;
        let mut dropped = 0;
        for ev in &core.trace {
            match ev.ev.as_str() {
                "send" => sent += 1,
                "deliver" => delivered += 1,
                "drop" => dropped += 1,
                _ => {}
            }
        }
        (sent, delivered, dropped)
    }
}

/// Per-node [`Net`] implementation over the simulator.
struct SimNet {
    core: Weak<Mutex<Core>>,
    addr: String,
}

impl SimNet {
    fn core(&self) -> NetResult<Arc<Mutex<Core>>> {
        self.core.upgrade().ok_or(NetError::Closed)
    }
}

#[async_trait::async_trait]
impl Net for SimNet {
    fn now_ms(&self) -> u64 {
        self.core.upgrade().map(|c| c.lock().unwrap().now_ms).unwrap_or(0)
    }

    async fn sleep_ms(&self, ms: u64) {
        let Ok(core) = self.core() else { return };
        let deadline = core.lock().unwrap().now_ms.saturating_add(ms);
        SimSleep { core: self.core.clone(), deadline, registered: false }.await;
    }

    async fn dial(&self, to: &str) -> NetResult<Box<dyn Conn>> {
        let core = self.core()?;
        let (conn_id, wakers) = {
            let mut c = core.lock().unwrap();
            let id = c.dial(&self.addr, to)?;
            (id, c.take_pending_wakers())
        };
        for w in wakers {
            w.wake();
        }
        Ok(Box::new(SimConn { core: self.core.clone(), id: conn_id, side_a: true }))
    }

    async fn listen(&self, addr: &str) -> NetResult<Box<dyn Listener>> {
        let core = self.core()?;
        core.lock().unwrap().listen(addr)?;
        Ok(Box::new(SimListener { core: self.core.clone(), addr: addr.to_string() }))
    }

    fn spawn(&self, fut: BoxFuture<'static, ()>) {
        if let Some(core) = self.core.upgrade() {
            core.lock().unwrap().spawn(fut);
        }
    }

    fn local_addr(&self) -> String {
        self.addr.clone()
    }
}

struct SimSleep {
    core: Weak<Mutex<Core>>,
    deadline: u64,
    registered: bool,
}

impl Future for SimSleep {
    type Output = ();
    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        let Some(core) = self.core.upgrade() else { return Poll::Ready(()) };
        let mut c = core.lock().unwrap();
        if c.now_ms >= self.deadline {
            return Poll::Ready(());
        }
        if !self.registered {
            let deadline = self.deadline;
            c.push_event(deadline, EventKind::Wake(cx.waker().clone()));
            drop(c);
            self.registered = true;
        }
        Poll::Pending
    }
}

struct SimConn {
    core: Weak<Mutex<Core>>,
    id: u64,
    side_a: bool,
}

#[async_trait::async_trait]
impl Conn for SimConn {
    async fn send(&mut self, frame: &[u8]) -> NetResult<()> {
        let core = self.core.upgrade().ok_or(NetError::Closed)?;
        let mut c = core.lock().unwrap();
        c.conn_send(self.id, self.side_a, frame)
    }

    async fn recv(&mut self) -> NetResult<Option<Vec<u8>>> {
        SimRecv { core: self.core.clone(), id: self.id, side_a: self.side_a }.await
    }

    fn peer(&self) -> String {
        self.core
            .upgrade()
            .map(|c| c.lock().unwrap().conn_peer(self.id, self.side_a))
            .unwrap_or_default()
    }
}

impl Drop for SimConn {
    fn drop(&mut self) {
        if let Some(core) = self.core.upgrade() {
            let wakers = {
                let mut c = core.lock().unwrap();
                c.conn_close(self.id, self.side_a);
                c.take_pending_wakers()
            };
            for w in wakers {
                w.wake();
            }
        }
    }
}

struct SimRecv {
    core: Weak<Mutex<Core>>,
    id: u64,
    side_a: bool,
}

impl Future for SimRecv {
    type Output = NetResult<Option<Vec<u8>>>;
    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        let Some(core) = self.core.upgrade() else { return Poll::Ready(Err(NetError::Closed)) };
        let mut c = core.lock().unwrap();
        c.conn_recv(self.id, self.side_a, cx.waker())
    }
}

struct SimListener {
    core: Weak<Mutex<Core>>,
    addr: String,
}

#[async_trait::async_trait]
impl Listener for SimListener {
    async fn accept(&mut self) -> NetResult<Box<dyn Conn>> {
        let id = SimAccept { core: self.core.clone(), addr: self.addr.clone() }.await?;
        Ok(Box::new(SimConn { core: self.core.clone(), id, side_a: false }))
    }

    fn local_addr(&self) -> String {
        self.addr.clone()
    }
}

struct SimAccept {
    core: Weak<Mutex<Core>>,
    addr: String,
}

impl Future for SimAccept {
    type Output = NetResult<u64>;
    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        let Some(core) = self.core.upgrade() else { return Poll::Ready(Err(NetError::Closed)) };
        let mut c = core.lock().unwrap();
        c.listener_accept(&self.addr, cx.waker())
    }
}

/// A queue of pending accepted connection ids plus the accept waker.
pub(crate) struct ListenerState {
    pub pending: VecDeque<u64>,
    pub waker: Option<Waker>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deliver_arrival_arithmetic() {
        let sim = Sim::new();
        sim.add_node("a", NodeRole::Client);
        sim.add_node("b", NodeRole::Se);
        sim.add_link("a", "b", 10, 1 << 20); // 10 ms, 1 MiB/s
        let frame = vec![0u8; 1 << 20];
        // 1 MiB at 1 MiB/s is 1000 ms of transmission plus 10 ms latency.
        assert_eq!(sim.deliver("a", "b", &frame).unwrap(), 1010);
        // Zero-length frame: latency only, but FIFO behind the first frame.
        assert_eq!(sim.deliver("a", "b", &[]).unwrap(), 1010);
        let sim2 = Sim::new();
        sim2.add_node("a", NodeRole::Client);
        sim2.add_node("b", NodeRole::Se);
        sim2.add_link("a", "b", 7, 1000);
        assert_eq!(sim2.deliver("a", "b", &[]).unwrap(), 7);
    }

    #[test]
    fn deliver_errors() {
        let sim = Sim::new();
        sim.add_node("a", NodeRole::Client);
        sim.add_node("b", NodeRole::Se);
        sim.add_node("c", NodeRole::Se);
        sim.add_link("a", "b", 1, 1000);
        assert!(matches!(sim.deliver("a", "c", &[]), Err(NetError::NoRoute(_))));
        sim.set_link("a", "b", false).unwrap();
        assert!(matches!(sim.deliver("a", "b", &[]), Err(NetError::LinkDown)));
        assert!(matches!(sim.partition("nope"), Err(NetError::UnknownNode(_))));
    }

    #[test]
    fn sleep_advances_virtual_time() {
        let sim = Sim::new();
        sim.add_node("a", NodeRole::Client);
        let net = sim.handle("a");
        let t = sim.block_on(async move {
            net.sleep_ms(250).await;
            net.sleep_ms(250).await;
            net.now_ms()
        });
        assert_eq!(t, 500);
        assert_eq!(sim.now_ms(), 500);
    }

    #[test]
    fn echo_over_link() {
        let sim = Sim::new();
        sim.add_node("client", NodeRole::Client);
        sim.add_node("server", NodeRole::Se);
        sim.add_link("client", "server", 5, 1_000_000);
        let server_net = sim.handle("server");
        sim.spawn(async move {
            let mut l = server_net.listen("server").await.unwrap();
            let mut conn = l.accept().await.unwrap();
            while let Ok(Some(frame)) = conn.recv().await {
                let mut out = frame;
                out.reverse();
                conn.send(&out).await.unwrap();
            }
        });
        sim.run_until_idle();
        let client_net = sim.handle("client");
        let got = sim.block_on(async move {
            let mut conn = client_net.dial("server").await.unwrap();
            conn.send(b"hello").await.unwrap();
            conn.recv().await.unwrap().unwrap()
        });
        assert_eq!(got, b"olleh");
        assert!(sim.now_ms() >= 10, "two frames, 5 ms latency each way");
    }

    #[test]
    fn partition_breaks_and_heal_permits_reconnect() {
        let sim = Sim::new();
        sim.add_node("client", NodeRole::Client);
        sim.add_node("server", NodeRole::Se);
        sim.add_link("client", "server", 1, 1_000_000);
        let server_net = sim.handle("server");
        sim.spawn(async move {
            let mut l = server_net.listen("server").await.unwrap();
            loop {
                let Ok(mut conn) = l.accept().await else { break };
                let net = l.local_addr();
                let _ = net;
                while let Ok(Some(frame)) = conn.recv().await {
                    if conn.send(&frame).await.is_err() {
                        break;
                    }
                }
            }
        });
        sim.run_until_idle();

        let client_net = sim.handle("client");
        let mut conn = sim.block_on(async move { client_net.dial("server").await.unwrap() });
        let ok = sim.block_on(async move {
            conn.send(b"one").await.unwrap();
            let r = conn.recv().await.unwrap().unwrap();
            assert_eq!(r, b"one");
            sim_partition_marker();
            conn
        });
        sim.partition("server").unwrap();
        let mut conn = ok;
        let err = sim.block_on(async move { conn.send(b"two").await });
        assert!(err.is_err(), "send on partitioned node must fail");

        let client_net = sim.handle("client");
        assert!(sim.block_on(async move { client_net.dial("server").await.map(|_| ()) }).is_err());

        sim.heal("server").unwrap();
        let client_net = sim.handle("client");
        let got = sim.block_on(async move {
            let mut conn = client_net.dial("server").await.unwrap();
            conn.send(b"three").await.unwrap();
            conn.recv().await.unwrap().unwrap()
        });
        assert_eq!(got, b"three");
    }

    fn sim_partition_marker() {}

    #[test]
    fn inflight_frames_to_partitioned_node_drop() {
        let sim = Sim::new();
        sim.add_node("a", NodeRole::Client);
        sim.add_node("b", NodeRole::Se);
        sim.add_link("a", "b", 1000, 1_000_000);
        sim.deliver("a", "b", b"slow frame").unwrap();
        sim.partition("b").unwrap();
        sim.run_until_idle();
        let (sent, delivered, dropped) = sim.frame_accounting();
        assert_eq!((sent, delivered, dropped), (1, 0, 1));
    }

    #[test]
    fn trace_is_deterministic() {
        let run = || {
            let sim = Sim::new();
            sim.add_node("client", NodeRole::Client);
            sim.add_node("server", NodeRole::Se);
            sim.add_link("client", "server", 3, 50_000);
            let server_net = sim.handle("server");
            sim.spawn(async move {
                let mut l = server_net.listen("server").await.unwrap();
                let mut conn = l.accept().await.unwrap();
                while let Ok(Some(frame)) = conn.recv().await {
                    if conn.send(&frame).await.is_err() {
                        break;
                    }
                }
            });
            sim.run_until_idle();
            let client_net = sim.handle("client");
            sim.block_on(async move {
                let mut conn = client_net.dial("server").await.unwrap();
                for i in 0..10u8 {
                    conn.send(&vec![i; 100 * (i as usize + 1)]).await.unwrap();
                    conn.recv().await.unwrap().unwrap();
                }
            });
            sim.trace_hash()
        };
        let h1 = run();
        let h2 = run();
        let h3 = run();
        assert_eq!(h1, h2);
        assert_eq!(h2, h3);
    }

    #[test]
    fn frames_fifo_per_link() {
        let sim = Sim::new();
        sim.add_node("a", NodeRole::Client);
        sim.add_node("b", NodeRole::Se);
        sim.add_link("a", "b", 10, 1000);
        let t1 = sim.deliver("a", "b", &vec![0u8; 1000]).unwrap();
        let t2 = sim.deliver("a", "b", &[0u8; 1]).unwrap();
        assert!(t2 >= t1, "later send may not overtake an earlier one");
    }
}
