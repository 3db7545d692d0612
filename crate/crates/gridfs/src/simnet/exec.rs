//! Executor core: task queue, virtual-time event heap, links and
//! connection state.  Everything is keyed and ordered deterministically;
//! ties in the event heap break by insertion sequence.

use super::trace::TraceEvent;
use super::{ListenerState, NodeRole};
use crate::net::{NetError, NetResult};
use futures::future::BoxFuture;
use futures::task::ArcWake;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap, VecDeque};
use std::sync::{Arc, Mutex, Weak};
use std::task::{Context, Poll, Waker};

pub(crate) struct Task {
    fut: Option<BoxFuture<'static, ()>>,
    queued: bool,
}

pub(crate) enum EventKind {
    Wake(Waker),
    Deliver { from: String, to: String, len: u64, payload: Option<DeliverPayload> },
}

pub(crate) struct DeliverPayload {
    conn: u64,
    to_side_a: bool,
    frame: Vec<u8>,
}

struct TimedEvent {
    at: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for TimedEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for TimedEvent {}
impl PartialOrd for TimedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TimedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

struct LinkState {
    latency_ms: u64,
    bandwidth_bps: u64,
    up: bool,
    // FIFO horizon per direction: a later frame never overtakes an
    // earlier one on the same link direction.
    last_arrival_fwd: u64,
    last_arrival_rev: u64,
}

struct ConnState {
    a: String,
    b: String,
    q_to_a: VecDeque<Vec<u8>>,
    q_to_b: VecDeque<Vec<u8>>,
    waker_a: Option<Waker>,
    waker_b: Option<Waker>,
    closed_a: bool,
    closed_b: bool,
    broken: bool,
}

pub(crate) struct Core {
    pub now_ms: u64,
    next_seq: u64,
    next_task: u64,
    next_conn: u64,
    nodes: BTreeMap<String, NodeRole>,
    links: BTreeMap<(String, String), LinkState>,
    tasks: BTreeMap<u64, Task>,
    ready: VecDeque<u64>,
    events: BinaryHeap<Reverse<TimedEvent>>,
    conns: BTreeMap<u64, ConnState>,
    listeners: BTreeMap<String, ListenerState>,
    pub trace: Vec<TraceEvent>,
    pending_wakers: Vec<Waker>,
}

fn link_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl Core {
    pub fn new() -> Core {
        Core {
            now_ms: 0,
            next_seq: 0,
            next_task: 0,
            next_conn: 0,
            nodes: BTreeMap::new(),
            links: BTreeMap::new(),
            tasks: BTreeMap::new(),
            ready: VecDeque::new(),
            events: BinaryHeap::new(),
            conns: BTreeMap::new(),
            listeners: BTreeMap::new(),
            trace: Vec::new(),
            pending_wakers: Vec::new(),
        }
    }

    pub fn add_node(&mut self, addr: &str, role: NodeRole) {
        self.nodes.insert(addr.to_string(), role);
    }

    pub fn add_link(&mut self, a: &str, b: &str, latency_ms: u64, bandwidth_bps: u64) {
        assert!(bandwidth_bps > 0, "bandwidth must be positive");
        self.links.insert(
            link_key(a, b),
            LinkState { latency_ms, bandwidth_bps, up: true, last_arrival_fwd: 0, last_arrival_rev: 0 },
        );
    }

    pub fn take_pending_wakers(&mut self) -> Vec<Waker> {
        std::mem::take(&mut self.pending_wakers)
    }

    fn record(&mut self, ev: &str, from: &str, to: &str, len: u64, note: &str) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.trace.push(TraceEvent {
            t: self.now_ms,
            seq,
            ev: ev.to_string(),
            from: from.to_string(),
            to: to.to_string(),
            len,
            note: note.to_string(),
        });
    }

    pub fn push_event(&mut self, at: u64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Reverse(TimedEvent { at, seq, kind }));
    }

    /// Compute arrival time for a frame and schedule its delivery.
    pub fn schedule_frame(
        &mut self,
        from: &str,
        to: &str,
        payload: Option<DeliverPayload>,
        len: u64,
    ) -> NetResult<u64> {
        if !self.nodes.contains_key(from) || !self.nodes.contains_key(to) {
            return Err(NetError::NoRoute(to.to_string()));
        }
        let key = link_key(from, to);
        let forward = from == key.0;
        let (latency, bw, up, last) = {
            let link = self.links.get(&key).ok_or_else(|| NetError::NoRoute(to.to_string()))?;
            let last = if forward { link.last_arrival_fwd } else { link.last_arrival_rev };
            (link.latency_ms, link.bandwidth_bps, link.up, last)
        };
        if !up {
            return Err(NetError::LinkDown);
        }
        let tx_ms = len.saturating_mul(1000).div_ceil(bw);
        let arrival = (self.now_ms + latency + tx_ms).max(last);
        let link = self.links.get_mut(&key).unwrap();
        if forward {
            link.last_arrival_fwd = arrival;
        } else {
            link.last_arrival_rev = arrival;
        }
        self.record("send", from, to, len, "");
        self.push_event(arrival, EventKind::Deliver { from: from.to_string(), to: to.to_string(), len, payload });
        Ok(arrival)
    }

    /// Pop and handle the earliest event; returns false when none remain.
    pub fn fire_next_event(&mut self) -> bool {
        let Some(Reverse(ev)) = self.events.pop() else { return false };
        self.now_ms = self.now_ms.max(ev.at);
        match ev.kind {
            EventKind::Wake(w) => self.pending_wakers.push(w),
            EventKind::Deliver { from, to, len, payload } => {
                let link_up = self.links.get(&link_key(&from, &to)).map(|l| l.up).unwrap_or(false);
                if !link_up {
                    self.record("drop", &from, &to, len, "link down");
                    return true;
                }
                match payload {
                    None => self.record("deliver", &from, &to, len, ""),
                    Some(p) => {
                        let Some(conn) = self.conns.get_mut(&p.conn) else {
                            self.record("drop", &from, &to, len, "connection gone");
                            return true;
                        };
                        if conn.broken {
                            self.record("drop", &from, &to, len, "connection broken");
                            return true;
                        }
                        let (queue, waker, closed) = if p.to_side_a {
                            (&mut conn.q_to_a, &mut conn.waker_a, conn.closed_a)
                        } else {
                            (&mut conn.q_to_b, &mut conn.waker_b, conn.closed_b)
                        };
                        if closed {
                            self.record("drop", &from, &to, len, "receiver closed");
                            return true;
                        }
                        queue.push_back(p.frame);
                        if let Some(w) = waker.take() {
                            self.pending_wakers.push(w);
                        }
                        self.record("deliver", &from, &to, len, "");
                    }
                }
            }
        }
        true
    }

    pub fn pop_ready(&mut self) -> Option<u64> {
        self.ready.pop_front()
    }

    pub fn spawn(&mut self, fut: BoxFuture<'static, ()>) {
        let id = self.next_task;
        self.next_task += 1;
        self.tasks.insert(id, Task { fut: Some(fut), queued: true });
        self.ready.push_back(id);
    }

    pub fn dial(&mut self, from: &str, to: &str) -> NetResult<u64> {
        if !self.nodes.contains_key(from) {
            return Err(NetError::UnknownNode(from.to_string()));
        }
        if !self.nodes.contains_key(to) {
            return Err(NetError::NoRoute(to.to_string()));
        }
        let link = self.links.get(&link_key(from, to)).ok_or_else(|| NetError::NoRoute(to.to_string()))?;
        if !link.up {
            return Err(NetError::LinkDown);
        }
        if !self.listeners.contains_key(to) {
            self.record("dial-fail", from, to, 0, "refused");
            return Err(NetError::Refused(to.to_string()));
        }
        let id = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(
            id,
            ConnState {
                a: from.to_string(),
                b: to.to_string(),
                q_to_a: VecDeque::new(),
                q_to_b: VecDeque::new(),
                waker_a: None,
                waker_b: None,
                closed_a: false,
                closed_b: false,
                broken: false,
            },
        );
        let listener = self.listeners.get_mut(to).unwrap();
        listener.pending.push_back(id);
        if let Some(w) = listener.waker.take() {
            self.pending_wakers.push(w);
        }
        self.record("dial", from, to, 0, "");
        Ok(id)
    }

    pub fn listen(&mut self, addr: &str) -> NetResult<()> {
        if !self.nodes.contains_key(addr) {
            return Err(NetError::UnknownNode(addr.to_string()));
        }
        self.listeners
            .entry(addr.to_string())
            .or_insert_with(|| ListenerState { pending: VecDeque::new(), waker: None });
        self.record("listen", addr, addr, 0, "");
        Ok(())
    }

    pub fn listener_accept(&mut self, addr: &str, waker: &Waker) -> Poll<NetResult<u64>> {
        let Some(l) = self.listeners.get_mut(addr) else {
            return Poll::Ready(Err(NetError::Closed));
        };
        if let Some(id) = l.pending.pop_front() {
            return Poll::Ready(Ok(id));
        }
        l.waker = Some(waker.clone());
        Poll::Pending
    }

    pub fn conn_send(&mut self, id: u64, from_side_a: bool, frame: &[u8]) -> NetResult<()> {
        let (from, to, to_side_a) = {
            let conn = self.conns.get(&id).ok_or(NetError::Closed)?;
            if conn.broken {
                return Err(NetError::Closed);
            }
            let my_closed = if from_side_a { conn.closed_a } else { conn.closed_b };
            if my_closed {
                return Err(NetError::Closed);
            }
            if from_side_a {
                (conn.a.clone(), conn.b.clone(), false)
            } else {
                (conn.b.clone(), conn.a.clone(), true)
            }
        };
        let payload = DeliverPayload { conn: id, to_side_a, frame: frame.to_vec() };
        match self.schedule_frame(&from, &to, Some(payload), frame.len() as u64) {
            Ok(_) => Ok(()),
            Err(e) => {
                self.break_conn(id);
                Err(e)
            }
        }
    }

    pub fn conn_recv(&mut self, id: u64, side_a: bool, waker: &Waker) -> Poll<NetResult<Option<Vec<u8>>>> {
        let Some(conn) = self.conns.get_mut(&id) else {
            return Poll::Ready(Err(NetError::Closed));
        };
        let (queue, my_waker, peer_closed) = if side_a {
            (&mut conn.q_to_a, &mut conn.waker_a, conn.closed_b)
        } else {
            (&mut conn.q_to_b, &mut conn.waker_b, conn.closed_a)
        };
        if let Some(frame) = queue.pop_front() {
            return Poll::Ready(Ok(Some(frame)));
        }
        if conn.broken {
            return Poll::Ready(Err(NetError::Closed));
        }
        if peer_closed {
            return Poll::Ready(Ok(None));
        }
        *my_waker = Some(waker.clone());
        Poll::Pending
    }

    pub fn conn_close(&mut self, id: u64, side_a: bool) {
        if let Some(conn) = self.conns.get_mut(&id) {
            let peer_waker = if side_a {
                conn.closed_a = true;
                conn.waker_b.take()
            } else {
                conn.closed_b = true;
                conn.waker_a.take()
            };
            if let Some(w) = peer_waker {
                self.pending_wakers.push(w);
            }
        }
    }

    pub fn conn_peer(&self, id: u64, side_a: bool) -> String {
        self.conns
            .get(&id)
            .map(|c| if side_a { c.b.clone() } else { c.a.clone() })
            .unwrap_or_default()
    }

    fn break_conn(&mut self, id: u64) {
        if let Some(conn) = self.conns.get_mut(&id) {
            conn.broken = true;
            for w in [conn.waker_a.take(), conn.waker_b.take()].into_iter().flatten() {
                self.pending_wakers.push(w);
            }
        }
    }

    /// Mark all links of `node` up or down.  Going down also breaks every
    /// connection touching the node and drops its in-flight frames.
    pub fn set_node_links(&mut self, node: &str, up: bool) -> NetResult<()> {
        if !self.nodes.contains_key(node) {
            return Err(NetError::UnknownNode(node.to_string()));
        }
        let keys: Vec<(String, String)> =
            self.links.keys().filter(|(a, b)| a == node || b == node).cloned().collect();
        for key in &keys {
            self.links.get_mut(key).unwrap().up = up;
        }
        self.record(if up { "heal" } else { "partition" }, node, node, 0, "");
        if !up {
            let broken: Vec<u64> = self
                .conns
                .iter()
                .filter(|(_, c)| (c.a == node || c.b == node) && !c.broken)
                .map(|(id, _)| *id)
                .collect();
            for id in broken {
                self.break_conn(id);
            }
            self.drop_inflight_to(node);
        }
        Ok(())
    }

    pub fn set_link(&mut self, a: &str, b: &str, up: bool) -> NetResult<()> {
        let link = self.links.get_mut(&link_key(a, b)).ok_or_else(|| NetError::NoRoute(b.to_string()))?;
        link.up = up;
        Ok(())
    }

    /// Remove scheduled deliveries touching `node`, recording each drop.
    fn drop_inflight_to(&mut self, node: &str) {
        let mut kept = BinaryHeap::new();
        let mut dropped = Vec::new();
        while let Some(Reverse(ev)) = self.events.pop() {
            match &ev.kind {
                EventKind::Deliver { from, to, len, .. } if from == node || to == node => {
                    dropped.push((from.clone(), to.clone(), *len));
                }
                _ => kept.push(Reverse(ev)),
            }
        }
        self.events = kept;
        for (from, to, len) in dropped {
            self.record("drop", &from, &to, len, "partitioned in flight");
        }
    }
}

struct TaskWaker {
    core: Weak<Mutex<Core>>,
    id: u64,
}

impl ArcWake for TaskWaker {
    fn wake_by_ref(arc_self: &Arc<Self>) {
        if let Some(core) = arc_self.core.upgrade() {
            let mut c = core.lock().unwrap();
            let c = &mut *c;
            if let Some(t) = c.tasks.get_mut(&arc_self.id) {
                if !t.queued {
                    t.queued = true;
                    c.ready.push_back(arc_self.id);
                }
            }
        }
    }
}

/// Poll one task to completion or pending; must be called with the core
/// lock released.
pub(crate) fn poll_task(core: &Arc<Mutex<Core>>, id: u64) {
    let mut fut = {
        let mut c = core.lock().unwrap();
        match c.tasks.get_mut(&id) {
            Some(t) => {
                t.queued = false;
                match t.fut.take() {
                    Some(f) => f,
                    None => return,
                }
            }
            None => return,
        }
    };
    let waker = futures::task::waker(Arc::new(TaskWaker { core: Arc::downgrade(core), id }));
    let mut cx = Context::from_waker(&waker);
    let poll = fut.as_mut().poll(&mut cx);
    let mut c = core.lock().unwrap();
    match poll {
        Poll::Ready(()) => {
            c.tasks.remove(&id);
        }
        Poll::Pending => {
            if let Some(t) = c.tasks.get_mut(&id) {
                t.fut = Some(fut);
            }
        }
    }
}
