//! GUID-keyed page cache: page size policy, on-disk page store with an
//! index journal, LRU eviction, and coalescing of concurrent fetches of
//! one page.
//!
//! Pages are aligned to multiples of the session page size, so pages
//! for one GUID never overlap and any two caches holding (GUID, offset)
//! hold identical bytes — content is write-once.

use crate::error::{GridError, GridResult};
use crate::types::Guid;
use futures::channel::oneshot;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::future::Future;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

pub const MIN_PAGE: u64 = 4 << 10;
pub const MAX_PAGE: u64 = 4 << 20;

/// Whether the client intends sequential or random access; drives the
/// page size choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Sequential,
    Random,
}

/// Page size for a session: random access favors small pages, large
/// sequential files get proportionally larger pages (file_size/64,
/// rounded up to a power of two, clamped to [4 KiB, 4 MiB]).  A zero
/// (unknown) file size falls back to 64 KiB.
pub fn page_size_for(file_size: u64, access: AccessKind) -> u64 {
    match access {
        AccessKind::Random => 16 << 10,
        AccessKind::Sequential => {
            if file_size == 0 {
                return 64 << 10;
            }
            let target = file_size.div_ceil(64);
            let pow2 = target.next_power_of_two();
            pow2.clamp(MIN_PAGE, MAX_PAGE)
        }
    }
}

/// Pages covering the byte range [offset, offset+len) in a file of
/// `file_size` bytes, as (page_offset, page_len) pairs.
pub fn covering_pages(offset: u64, len: u64, file_size: u64, page_size: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    if len == 0 || offset >= file_size {
        return out;
    }
    let end = file_size.min(offset + len);
    let mut page_off = (offset / page_size) * page_size;
    while page_off < end {
        let page_len = page_size.min(file_size - page_off);
        out.push((page_off, page_len));
        page_off += page_size;
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexRecord {
    ev: String,
    guid: Guid,
    offset: u64,
    len: u64,
}

struct PageMeta {
    len: u64,
    last_access: u64,
}

type FetchWaiters = Vec<oneshot::Sender<GridResult<Vec<u8>>>>;

#[derive(Default)]
struct StoreState {
    pages: BTreeMap<(Guid, u64), PageMeta>,
    /// One page granularity per GUID per server: offsets stay aligned
    /// and pages never overlap even across sessions with different
    /// access kinds.
    granularity: BTreeMap<Guid, u64>,
    total: u64,
    tick: u64,
    inflight: BTreeMap<(Guid, u64), FetchWaiters>,
}

/// Counters exposed for tests and the STATS op.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PageCounters {
    pub hits: u64,
    pub misses: u64,
    pub next_hop_fetches: u64,
    pub cached_bytes: u64,
}

pub struct PageStore {
    dir: PathBuf,
    budget: u64,
    state: Mutex<StoreState>,
    journal: Mutex<std::fs::File>,
    hits: AtomicU64,
    misses: AtomicU64,
    next_hop_fetches: AtomicU64,
}

fn page_file_name(guid: &Guid, offset: u64, len: u64) -> String {
    format!("{guid}.{offset}.{len}.page")
}

fn io_err(e: std::io::Error) -> GridError {
    GridError::backend_failure(format!("page store io: {e}"))
}

impl PageStore {
    /// Open the store, replaying the index journal; pages whose files
    /// vanished are dropped.
    pub fn open(dir: impl Into<PathBuf>, budget: u64) -> GridResult<PageStore> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err)?;
        let journal_path = dir.join("index.journal");
        let mut state = StoreState::default();
        if journal_path.exists() {
            let body = std::fs::read_to_string(&journal_path).map_err(io_err)?;
            for line in body.lines().filter(|l| !l.trim().is_empty()) {
                let Ok(rec) = serde_json::from_str::<IndexRecord>(line) else { continue };
                match rec.ev.as_str() {
                    "insert" => {
                        state.tick += 1;
                        if dir.join(page_file_name(&rec.guid, rec.offset, rec.len)).exists() {
                            let prev = state.pages.insert(
                                (rec.guid, rec.offset),
                                PageMeta { len: rec.len, last_access: state.tick },
                            );
                            state.total += rec.len - prev.map(|p| p.len).unwrap_or(0);
                        }
                    }
                    "evict" => {
                        if let Some(meta) = state.pages.remove(&(rec.guid, rec.offset)) {
                            state.total -= meta.len;
                        }
                    }
                    "pin" => {
                        state.granularity.insert(rec.guid, rec.len);
                    }
                    _ => {}
                }
            }
        }
        let journal = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(io_err)?;
        Ok(PageStore {
            dir,
            budget,
            state: Mutex::new(state),
            journal: Mutex::new(journal),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            next_hop_fetches: AtomicU64::new(0),
        })
    }

    pub fn counters(&self) -> PageCounters {
        PageCounters {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            next_hop_fetches: self.next_hop_fetches.load(Ordering::SeqCst),
            cached_bytes: self.state.lock().unwrap().total,
        }
    }

    pub fn note_next_hop_fetch(&self) {
        self.next_hop_fetches.fetch_add(1, Ordering::SeqCst);
    }

    /// Adopt the GUID's existing page granularity, or pin `wanted` as
    /// this server's granularity for it.  Returns the effective value.
    pub fn pin_page_size(&self, guid: &Guid, wanted: u64) -> u64 {
        let pinned = {
            let mut st = self.state.lock().unwrap();
            match st.granularity.get(guid) {
                Some(ps) => return *ps,
                None => {
                    st.granularity.insert(*guid, wanted);
                    wanted
                }
            }
        };
        self.journal_record("pin", guid, 0, pinned);
        pinned
    }

    pub fn contains_guid(&self, guid: &Guid) -> bool {
        self.state
            .lock()
            .unwrap()
            .pages
            .range((*guid, 0)..=(*guid, u64::MAX))
            .next()
            .is_some()
    }

    pub fn cached_bytes(&self) -> u64 {
        self.state.lock().unwrap().total
    }

    fn journal_record(&self, ev: &str, guid: &Guid, offset: u64, len: u64) {
        let rec = IndexRecord { ev: ev.to_string(), guid: *guid, offset, len };
        let mut line = serde_json::to_vec(&rec).expect("index record serializes");
        line.push(b'\n');
        let mut j = self.journal.lock().unwrap();
        j.write_all(&line).ok();
        j.flush().ok();
    }

    /// Read a page if cached, updating recency.
    pub fn get(&self, guid: &Guid, offset: u64) -> Option<Vec<u8>> {
        let len = {
            let mut st = self.state.lock().unwrap();
            st.tick += 1;
            let tick = st.tick;
            let meta = st.pages.get_mut(&(*guid, offset))?;
            meta.last_access = tick;
            meta.len
        };
        match std::fs::read(self.dir.join(page_file_name(guid, offset, len))) {
            Ok(bytes) => Some(bytes),
            Err(_) => {
                // The page file vanished externally; drop the entry.
                let mut st = self.state.lock().unwrap();
                if let Some(meta) = st.pages.remove(&(*guid, offset)) {
                    st.total -= meta.len;
                }
                None
            }
        }
    }

    /// Insert a page (written as `<guid>.<offset>.<length>.page`) and
    /// evict least-recently-used pages down to the budget.
    pub fn put(&self, guid: &Guid, offset: u64, bytes: &[u8]) -> GridResult<()> {
        let len = bytes.len() as u64;
        let path = self.dir.join(page_file_name(guid, offset, len));
        std::fs::write(&path, bytes).map_err(io_err)?;
        self.journal_record("insert", guid, offset, len);
        let mut evicted = Vec::new();
        {
            let mut st = self.state.lock().unwrap();
            st.tick += 1;
            let tick = st.tick;
            if let Some(prev) = st.pages.insert((*guid, offset), PageMeta { len, last_access: tick }) {
                st.total -= prev.len;
            }
            st.total += len;
            while st.total > self.budget {
                let victim = st
                    .pages
                    .iter()
                    .filter(|(k, _)| **k != (*guid, offset))
                    .min_by_key(|(_, m)| m.last_access)
                    .map(|(k, m)| (*k, m.len));
                let Some(((vg, vo), vlen)) = victim else { break };
                st.pages.remove(&(vg, vo));
                st.total -= vlen;
                evicted.push((vg, vo, vlen));
            }
        }
        for (vg, vo, vlen) in evicted {
            std::fs::remove_file(self.dir.join(page_file_name(&vg, vo, vlen))).ok();
            self.journal_record("evict", &vg, vo, vlen);
        }
        Ok(())
    }

    /// Cached page or a coalesced fetch: concurrent requests for one
    /// page share a single `fetch` run.
    pub async fn get_or_fetch<F>(&self, guid: &Guid, offset: u64, fetch: F) -> GridResult<Vec<u8>>
    where
        F: Future<Output = GridResult<Vec<u8>>>,
    {
        let mut fetch = Some(fetch);
        loop {
            let wait_rx = {
                if let Some(bytes) = self.get(guid, offset) {
                    self.hits.fetch_add(1, Ordering::SeqCst);
                    return Ok(bytes);
                }
                let mut st = self.state.lock().unwrap();
                if let Some(waiters) = st.inflight.get_mut(&(*guid, offset)) {
                    let (tx, rx) = oneshot::channel();
                    waiters.push(tx);
                    Some(rx)
                } else {
                    st.inflight.insert((*guid, offset), Vec::new());
                    None
                }
            };
            match wait_rx {
                Some(rx) => match rx.await {
                    Ok(result) => return result,
                    Err(_) => continue, // fetcher dropped; retry
                },
                None => {
                    self.misses.fetch_add(1, Ordering::SeqCst);
                    let result = match fetch.take() {
                        Some(f) => f.await,
                        None => Err(GridError::transport_error("page fetch retried unexpectedly")),
                    };
                    let result = match result {
                        Ok(bytes) => match self.put(guid, offset, &bytes) {
                            Ok(()) => Ok(bytes),
                            Err(e) => Err(e),
                        },
                        Err(e) => Err(e),
                    };
                    let waiters = {
                        let mut st = self.state.lock().unwrap();
                        st.inflight.remove(&(*guid, offset)).unwrap_or_default()
                    };
                    for tx in waiters {
                        tx.send(result.clone()).ok();
                    }
                    return result;
                }
            }
        }
    }

    /// All cached pages with their bytes, for coherence checks.
    pub fn snapshot(&self) -> Vec<(Guid, u64, Vec<u8>)> {
        let entries: Vec<(Guid, u64, u64)> = {
            let st = self.state.lock().unwrap();
            st.pages.iter().map(|((g, o), m)| (*g, *o, m.len)).collect()
        };
        entries
            .into_iter()
            .filter_map(|(g, o, len)| {
                std::fs::read(self.dir.join(page_file_name(&g, o, len))).ok().map(|b| (g, o, b))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_size_policy_bounds_and_shape() {
        assert_eq!(page_size_for(0, AccessKind::Random), 16 << 10);
        assert_eq!(page_size_for(100 << 20, AccessKind::Random), 16 << 10);
        // Unknown size, sequential: 64 KiB fallback.
        assert_eq!(page_size_for(0, AccessKind::Sequential), 64 << 10);
        // Tiny file clamps up to 4 KiB.
        assert_eq!(page_size_for(1, AccessKind::Sequential), 4 << 10);
        // 4 MiB file: 4 MiB / 64 = 64 KiB exactly.
        assert_eq!(page_size_for(4 << 20, AccessKind::Sequential), 64 << 10);
        // Giant file clamps down to 4 MiB.
        assert_eq!(page_size_for(1 << 40, AccessKind::Sequential), 4 << 20);
        for size in [0u64, 1, 4096, 100_000, 1 << 22, 1 << 33] {
            for kind in [AccessKind::Sequential, AccessKind::Random] {
                let ps = page_size_for(size, kind);
                assert!(ps.is_power_of_two());
                assert!((MIN_PAGE..=MAX_PAGE).contains(&ps));
            }
        }
    }

    #[test]
    fn covering_pages_arithmetic() {
        // 10 KiB file, 4 KiB pages: 3 pages, last one short.
        let pages = covering_pages(0, 10 << 10, 10 << 10, 4 << 10);
        assert_eq!(pages, vec![(0, 4096), (4096, 4096), (8192, 2048)]);
        // A range inside one page.
        assert_eq!(covering_pages(5000, 100, 10 << 10, 4 << 10), vec![(4096, 4096)]);
        // Range crossing a boundary.
        assert_eq!(
            covering_pages(4000, 200, 10 << 10, 4 << 10),
            vec![(0, 4096), (4096, 4096)]
        );
        assert!(covering_pages(0, 0, 1000, 4096).is_empty());
    }

    fn guid(n: u128) -> Guid {
        Guid::from_u128(n)
    }

    #[test]
    fn put_get_and_file_naming() {
        let dir = tempfile::tempdir().unwrap();
        let store = PageStore::open(dir.path(), 1 << 20).unwrap();
        store.put(&guid(1), 4096, &[7u8; 100]).unwrap();
        assert_eq!(store.get(&guid(1), 4096).unwrap(), vec![7u8; 100]);
        assert!(store.get(&guid(1), 0).is_none());
        let expect = format!("{}.4096.100.page", guid(1));
        assert!(dir.path().join(&expect).exists(), "{expect} should exist");
        assert!(store.contains_guid(&guid(1)));
        assert!(!store.contains_guid(&guid(2)));
    }

    #[test]
    fn journal_recovers_index() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = PageStore::open(dir.path(), 1 << 20).unwrap();
            store.put(&guid(1), 0, &[1u8; 50]).unwrap();
            store.put(&guid(2), 8192, &[2u8; 60]).unwrap();
        }
        let store = PageStore::open(dir.path(), 1 << 20).unwrap();
        assert_eq!(store.get(&guid(1), 0).unwrap(), vec![1u8; 50]);
        assert_eq!(store.get(&guid(2), 8192).unwrap(), vec![2u8; 60]);
        assert_eq!(store.cached_bytes(), 110);
    }

    #[test]
    fn lru_eviction_stays_within_budget() {
        let dir = tempfile::tempdir().unwrap();
        let store = PageStore::open(dir.path(), 100).unwrap();
        store.put(&guid(1), 0, &[0u8; 40]).unwrap();
        store.put(&guid(2), 0, &[0u8; 40]).unwrap();
        store.get(&guid(1), 0).unwrap(); // touch
        store.put(&guid(3), 0, &[0u8; 40]).unwrap();
        assert!(store.cached_bytes() <= 100);
        assert!(store.get(&guid(2), 0).is_none(), "LRU page evicted");
        assert!(store.get(&guid(1), 0).is_some());
        assert!(store.get(&guid(3), 0).is_some());
    }

    /// Completes on the second poll, so a concurrent requester has a
    /// chance to register as a waiter.
    struct YieldOnce(bool);
    impl Future for YieldOnce {
        type Output = ();
        fn poll(
            mut self: std::pin::Pin<&mut Self>,
            cx: &mut std::task::Context<'_>,
        ) -> std::task::Poll<()> {
            if self.0 {
                std::task::Poll::Ready(())
            } else {
                self.0 = true;
                cx.waker().wake_by_ref();
                std::task::Poll::Pending
            }
        }
    }

    #[test]
    fn coalesced_fetch_runs_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = PageStore::open(dir.path(), 1 << 20).unwrap();
        let calls = std::sync::atomic::AtomicU64::new(0);
        let g = guid(9);
        futures::executor::block_on(async {
            let f1 = store.get_or_fetch(&g, 0, async {
                YieldOnce(false).await;
                calls.fetch_add(1, Ordering::SeqCst);
                Ok(vec![5u8; 10])
            });
            let f2 = store.get_or_fetch(&g, 0, async {
                YieldOnce(false).await;
                calls.fetch_add(1, Ordering::SeqCst);
                Ok(vec![5u8; 10])
            });
            let (a, b) = futures::join!(f1, f2);
            assert_eq!(a.unwrap(), b.unwrap());
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let c = store.counters();
        assert_eq!((c.hits, c.misses), (0, 1));
    }
}
