//! Local disk cache keyed by GUID: the first access pulls the whole
//! file from a producer, repeated accesses are served from disk.  The
//! cache is bounded by a byte budget with least-recently-used eviction,
//! and concurrent pulls of one key coalesce into a single producer run.

use crate::error::{GridError, GridResult};
use futures::channel::oneshot;
use futures::future::BoxFuture;
use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

/// An open handle onto a cached file.  The file descriptor stays valid
/// even if the entry is evicted while reads are in progress.
#[derive(Debug)]
pub struct CachedFile {
    pub path: PathBuf,
    pub file: File,
    pub size: u64,
}

impl CachedFile {
    /// Read `len` bytes at `offset`; short only at end of file.
    pub fn read_range(&self, offset: u64, len: u64) -> GridResult<Vec<u8>> {
        use std::os::unix::fs::FileExt;
        let end = self.size.min(offset.saturating_add(len));
        if offset > self.size {
            return Err(GridError::range_error(format!(
                "offset {offset} beyond size {}",
                self.size
            )));
        }
        let mut buf = vec![0u8; (end - offset) as usize];
        self.file
            .read_exact_at(&mut buf, offset)
            .map_err(|e| GridError::backend_failure(format!("cache read: {e}")))?;
        Ok(buf)
    }
}

struct Entry {
    file_name: String,
    size: u64,
    last_access: u64,
}

#[derive(Default)]
struct State {
    entries: BTreeMap<String, Entry>,
    total: u64,
    tick: u64,
    inflight: BTreeMap<String, Vec<oneshot::Sender<Result<(), GridError>>>>,
}

pub struct FileCache {
    dir: PathBuf,
    budget: u64,
    state: Mutex<State>,
    producer_calls: AtomicU64,
}

fn file_name_for(key: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(&Sha256::digest(key.as_bytes())[..16])
}

impl FileCache {
    pub fn new(dir: impl Into<PathBuf>, budget: u64) -> GridResult<FileCache> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| GridError::backend_failure(format!("cache dir: {e}")))?;
        Ok(FileCache { dir, budget, state: Mutex::new(State::default()), producer_calls: AtomicU64::new(0) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// How many times a producer actually ran (test instrumentation).
    pub fn producer_calls(&self) -> u64 {
        self.producer_calls.load(Ordering::SeqCst)
    }

    pub fn cached_bytes(&self) -> u64 {
        self.state.lock().unwrap().total
    }

    pub fn contains(&self, key: &str) -> bool {
        self.state.lock().unwrap().entries.contains_key(key)
    }

    /// Drop one entry (used when the underlying file is deleted).
    pub fn invalidate(&self, key: &str) {
        let mut st = self.state.lock().unwrap();
        if let Some(e) = st.entries.remove(key) {
            st.total -= e.size;
            std::fs::remove_file(self.dir.join(&e.file_name)).ok();
        }
    }

    fn open_hit(&self, key: &str) -> Option<CachedFile> {
        let mut st = self.state.lock().unwrap();
        st.tick += 1;
        let tick = st.tick;
        let e = st.entries.get_mut(key)?;
        e.last_access = tick;
        let path = self.dir.join(&e.file_name);
        let size = e.size;
        File::open(&path).ok().map(|file| CachedFile { path, file, size })
    }

    /// Return the cached file for `key`, running `producer` for the full
    /// content on the first access.  Nothing is cached when the producer
    /// fails, and concurrent callers share one producer run.
    pub async fn get_or_pull(
        &self,
        key: &str,
        producer: BoxFuture<'_, GridResult<Vec<u8>>>,
    ) -> GridResult<CachedFile> {
        loop {
            // Fast path plus coalescing decision under one lock.
            let wait_rx = {
                let mut st = self.state.lock().unwrap();
                if st.entries.contains_key(key) {
                    drop(st);
                    if let Some(hit) = self.open_hit(key) {
                        return Ok(hit);
                    }
                    // Cache file vanished externally; fall through to pull.
                    self.invalidate(key);
                    None
                } else if let Some(waiters) = st.inflight.get_mut(key) {
                    let (tx, rx) = oneshot::channel();
                    waiters.push(tx);
                    Some(rx)
                } else {
                    st.inflight.insert(key.to_string(), Vec::new());
                    None
                }
            };
            match wait_rx {
                Some(rx) => {
                    match rx.await {
                        Ok(Ok(())) => {
                            if let Some(hit) = self.open_hit(key) {
                                return Ok(hit);
                            }
                            // Evicted between insert and open; retry.
                            continue;
                        }
                        Ok(Err(e)) => return Err(e),
                        Err(_) => continue, // producer task dropped; retry
                    }
                }
                None => return self.pull(key, producer).await,
            }
        }
    }

    async fn pull(&self, key: &str, producer: BoxFuture<'_, GridResult<Vec<u8>>>) -> GridResult<CachedFile> {
        self.producer_calls.fetch_add(1, Ordering::SeqCst);
        let produced = producer.await;
        let result = match produced {
            Ok(bytes) => self.insert(key, &bytes),
            Err(e) => Err(GridError::producer_failure(format!("{}: {}", e.code, e.msg))),
        };
        // Settle waiters either way.
        let waiters = {
            let mut st = self.state.lock().unwrap();
            st.inflight.remove(key).unwrap_or_default()
        };
        let settled = result.as_ref().map(|_| ()).map_err(|e| e.clone());
        for tx in waiters {
            tx.send(settled.clone()).ok();
        }
        result
    }

    fn insert(&self, key: &str, bytes: &[u8]) -> GridResult<CachedFile> {
        let file_name = file_name_for(key);
        let path = self.dir.join(&file_name);
        std::fs::write(&path, bytes)
            .map_err(|e| GridError::backend_failure(format!("cache write: {e}")))?;
        let file = File::open(&path)
            .map_err(|e| GridError::backend_failure(format!("cache open: {e}")))?;
        let size = bytes.len() as u64;
        let mut st = self.state.lock().unwrap();
        st.tick += 1;
        let tick = st.tick;
        st.total += size;
        st.entries.insert(key.to_string(), Entry { file_name, size, last_access: tick });
        // Evict least-recently-used entries down to budget, sparing the
        // entry just inserted.
        while st.total > self.budget {
            let victim = st
                .entries
                .iter()
                .filter(|(k, _)| k.as_str() != key)
                .min_by_key(|(_, e)| e.last_access)
                .map(|(k, _)| k.clone());
            let Some(victim) = victim else { break };
            if let Some(e) = st.entries.remove(&victim) {
                st.total -= e.size;
                std::fs::remove_file(self.dir.join(&e.file_name)).ok();
            }
        }
        Ok(CachedFile { path, file, size })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ready(bytes: Vec<u8>) -> BoxFuture<'static, GridResult<Vec<u8>>> {
        Box::pin(async move { Ok(bytes) })
    }

    fn failing(msg: &str) -> BoxFuture<'static, GridResult<Vec<u8>>> {
        let msg = msg.to_string();
        Box::pin(async move { Err(GridError::transport_error(msg)) })
    }

    fn block_on<T>(fut: impl std::future::Future<Output = T>) -> T {
        futures::executor::block_on(fut)
    }

    #[test]
    fn second_get_skips_producer() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FileCache::new(dir.path(), 1 << 20).unwrap();
        let a = block_on(cache.get_or_pull("g1", ready(vec![1, 2, 3]))).unwrap();
        assert_eq!(a.read_range(0, 10).unwrap(), vec![1, 2, 3]);
        let b = block_on(cache.get_or_pull("g1", ready(vec![9, 9, 9]))).unwrap();
        assert_eq!(b.read_range(1, 1).unwrap(), vec![2]);
        assert_eq!(cache.producer_calls(), 1);
    }

    #[test]
    fn distinct_keys_pull_separately() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FileCache::new(dir.path(), 1 << 20).unwrap();
        block_on(cache.get_or_pull("g1", ready(vec![1]))).unwrap();
        block_on(cache.get_or_pull("g2", ready(vec![2]))).unwrap();
        assert_eq!(cache.producer_calls(), 2);
    }

    #[test]
    fn failed_producer_caches_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FileCache::new(dir.path(), 1 << 20).unwrap();
        let err = block_on(cache.get_or_pull("g1", failing("boom"))).unwrap_err();
        assert_eq!(err.code.as_str(), "ProducerFailure");
        assert!(!cache.contains("g1"));
        // Retry runs the producer again and succeeds.
        block_on(cache.get_or_pull("g1", ready(vec![5]))).unwrap();
        assert_eq!(cache.producer_calls(), 2);
    }

    #[test]
    fn lru_eviction_respects_budget() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FileCache::new(dir.path(), 100).unwrap();
        block_on(cache.get_or_pull("a", ready(vec![0; 40]))).unwrap();
        block_on(cache.get_or_pull("b", ready(vec![0; 40]))).unwrap();
        // Touch a so b becomes the LRU victim.
        block_on(cache.get_or_pull("a", ready(vec![0; 1]))).unwrap();
        block_on(cache.get_or_pull("c", ready(vec![0; 40]))).unwrap();
        assert!(cache.cached_bytes() <= 100);
        assert!(cache.contains("a"));
        assert!(cache.contains("c"));
        assert!(!cache.contains("b"));
    }

    #[test]
    fn read_range_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FileCache::new(dir.path(), 1 << 20).unwrap();
        let f = block_on(cache.get_or_pull("g", ready((0..100u8).collect()))).unwrap();
        assert_eq!(f.read_range(10, 5).unwrap(), (10..15u8).collect::<Vec<_>>());
        assert!(f.read_range(100, 0).unwrap().is_empty());
        assert_eq!(f.read_range(101, 1).unwrap_err().code.as_str(), "RangeError");
        assert_eq!(f.read_range(95, 10).unwrap().len(), 5);
    }
}
