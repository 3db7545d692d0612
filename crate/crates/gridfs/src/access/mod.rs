//! The client-side Grid API: generic open/read/write/close/sync over a
//! table of open files, replica selection, and the two access
//! strategies (remote partial I/O, or whole-file staging to the local
//! disk cache).
//!
//! Opens in write-once mode mint a GUID at the catalogue, reserve a PFN
//! at the target storage element, stream strictly sequential writes,
//! and register the LFN/PFN pair at close after the SE validated the
//! byte count.  A handle is removed from the table on every error path;
//! no operation on a closed handle succeeds.

use crate::aiod::{self, AccessKind, AccessTicket, AiodSession, EncryptionKind, RouteChain};
use crate::catalogue::{CatClient, ResolvedLocation};
use crate::error::{GridError, GridResult};
use crate::net::Net;
use crate::storage::{CachedFile, FileCache, SeClient};
use crate::types::{Guid, LfnPath, Mode, OpenMode, Pfn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

/// How an open handle moves bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessStrategy {
    /// Partial transfers against the remote I/O endpoint per request.
    RemotePartial,
    /// Download (or locally spool) the complete file; partial access
    /// runs against the local copy.
    WholeFileLocal,
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub catalogue_addr: String,
    pub default_se: String,
    pub site: String,
    pub cache_dir: PathBuf,
    /// Default route for data transfers; None talks to SEs directly.
    pub route: Option<RouteChain>,
    /// Auth token, `user` or `user:group1,group2`.
    pub auth: String,
    /// Catalogue path of this user's credential virtual file; defaults
    /// to `/<user>/.credential`.
    pub credential_ref: Option<LfnPath>,
    pub staging_budget_bytes: u64,
}

impl ClientConfig {
    pub fn new(catalogue_addr: &str, default_se: &str, site: &str, cache_dir: PathBuf, auth: &str) -> Self {
        ClientConfig {
            catalogue_addr: catalogue_addr.to_string(),
            default_se: default_se.to_string(),
            site: site.to_string(),
            cache_dir,
            route: None,
            auth: auth.to_string(),
            credential_ref: None,
            staging_budget_bytes: 1 << 30,
        }
    }
}

/// Split `lfn[@SE]` at the last `@`; an LFN itself may not contain `@`.
pub fn parse_lfn_at_se(text: &str) -> GridResult<(LfnPath, Option<String>)> {
    match text.rsplit_once('@') {
        Some((lfn, se)) => {
            if lfn.contains('@') {
                return Err(GridError::bad_request(format!("LFN may not contain '@': {text:?}")));
            }
            if se.is_empty() {
                return Err(GridError::bad_request(format!("empty SE name in {text:?}")));
            }
            Ok((LfnPath::parse(lfn)?, Some(se.to_string())))
        }
        None => Ok((LfnPath::parse(text)?, None)),
    }
}

/// Trivial closest-location matching: the first replica whose
/// site tag equals the client's site, otherwise the master.
pub fn select_best_replica<'a>(
    replicas: &'a [(Pfn, Option<String>)],
    client_site: &str,
) -> Option<&'a Pfn> {
    if replicas.is_empty() {
        return None;
    }
    replicas
        .iter()
        .find(|(_, site)| site.as_deref() == Some(client_site))
        .or(replicas.first())
        .map(|(pfn, _)| pfn)
}

/// Opaque handle id, unique among open handles and never reused while
/// any handle remains open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileHandle(pub u64);

enum HandleIo {
    ReadSe { client: SeClient, pfn: Pfn },
    ReadAiod { sess: AiodSession },
    ReadLocal { file: CachedFile },
    ReadInline { bytes: Vec<u8> },
    WriteSe { client: SeClient, pfn: Pfn },
    WriteAiod { sess: AiodSession, pfn: Pfn },
    WriteSpool { file: std::fs::File, path: PathBuf, pfn: Pfn, se_addr: String, route: Option<RouteChain> },
}

struct HandleState {
    lfn: LfnPath,
    guid: Guid,
    mode: OpenMode,
    strategy: AccessStrategy,
    size: u64,
    next_expected_offset: u64,
    perms: Mode,
    io: HandleIo,
}

#[derive(Default)]
struct OpenFileTable {
    next_id: u64,
    handles: BTreeMap<u64, HandleState>,
}

/// Options for a write-once open.
#[derive(Debug, Clone)]
pub struct WriteOptions {
    pub size_hint: u64,
    pub perms: Mode,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions { size_hint: 0, perms: Mode::new(0o644) }
    }
}

pub struct GridClient {
    net: Arc<dyn Net>,
    cfg: ClientConfig,
    catalogue: CatClient,
    staging: FileCache,
    table: futures::lock::Mutex<OpenFileTable>,
}

struct SpoolDest<'a> {
    pfn: &'a Pfn,
    se_addr: &'a str,
    route: Option<&'a RouteChain>,
    lfn: &'a LfnPath,
    guid: Guid,
}

impl GridClient {
    pub fn new(net: Arc<dyn Net>, cfg: ClientConfig) -> GridResult<GridClient> {
        let catalogue = CatClient::new(net.clone(), &cfg.catalogue_addr, &cfg.auth);
        let staging = FileCache::new(cfg.cache_dir.join("staging"), cfg.staging_budget_bytes)?;
        Ok(GridClient { net, cfg, catalogue, staging, table: Default::default() })
    }

    pub fn catalogue(&self) -> &CatClient {
        &self.catalogue
    }

    pub fn net(&self) -> &Arc<dyn Net> {
        &self.net
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn user(&self) -> String {
        crate::types::Principal::from_token(&self.cfg.auth)
            .map(|p| p.user)
            .unwrap_or_default()
    }

    fn credential_ref(&self) -> LfnPath {
        self.cfg.credential_ref.clone().unwrap_or_else(|| {
            LfnPath::parse(&format!("/{}/.credential", self.user())).expect("valid path")
        })
    }

    pub fn open_handle_count(&self) -> usize {
        futures::executor::block_on(async { self.table.lock().await.handles.len() })
    }

    /// (lfn, guid, mode, strategy, size) of an open handle.
    pub async fn handle_info(
        &self,
        h: FileHandle,
    ) -> GridResult<(LfnPath, Guid, OpenMode, AccessStrategy, u64)> {
        let table = self.table.lock().await;
        let st = table
            .handles
            .get(&h.0)
            .ok_or_else(|| GridError::bad_handle(format!("handle {} is not open", h.0)))?;
        Ok((st.lfn.clone(), st.guid, st.mode, st.strategy, st.size))
    }

    // ---- open ------------------------------------------------------------

    pub async fn generic_open(
        &self,
        target: &str,
        mode: OpenMode,
        strategy: AccessStrategy,
    ) -> GridResult<FileHandle> {
        self.generic_open_routed(target, mode, strategy, self.cfg.route.clone()).await
    }

    pub async fn generic_open_routed(
        &self,
        target: &str,
        mode: OpenMode,
        strategy: AccessStrategy,
        route: Option<RouteChain>,
    ) -> GridResult<FileHandle> {
        match mode {
            OpenMode::Read => self.open_read(target, strategy, route).await,
            OpenMode::WriteOnce => {
                self.open_write(target, strategy, route, WriteOptions::default()).await
            }
        }
    }

    pub async fn open_write_with(
        &self,
        target: &str,
        strategy: AccessStrategy,
        route: Option<RouteChain>,
        opts: WriteOptions,
    ) -> GridResult<FileHandle> {
        self.open_write(target, strategy, route, opts).await
    }

    async fn insert_handle(&self, st: HandleState) -> FileHandle {
        let mut table = self.table.lock().await;
        let id = table.next_id;
        table.next_id += 1;
        table.handles.insert(id, st);
        FileHandle(id)
    }

    async fn open_read(
        &self,
        target: &str,
        strategy: AccessStrategy,
        route: Option<RouteChain>,
    ) -> GridResult<FileHandle> {
        let (lfn, se_pref) = parse_lfn_at_se(target)?;
        // The virtual metadata files read through the catalogue.
        if let Some(stem) = lfn.to_string().strip_suffix(crate::catalogue::META_SUFFIX) {
            let base = LfnPath::parse(stem)?;
            let text = self.catalogue.read_metadata(&base).await?;
            let bytes = text.into_bytes();
            let size = bytes.len() as u64;
            return Ok(self
                .insert_handle(HandleState {
                    lfn,
                    guid: Guid::nil(),
                    mode: OpenMode::Read,
                    strategy,
                    size,
                    next_expected_offset: 0,
                    perms: Mode::new(0o444),
                    io: HandleIo::ReadInline { bytes },
                })
                .await);
        }
        let resolved = self.catalogue.resolve(&lfn).await?;
        let preferred: Vec<(Pfn, Option<String>)> = resolved
            .locations
            .iter()
            .filter(|l| match &se_pref {
                Some(se) => l.se.as_deref() == Some(se.as_str()),
                None => true,
            })
            .map(|l: &ResolvedLocation| (l.pfn.clone(), l.site.clone()))
            .collect();
        let all: Vec<(Pfn, Option<String>)> =
            resolved.locations.iter().map(|l| (l.pfn.clone(), l.site.clone())).collect();
        let pool = if preferred.is_empty() { &all } else { &preferred };
        let best = select_best_replica(pool, &self.cfg.site)
            .ok_or_else(|| GridError::not_found(format!("{lfn} has no locations")))?
            .clone();
        // Try the best replica first, then the others in resolve order.
        let mut candidates = vec![best];
        for (pfn, _) in pool {
            if !candidates.contains(pfn) {
                candidates.push(pfn.clone());
            }
        }
        let guid = resolved.guid;
        let size = resolved.size;

        let mut last_err = GridError::unreachable(format!("no replica endpoint reachable for {lfn}"));
        for pfn in candidates {
            let io = match (strategy, &route) {
                (AccessStrategy::RemotePartial, None) => {
                    SeClient::connect(&self.net, &pfn.endpoint(), &self.cfg.auth)
                        .await
                        .map(|client| HandleIo::ReadSe { client, pfn: pfn.clone() })
                }
                (AccessStrategy::RemotePartial, Some(route)) => self
                    .open_aiod(route, &lfn, &pfn, guid, OpenMode::Read, AccessKind::Random)
                    .await
                    .map(|sess| HandleIo::ReadAiod { sess }),
                (AccessStrategy::WholeFileLocal, _) => self
                    .stage_whole_file(&lfn, &pfn, guid, size, route.as_ref())
                    .await
                    .map(|file| HandleIo::ReadLocal { file }),
            };
            match io {
                Ok(io) => {
                    return Ok(self
                        .insert_handle(HandleState {
                            lfn,
                            guid,
                            mode: OpenMode::Read,
                            strategy,
                            size,
                            next_expected_offset: 0,
                            perms: Mode::new(0o444),
                            io,
                        })
                        .await)
                }
                // A dead endpoint falls through to the next replica.
                Err(e)
                    if matches!(
                        e.code,
                        crate::ErrorCode::Unreachable
                            | crate::ErrorCode::TransportError
                            | crate::ErrorCode::ProducerFailure
                    ) =>
                {
                    last_err = e;
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err)
    }

    async fn open_aiod(
        &self,
        route: &RouteChain,
        lfn: &LfnPath,
        pfn: &Pfn,
        guid: Guid,
        mode: OpenMode,
        access: AccessKind,
    ) -> GridResult<AiodSession> {
        let ticket = AccessTicket {
            route: route.clone(),
            grid_user: self.user(),
            credential_ref: self.credential_ref(),
            lfn: lfn.clone(),
            pfn: pfn.clone(),
            guid,
            encryption: EncryptionKind::None,
        };
        aiod::open_session(&self.net, &ticket, mode, access, None, &self.cfg.auth).await
    }

    /// Stage the complete file into the client cache, keyed by GUID and
    /// reused across opens.
    async fn stage_whole_file(
        &self,
        lfn: &LfnPath,
        pfn: &Pfn,
        guid: Guid,
        size: u64,
        route: Option<&RouteChain>,
    ) -> GridResult<CachedFile> {
        let key = guid.to_string();
        let producer: futures::future::BoxFuture<'_, GridResult<Vec<u8>>> = match route {
            None => {
                let endpoint = pfn.endpoint();
                let pfn = pfn.clone();
                Box::pin(async move {
                    let mut client = SeClient::connect(&self.net, &endpoint, &self.cfg.auth).await?;
                    client.fetch_whole(&pfn).await
                })
            }
            Some(route) => {
                let route = route.clone();
                let lfn = lfn.clone();
                let pfn = pfn.clone();
                Box::pin(async move {
                    let mut sess = self
                        .open_aiod(&route, &lfn, &pfn, guid, OpenMode::Read, AccessKind::Sequential)
                        .await?;
                    let mut out = Vec::with_capacity(size as usize);
                    let chunk = sess.page_size.max(4096);
                    let mut offset = 0;
                    while offset < size {
                        let n = chunk.min(size - offset);
                        let part = sess.read(offset, n).await?;
                        if part.is_empty() {
                            return Err(GridError::transport_error("short read while staging"));
                        }
                        offset += part.len() as u64;
                        out.extend_from_slice(&part);
                    }
                    sess.close(None).await.ok();
                    Ok(out)
                })
            }
        };
        let file = self.staging.get_or_pull(&key, producer).await?;
        if file.size != size {
            self.staging.invalidate(&key);
            return Err(GridError::size_mismatch(format!(
                "staged {} bytes, catalogue says {size}",
                file.size
            )));
        }
        Ok(file)
    }

    async fn open_write(
        &self,
        target: &str,
        strategy: AccessStrategy,
        route: Option<RouteChain>,
        opts: WriteOptions,
    ) -> GridResult<FileHandle> {
        let (lfn, se_pref) = parse_lfn_at_se(target)?;
        let se_name = se_pref.unwrap_or_else(|| self.cfg.default_se.clone());
        let guid = self.catalogue.prepare_write(&lfn).await?;
        let se = self.catalogue.lookup_se(&se_name).await?;
        // The SE provides a new PFN and checks for space.
        let mut se_client = SeClient::connect(&self.net, &se.addr, &self.cfg.auth).await?;
        let (pfn, _volume) = se_client.allocate(opts.size_hint, guid).await?;

        let io = match (strategy, &route) {
            (AccessStrategy::RemotePartial, None) => HandleIo::WriteSe { client: se_client, pfn },
            (AccessStrategy::RemotePartial, Some(route)) => {
                let sess = self
                    .open_aiod(route, &lfn, &pfn, guid, OpenMode::WriteOnce, AccessKind::Sequential)
                    .await?;
                HandleIo::WriteAiod { sess, pfn }
            }
            (AccessStrategy::WholeFileLocal, _) => {
                let path = self.cfg.cache_dir.join(format!("spool-{guid}"));
                let file = std::fs::File::create(&path)
                    .map_err(|e| GridError::backend_failure(format!("client spool: {e}")))?;
                HandleIo::WriteSpool { file, path, pfn, se_addr: se.addr.clone(), route: route.clone() }
            }
        };
        Ok(self
            .insert_handle(HandleState {
                lfn,
                guid,
                mode: OpenMode::WriteOnce,
                strategy,
                size: 0,
                next_expected_offset: 0,
                perms: opts.perms,
                io,
            })
            .await)
    }

    // ---- I/O on handles ----------------------------------------------------

    async fn take(&self, h: FileHandle) -> GridResult<HandleState> {
        self.table
            .lock()
            .await
            .handles
            .remove(&h.0)
            .ok_or_else(|| GridError::bad_handle(format!("handle {} is not open", h.0)))
    }

    async fn put_back(&self, h: FileHandle, st: HandleState) {
        self.table.lock().await.handles.insert(h.0, st);
    }

    /// Read `size` bytes at `offset`; short only at end of file.
    pub async fn generic_read(&self, h: FileHandle, offset: u64, size: u64) -> GridResult<Vec<u8>> {
        let mut st = self.take(h).await?;
        let result = self.do_read(&mut st, offset, size).await;
        match result {
            Ok(data) => {
                self.put_back(h, st).await;
                Ok(data)
            }
            Err(e) => Err(e), // handle stays closed on error
        }
    }

    async fn do_read(&self, st: &mut HandleState, offset: u64, size: u64) -> GridResult<Vec<u8>> {
        if st.mode != OpenMode::Read {
            return Err(GridError::bad_handle("handle is not open for reading"));
        }
        if offset > st.size {
            return Err(GridError::range_error(format!(
                "offset {offset} beyond end of {}-byte file",
                st.size
            )));
        }
        let len = size.min(st.size - offset);
        if len == 0 {
            return Ok(Vec::new());
        }
        match &mut st.io {
            HandleIo::ReadSe { client, pfn } => client.fetch(pfn, offset, len).await,
            HandleIo::ReadAiod { sess } => sess.read(offset, len).await,
            HandleIo::ReadLocal { file } => file.read_range(offset, len),
            HandleIo::ReadInline { bytes } => {
                Ok(bytes[offset as usize..(offset + len) as usize].to_vec())
            }
            _ => Err(GridError::bad_handle("handle is not open for reading")),
        }
    }

    /// Append one chunk; `offset` must equal the write cursor.
    pub async fn generic_write(&self, h: FileHandle, offset: u64, data: &[u8]) -> GridResult<u64> {
        let mut st = self.take(h).await?;
        let result = self.do_write(&mut st, offset, data).await;
        match result {
            Ok(n) => {
                self.put_back(h, st).await;
                Ok(n)
            }
            Err(e) => {
                self.abandon_write(st).await;
                Err(e)
            }
        }
    }

    async fn do_write(&self, st: &mut HandleState, offset: u64, data: &[u8]) -> GridResult<u64> {
        if st.mode != OpenMode::WriteOnce {
            return Err(GridError::bad_handle("handle is not open for writing"));
        }
        if offset != st.next_expected_offset {
            return Err(GridError::non_sequential_write(format!(
                "write at {offset}, stream is at {}",
                st.next_expected_offset
            )));
        }
        if data.is_empty() {
            return Ok(0);
        }
        match &mut st.io {
            HandleIo::WriteSe { client, pfn } => {
                client.write(pfn, offset, data).await?;
            }
            HandleIo::WriteAiod { sess, .. } => {
                sess.write(offset, data).await?;
            }
            HandleIo::WriteSpool { file, .. } => {
                use std::io::Write;
                file.write_all(data)
                    .map_err(|e| GridError::backend_failure(format!("client spool: {e}")))?;
            }
            _ => return Err(GridError::bad_handle("handle is not open for writing")),
        }
        st.next_expected_offset += data.len() as u64;
        st.size = st.next_expected_offset;
        Ok(data.len() as u64)
    }

    /// Best-effort cleanup of a failed write handle: nothing must stay
    /// allocated at the SE.
    async fn abandon_write(&self, st: HandleState) {
        match st.io {
            HandleIo::WriteSe { mut client, pfn } => {
                client.abort(&pfn).await.ok();
            }
            HandleIo::WriteSpool { path, se_addr, pfn, .. } => {
                std::fs::remove_file(&path).ok();
                if let Ok(mut client) = SeClient::connect(&self.net, &se_addr, &self.cfg.auth).await {
                    client.abort(&pfn).await.ok();
                }
            }
            // Dropping the aiod session closes the chain; the terminal
            // SE allocation stays uncommitted.
            HandleIo::WriteAiod { .. } => {}
            _ => {}
        }
    }

    /// Make accepted bytes durable at the SE (or the local spool).
    pub async fn generic_sync(&self, h: FileHandle) -> GridResult<()> {
        let mut st = self.take(h).await?;
        if st.mode != OpenMode::WriteOnce {
            self.put_back(h, st).await;
            return Err(GridError::bad_handle("sync needs a write-once handle"));
        }
        let result = match &mut st.io {
            HandleIo::WriteSe { client, pfn } => client.sync(pfn).await,
            HandleIo::WriteAiod { sess, .. } => sess.sync().await,
            HandleIo::WriteSpool { file, .. } => file
                .sync_all()
                .map_err(|e| GridError::backend_failure(format!("spool sync: {e}"))),
            _ => Err(GridError::bad_handle("sync needs a write-once handle")),
        };
        match result {
            Ok(()) => {
                self.put_back(h, st).await;
                Ok(())
            }
            Err(e) => {
                self.abandon_write(st).await;
                Err(e)
            }
        }
    }

    /// Close the handle.  For write-once handles this validates the byte
    /// count at the SE and registers the LFN/PFN pair in the catalogue;
    /// a failed registration removes the stored file.
    pub async fn generic_close(&self, h: FileHandle) -> GridResult<()> {
        let st = self.take(h).await?;
        match st.mode {
            OpenMode::Read => Ok(()),
            OpenMode::WriteOnce => self.finish_write(st).await,
        }
    }

    async fn finish_write(&self, st: HandleState) -> GridResult<()> {
        let total = st.next_expected_offset;
        let (pfn, committed) = match st.io {
            HandleIo::WriteSe { mut client, pfn } => {
                client.commit(&pfn, total).await?;
                (pfn, true)
            }
            HandleIo::WriteAiod { mut sess, pfn } => {
                sess.close(Some(total)).await?;
                (pfn, true)
            }
            HandleIo::WriteSpool { file, path, pfn, se_addr, route } => {
                drop(file);
                let dest = SpoolDest { pfn: &pfn, se_addr: &se_addr, route: route.as_ref(), lfn: &st.lfn, guid: st.guid };
                let result = self.upload_spool(&path, dest, total).await;
                std::fs::remove_file(&path).ok();
                result?;
                (pfn, true)
            }
            _ => return Err(GridError::bad_handle("not a write handle")),
        };
        debug_assert!(committed);
        match self
            .catalogue
            .register_file(&st.lfn, &pfn, total, st.guid, st.perms)
            .await
        {
            Ok(()) => Ok(()),
            Err(e) => {
                // No orphan PFNs: remove the stored bytes before failing.
                if let Ok(mut client) = SeClient::connect(&self.net, &pfn.endpoint(), &self.cfg.auth).await {
                    client.rm_pfn(&pfn).await.ok();
                }
                Err(GridError::registration_failed(format!("{}: {}", e.code, e.msg)))
            }
        }
    }

    async fn upload_spool(&self, path: &PathBuf, dest: SpoolDest<'_>, total: u64) -> GridResult<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| GridError::backend_failure(format!("client spool: {e}")))?;
        if bytes.len() as u64 != total {
            return Err(GridError::size_validation_failed(format!(
                "spool holds {} bytes, stream said {total}",
                bytes.len()
            )));
        }
        const CHUNK: usize = 256 << 10;
        match dest.route {
            None => {
                let mut client = SeClient::connect(&self.net, dest.se_addr, &self.cfg.auth).await?;
                let mut offset = 0u64;
                for chunk in bytes.chunks(CHUNK) {
                    client.write(dest.pfn, offset, chunk).await?;
                    offset += chunk.len() as u64;
                }
                client.commit(dest.pfn, total).await?;
            }
            Some(route) => {
                let mut sess = self
                    .open_aiod(route, dest.lfn, dest.pfn, dest.guid, OpenMode::WriteOnce, AccessKind::Sequential)
                    .await?;
                let mut offset = 0u64;
                for chunk in bytes.chunks(CHUNK) {
                    sess.write(offset, chunk).await?;
                    offset += chunk.len() as u64;
                }
                sess.close(Some(total)).await?;
            }
        }
        Ok(())
    }

    // ---- convenience wrappers ----------------------------------------------

    /// Whole-file download through the generic API.
    pub async fn get_file(&self, target: &str, strategy: AccessStrategy, route: Option<RouteChain>) -> GridResult<Vec<u8>> {
        let h = self.generic_open_routed(target, OpenMode::Read, strategy, route).await?;
        let mut out = Vec::new();
        let mut offset = 0u64;
        loop {
            let part = self.generic_read(h, offset, 256 << 10).await?;
            if part.is_empty() {
                break;
            }
            offset += part.len() as u64;
            out.extend_from_slice(&part);
        }
        self.generic_close(h).await?;
        Ok(out)
    }

    /// Whole-file upload through the generic API.
    pub async fn put_file(
        &self,
        target: &str,
        data: &[u8],
        strategy: AccessStrategy,
        route: Option<RouteChain>,
    ) -> GridResult<()> {
        let h = self
            .open_write_with(
                target,
                strategy,
                route,
                WriteOptions { size_hint: data.len() as u64, perms: Mode::new(0o644) },
            )
            .await?;
        let mut offset = 0u64;
        for chunk in data.chunks(256 << 10) {
            self.generic_write(h, offset, chunk).await?;
            offset += chunk.len() as u64;
        }
        self.generic_close(h).await
    }
}
