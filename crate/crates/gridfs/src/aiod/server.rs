//! The cache-and-forward I/O server.
//!
//! One server handles client read/write sessions over the framed
//! protocol, serving pages from its GUID-keyed store and pulling misses
//! from the next hop of the session route (another server, or the
//! terminal storage element).  Gate-keeper roles turn an open into a
//! redirect: by GUID presence (cache gate keeper) or by lowest load
//! (I/O gate keeper).  Every ticket is validated against the catalogue
//! before any byte moves.

use super::client::{self, AiodSession};
use super::gatekeeper::{pick_io_slave, LoadBoard, LoadReport};
use super::pages::{covering_pages, page_size_for, AccessKind, PageCounters, PageStore};
use super::ratelimit::TokenBucket;
use super::route::{AccessTicket, EncryptionKind};
use crate::catalogue::CatClient;
use crate::error::{GridError, GridResult};
use crate::net::{Conn, Net};
use crate::proto::{self, Request, Response};
use crate::storage::SeClient;
use crate::types::{Guid, OpenMode, Pfn, Principal};
use futures::lock::Mutex as AsyncMutex;
use futures::FutureExt;
use futures::StreamExt;
use serde::Deserialize;
use serde_json::json;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    IoGatekeeper,
    CacheGatekeeper,
    SlaveIo,
    SlaveCache,
}

#[derive(Debug, Clone)]
pub struct AiodConfig {
    pub listen: String,
    pub catalogue_addr: String,
    /// Service token used for credential lookups in the catalogue.
    pub auth: String,
    pub roles: BTreeSet<Role>,
    pub slaves: Vec<String>,
    pub cache_dir: PathBuf,
    pub cache_budget: u64,
    /// Per-connection byte rate; 0 is unlimited.
    pub rate_limit_bps: u64,
    pub locate_deadline_ms: u64,
    /// Gatekeeper to push monitoring reports to, if any.
    pub report_to: Option<String>,
    /// 0 disables the reporter task.
    pub report_every_ms: u64,
}

impl AiodConfig {
    pub fn plain(listen: &str, catalogue_addr: &str, auth: &str, cache_dir: PathBuf) -> AiodConfig {
        AiodConfig {
            listen: listen.to_string(),
            catalogue_addr: catalogue_addr.to_string(),
            auth: auth.to_string(),
            roles: BTreeSet::new(),
            slaves: Vec::new(),
            cache_dir,
            cache_budget: 256 << 20,
            rate_limit_bps: 0,
            locate_deadline_ms: 1000,
            report_to: None,
            report_every_ms: 0,
        }
    }
}

pub struct AiodServer {
    cfg: AiodConfig,
    store: PageStore,
    board: Mutex<LoadBoard>,
    open_sessions: AtomicU64,
    bytes_window: AtomicU64,
    next_session: AtomicU64,
}

enum Downstream {
    Aiod(AiodSession),
    Se { client: SeClient, pfn: Pfn },
}

impl Downstream {
    async fn fetch_range(&mut self, offset: u64, len: u64) -> GridResult<Vec<u8>> {
        match self {
            Downstream::Aiod(sess) => sess.read(offset, len).await,
            Downstream::Se { client, pfn } => client.fetch(pfn, offset, len).await,
        }
    }

    async fn forward_write(&mut self, offset: u64, data: &[u8]) -> GridResult<u64> {
        match self {
            Downstream::Aiod(sess) => sess.write(offset, data).await,
            Downstream::Se { client, pfn } => client.write(pfn, offset, data).await,
        }
    }

    async fn finish_write(&mut self, total: u64) -> GridResult<()> {
        match self {
            Downstream::Aiod(sess) => sess.close(Some(total)).await,
            Downstream::Se { client, pfn } => client.commit(pfn, total).await.map(|_| ()),
        }
    }

    async fn sync(&mut self) -> GridResult<()> {
        match self {
            Downstream::Aiod(sess) => sess.sync().await,
            Downstream::Se { client, pfn } => client.sync(pfn).await,
        }
    }
}

struct ReadSession {
    id: u64,
    guid: Guid,
    encryption: EncryptionKind,
    file_size: u64,
    page_size: u64,
    downstream: Arc<AsyncMutex<Downstream>>,
    bucket: TokenBucket,
}

struct WriteSession {
    id: u64,
    guid: Guid,
    page_size: u64,
    next_offset: u64,
    partial: Vec<u8>,
    partial_offset: u64,
    downstream: Downstream,
    bucket: TokenBucket,
}

enum Session {
    Idle,
    Read(ReadSession),
    Write(WriteSession),
}

#[derive(Deserialize)]
struct OpenArgs {
    ticket: AccessTicket,
    mode: OpenMode,
    access: AccessKind,
    #[serde(default)]
    page_size: Option<u64>,
}

#[derive(Deserialize)]
struct ReadArgs {
    session: u64,
    offset: u64,
    size: u64,
}

#[derive(Deserialize)]
struct WriteArgs {
    session: u64,
    offset: u64,
    len: u64,
}

#[derive(Deserialize)]
struct CloseArgs {
    session: u64,
    #[serde(default)]
    total_size: Option<u64>,
}

#[derive(Deserialize)]
struct SessionArgs {
    session: u64,
}

#[derive(Deserialize)]
struct PreloadArgs {
    session: u64,
    ranges: Vec<(u64, u64)>,
}

#[derive(Deserialize)]
struct LocateArgs {
    guid: Guid,
}

#[derive(Deserialize)]
struct ReportArgs {
    report: LoadReport,
}

impl AiodServer {
    pub fn new(cfg: AiodConfig) -> GridResult<Arc<AiodServer>> {
        let is_gatekeeper =
            cfg.roles.contains(&Role::IoGatekeeper) || cfg.roles.contains(&Role::CacheGatekeeper);
        if is_gatekeeper && cfg.slaves.is_empty() {
            return Err(GridError::bad_request("a gatekeeper role requires slaves"));
        }
        let store = PageStore::open(&cfg.cache_dir, cfg.cache_budget)?;
        Ok(Arc::new(AiodServer {
            cfg,
            store,
            board: Mutex::new(LoadBoard::new()),
            open_sessions: AtomicU64::new(0),
            bytes_window: AtomicU64::new(0),
            next_session: AtomicU64::new(1),
        }))
    }

    pub fn config(&self) -> &AiodConfig {
        &self.cfg
    }

    pub fn store(&self) -> &PageStore {
        &self.store
    }

    pub fn counters(&self) -> PageCounters {
        self.store.counters()
    }

    pub async fn serve(self: Arc<Self>, net: Arc<dyn Net>) {
        if self.cfg.report_to.is_some() && self.cfg.report_every_ms > 0 {
            let me = self.clone();
            let rep_net = net.clone();
            net.spawn(Box::pin(async move {
                me.report_loop(rep_net).await;
            }));
        }
        let Ok(mut listener) = net.listen(&self.cfg.listen).await else { return };
        loop {
            let Ok(conn) = listener.accept().await else { break };
            let svc = self.clone();
            let conn_net = net.clone();
            net.spawn(Box::pin(async move {
                svc.handle_conn(conn, conn_net).await;
            }));
        }
    }

    async fn report_loop(self: Arc<Self>, net: Arc<dyn Net>) {
        let to = self.cfg.report_to.clone().expect("reporter needs a target");
        loop {
            net.sleep_ms(self.cfg.report_every_ms).await;
            let bytes = self.bytes_window.swap(0, Ordering::SeqCst);
            let report = LoadReport {
                server: self.cfg.listen.clone(),
                open_connections: self.open_sessions.load(Ordering::SeqCst),
                bytes_per_second_recent: bytes * 1000 / self.cfg.report_every_ms,
                timestamp: net.now_ms(),
            };
            if let Ok(mut conn) = net.dial(&to).await {
                let req = Request::new("LOAD_REPORT", json!({ "report": report }), &self.cfg.auth);
                proto::call(conn.as_mut(), &req).await.ok();
            }
        }
    }

    async fn handle_conn(self: Arc<Self>, mut conn: Box<dyn Conn>, net: Arc<dyn Net>) {
        let mut session = Session::Idle;
        let mut counted = false;
        loop {
            let frame = match conn.recv().await {
                Ok(Some(f)) => f,
                _ => break,
            };
            let req = match proto::decode_request(&frame) {
                Ok(r) => r,
                Err(e) => {
                    if conn.send(&proto::encode(&Response::err(&e))).await.is_err() {
                        break;
                    }
                    continue;
                }
            };
            let mut payload = Vec::new();
            if req.op == "WRITE" {
                let declared = req.args.get("len").and_then(|v| v.as_u64()).unwrap_or(0);
                match proto::recv_data(conn.as_mut(), declared).await {
                    Ok(d) => payload = d,
                    Err(_) => break,
                }
            }
            let (resp, data) = self.dispatch(&req, &payload, &mut session, &net).await;
            if matches!(session, Session::Read(_) | Session::Write(_)) && !counted {
                counted = true;
                self.open_sessions.fetch_add(1, Ordering::SeqCst);
            }
            if conn.send(&proto::encode(&resp)).await.is_err() {
                break;
            }
            if let Some(data) = data {
                if conn.send(&data).await.is_err() {
                    break;
                }
            }
        }
        if counted {
            self.open_sessions.fetch_sub(1, Ordering::SeqCst);
        }
    }

    async fn dispatch(
        self: &Arc<Self>,
        req: &Request,
        payload: &[u8],
        session: &mut Session,
        net: &Arc<dyn Net>,
    ) -> (Response, Option<Vec<u8>>) {
        let result: GridResult<(Response, Option<Vec<u8>>)> = async {
            match req.op.as_str() {
                "ping" => Ok((Response::unit(), None)),
                "OPEN" => self.op_open(req, session, net).await.map(|r| (r, None)),
                "READ" => {
                    let a: ReadArgs = req.parse_args()?;
                    let Session::Read(sess) = session else {
                        return Err(GridError::bad_handle("no read session on this connection"));
                    };
                    if sess.id != a.session {
                        return Err(GridError::bad_handle("unknown session id"));
                    }
                    let data = self.serve_read(sess, a.offset, a.size, net).await?;
                    let data = sess.encryption.encode(data);
                    Ok((Response::ok(json!({"len": data.len() as u64})), Some(data)))
                }
                "WRITE" => {
                    let a: WriteArgs = req.parse_args()?;
                    let Session::Write(sess) = session else {
                        return Err(GridError::bad_handle("no write session on this connection"));
                    };
                    if sess.id != a.session {
                        return Err(GridError::bad_handle("unknown session id"));
                    }
                    if payload.len() as u64 != a.len {
                        return Err(GridError::bad_request("payload length mismatch"));
                    }
                    let accepted = self.serve_write(sess, a.offset, payload, net).await?;
                    Ok((Response::ok(json!({"accepted": accepted})), None))
                }
                "CLOSE" => {
                    let a: CloseArgs = req.parse_args()?;
                    let taken = std::mem::replace(session, Session::Idle);
                    match taken {
                        Session::Read(sess) if sess.id == a.session => Ok((Response::unit(), None)),
                        Session::Write(mut sess) if sess.id == a.session => {
                            let total = a.total_size.unwrap_or(sess.next_offset);
                            if total != sess.next_offset {
                                return Err(GridError::size_validation_failed(format!(
                                    "declared {total} bytes, streamed {}",
                                    sess.next_offset
                                )));
                            }
                            if !sess.partial.is_empty() {
                                self.store.put(&sess.guid, sess.partial_offset, &sess.partial)?;
                            }
                            sess.downstream.finish_write(total).await?;
                            Ok((Response::unit(), None))
                        }
                        other => {
                            *session = other;
                            Err(GridError::bad_handle("unknown session id"))
                        }
                    }
                }
                "SYNC" => {
                    let a: SessionArgs = req.parse_args()?;
                    let Session::Write(sess) = session else {
                        return Err(GridError::bad_handle("sync needs a write session"));
                    };
                    if sess.id != a.session {
                        return Err(GridError::bad_handle("unknown session id"));
                    }
                    sess.downstream.sync().await?;
                    Ok((Response::unit(), None))
                }
                "PRELOAD" => {
                    let a: PreloadArgs = req.parse_args()?;
                    let Session::Read(sess) = session else {
                        return Err(GridError::bad_handle("preload needs a read session"));
                    };
                    if sess.id != a.session {
                        return Err(GridError::bad_handle("unknown session id"));
                    }
                    let scheduled = self.schedule_preload(sess, &a.ranges, net);
                    Ok((Response::ok(json!({"scheduled": scheduled})), None))
                }
                "LOCATE_GUID" => {
                    let a: LocateArgs = req.parse_args()?;
                    let addr = self.locate_guid(&a.guid, net).await;
                    Ok((Response::ok(json!({"addr": addr})), None))
                }
                "LOAD_REPORT" => {
                    let a: ReportArgs = req.parse_args()?;
                    self.board.lock().unwrap().ingest(a.report, net.now_ms());
                    Ok((Response::unit(), None))
                }
                "STATS" => {
                    let c = self.counters();
                    Ok((
                        Response::ok(json!({
                            "hits": c.hits,
                            "misses": c.misses,
                            "next_hop_fetches": c.next_hop_fetches,
                            "cached_bytes": c.cached_bytes,
                            "open_connections": self.open_sessions.load(Ordering::SeqCst),
                        })),
                        None,
                    ))
                }
                other => Err(GridError::bad_request(format!("unknown op {other}"))),
            }
        }
        .await;
        match result {
            Ok(pair) => pair,
            Err(e) => (Response::err(&e), None),
        }
    }

    /// Ticket validation, gatekeeper redirection, session setup.
    async fn op_open(
        self: &Arc<Self>,
        req: &Request,
        session: &mut Session,
        net: &Arc<dyn Net>,
    ) -> GridResult<Response> {
        let a: OpenArgs = req.parse_args()?;
        let ticket = &a.ticket;
        let who = Principal::from_token(&req.auth)?;
        if who.user != ticket.grid_user {
            return Err(GridError::ticket_invalid("token user does not match ticket user"));
        }
        // Credential virtual file: readable by the service, content must
        // equal the presented token.
        let service_cat = CatClient::new(net.clone(), &self.cfg.catalogue_addr, &self.cfg.auth);
        let cred = service_cat
            .read_inline(&ticket.credential_ref)
            .await
            .map_err(|e| GridError::ticket_invalid(format!("credential file: {e}")))?;
        if cred != req.auth {
            return Err(GridError::ticket_invalid("credential does not match token"));
        }
        // Catalogue consistency and the user's own permissions.
        let user_cat = CatClient::new(net.clone(), &self.cfg.catalogue_addr, &req.auth);
        let file_size = match a.mode {
            OpenMode::Read => {
                let resolved = user_cat.resolve(&ticket.lfn).await?;
                if resolved.guid != ticket.guid {
                    return Err(GridError::ticket_invalid("guid does not match catalogue entry"));
                }
                if !resolved.locations.iter().any(|l| l.pfn == ticket.pfn) {
                    return Err(GridError::ticket_invalid("pfn is not a location of this lfn"));
                }
                resolved.size
            }
            OpenMode::WriteOnce => {
                user_cat.write_check(&ticket.lfn).await?;
                0
            }
        };

        // Gatekeeper roles answer with a redirect instead of a session.
        if let Some(addr) = self.gatekeeper_target(&a, net).await? {
            return Ok(Response::redirect(&addr));
        }
        if !self.serves_locally() {
            return Err(GridError::no_fresh_reports(
                "gatekeeper has no usable slaves and does not serve data",
            ));
        }

        let wanted = a.page_size.unwrap_or_else(|| page_size_for(file_size, a.access));
        let page_size = self.store.pin_page_size(&ticket.guid, wanted);
        let id = self.next_session.fetch_add(1, Ordering::SeqCst);
        let bucket = TokenBucket::with_rate(self.cfg.rate_limit_bps);
        let downstream = self.open_downstream(&a, page_size, file_size, &req.auth, net).await?;
        *session = match a.mode {
            OpenMode::Read => Session::Read(ReadSession {
                id,
                guid: ticket.guid,
                encryption: ticket.encryption,
                file_size,
                page_size,
                downstream: Arc::new(AsyncMutex::new(downstream)),
                bucket,
            }),
            OpenMode::WriteOnce => Session::Write(WriteSession {
                id,
                guid: ticket.guid,
                page_size,
                next_offset: 0,
                partial: Vec::new(),
                partial_offset: 0,
                downstream,
                bucket,
            }),
        };
        Ok(Response::ok(json!({
            "session": id,
            "page_size": page_size,
            "file_size": file_size,
        })))
    }

    fn serves_locally(&self) -> bool {
        self.cfg.roles.is_empty()
            || self.cfg.roles.contains(&Role::SlaveIo)
            || self.cfg.roles.contains(&Role::SlaveCache)
    }

    /// Where a gatekeeper would send this open, if anywhere.
    async fn gatekeeper_target(
        self: &Arc<Self>,
        a: &OpenArgs,
        net: &Arc<dyn Net>,
    ) -> GridResult<Option<String>> {
        if a.mode == OpenMode::Read && self.cfg.roles.contains(&Role::CacheGatekeeper) {
            if let Some(addr) = self.locate_on_slaves(&a.ticket.guid, net).await {
                return Ok(Some(addr));
            }
        }
        if self.cfg.roles.contains(&Role::IoGatekeeper) {
            let board = self.board.lock().unwrap();
            let fresh = board.fresh(net.now_ms());
            match pick_io_slave(&fresh, self.cfg.rate_limit_bps) {
                Ok(addr) => return Ok(Some(addr)),
                Err(e) => {
                    if !self.serves_locally() {
                        return Err(e);
                    }
                }
            }
        }
        Ok(None)
    }

    async fn open_downstream(
        &self,
        a: &OpenArgs,
        page_size: u64,
        file_size: u64,
        auth: &str,
        net: &Arc<dyn Net>,
    ) -> GridResult<Downstream> {
        match a.ticket.route.rest() {
            Some(rest) => {
                let mut ticket = a.ticket.clone();
                ticket.route = rest;
                let sess = client::open_session(
                    net,
                    &ticket,
                    a.mode,
                    a.access,
                    Some(page_size),
                    auth,
                )
                .await?;
                let _ = file_size;
                Ok(Downstream::Aiod(sess))
            }
            None => {
                let endpoint = a.ticket.pfn.endpoint();
                let client = SeClient::connect(net, &endpoint, auth).await?;
                Ok(Downstream::Se { client, pfn: a.ticket.pfn.clone() })
            }
        }
    }

    async fn serve_read(
        self: &Arc<Self>,
        sess: &mut ReadSession,
        offset: u64,
        size: u64,
        net: &Arc<dyn Net>,
    ) -> GridResult<Vec<u8>> {
        if offset > sess.file_size {
            return Err(GridError::range_error(format!(
                "offset {offset} beyond file size {}",
                sess.file_size
            )));
        }
        let len = size.min(sess.file_size - offset);
        let mut buf = Vec::with_capacity(len as usize);
        for (page_off, page_len) in covering_pages(offset, len, sess.file_size, sess.page_size) {
            let page = fetch_page(
                &self.store,
                &sess.downstream,
                sess.encryption,
                sess.guid,
                page_off,
                page_len,
            )
            .await?;
            if page.len() as u64 != page_len {
                return Err(GridError::transport_error(format!(
                    "next hop returned {} bytes for a {page_len}-byte page",
                    page.len()
                )));
            }
            let start = offset.max(page_off) - page_off;
            let end = (offset + len).min(page_off + page_len) - page_off;
            buf.extend_from_slice(&page[start as usize..end as usize]);
        }
        self.bytes_window.fetch_add(len, Ordering::SeqCst);
        let delay = sess.bucket.delay_for(net.now_ms(), len);
        if delay > 0 {
            net.sleep_ms(delay).await;
        }
        Ok(buf)
    }

    async fn serve_write(
        self: &Arc<Self>,
        sess: &mut WriteSession,
        offset: u64,
        data: &[u8],
        net: &Arc<dyn Net>,
    ) -> GridResult<u64> {
        if offset != sess.next_offset {
            return Err(GridError::non_sequential_write(format!(
                "write at {offset}, stream is at {}",
                sess.next_offset
            )));
        }
        let delay = sess.bucket.delay_for(net.now_ms(), data.len() as u64);
        if delay > 0 {
            net.sleep_ms(delay).await;
        }
        // Retain full pages locally (warm replica material) and forward
        // the raw stream downstream.
        sess.partial.extend_from_slice(data);
        while sess.partial.len() as u64 >= sess.page_size {
            let page: Vec<u8> = sess.partial.drain(..sess.page_size as usize).collect();
            self.store.put(&sess.guid, sess.partial_offset, &page)?;
            sess.partial_offset += sess.page_size;
        }
        sess.downstream.forward_write(offset, data).await?;
        sess.next_offset += data.len() as u64;
        self.bytes_window.fetch_add(data.len() as u64, Ordering::SeqCst);
        Ok(data.len() as u64)
    }

    fn schedule_preload(self: &Arc<Self>, sess: &ReadSession, ranges: &[(u64, u64)], net: &Arc<dyn Net>) -> u64 {
        let mut scheduled = 0;
        let mut seen = BTreeSet::new();
        for (offset, len) in ranges {
            for (page_off, page_len) in covering_pages(*offset, *len, sess.file_size, sess.page_size) {
                if !seen.insert(page_off) {
                    continue;
                }
                scheduled += 1;
                let me = self.clone();
                let downstream = sess.downstream.clone();
                let guid = sess.guid;
                let enc = sess.encryption;
                net.spawn(Box::pin(async move {
                    // Per-range failures are non-fatal to the session.
                    let _ = fetch_page(&me.store, &downstream, enc, guid, page_off, page_len).await;
                }));
            }
        }
        scheduled
    }

    /// Ask every slave for the GUID concurrently; first positive answer
    /// wins, bounded by the locate deadline.
    async fn locate_on_slaves(self: &Arc<Self>, guid: &Guid, net: &Arc<dyn Net>) -> Option<String> {
        let (tx, mut rx) = futures::channel::mpsc::unbounded::<Option<String>>();
        for slave in self.cfg.slaves.clone() {
            let q_net = net.clone();
            let q_tx = tx.clone();
            let q_guid = *guid;
            let auth = self.cfg.auth.clone();
            net.spawn(Box::pin(async move {
                let found = client::locate_guid(&q_net, &slave, &q_guid, &auth).await.ok().flatten();
                q_tx.unbounded_send(found).ok();
            }));
        }
        drop(tx);
        let mut remaining = self.cfg.slaves.len();
        let mut deadline = net.sleep_ms(self.cfg.locate_deadline_ms).fuse();
        loop {
            futures::select! {
                _ = deadline => return None,
                r = rx.next() => match r {
                    Some(Some(addr)) => return Some(addr),
                    Some(None) => {
                        remaining -= 1;
                        if remaining == 0 {
                            return None;
                        }
                    }
                    None => return None,
                },
            }
        }
    }

    async fn locate_guid(self: &Arc<Self>, guid: &Guid, net: &Arc<dyn Net>) -> Option<String> {
        if self.cfg.roles.contains(&Role::CacheGatekeeper) {
            self.locate_on_slaves(guid, net).await
        } else if self.store.contains_guid(guid) {
            Some(self.cfg.listen.clone())
        } else {
            None
        }
    }
}

/// Local page or a coalesced next-hop fetch.
async fn fetch_page(
    store: &PageStore,
    downstream: &Arc<AsyncMutex<Downstream>>,
    encryption: EncryptionKind,
    guid: Guid,
    page_off: u64,
    page_len: u64,
) -> GridResult<Vec<u8>> {
    store
        .get_or_fetch(&guid, page_off, async {
            store.note_next_hop_fetch();
            let mut d = downstream.lock().await;
            let bytes = d.fetch_range(page_off, page_len).await?;
            Ok(encryption.decode(bytes))
        })
        .await
}
