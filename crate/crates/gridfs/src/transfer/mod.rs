//! The asynchronous transfer broker: a persistent FIFO queue of
//! replicate/move requests between storage elements, executed in
//! deterministic pull-based steps.  A replica row is added only after
//! the destination SE commit succeeds with a matching size; failed
//! requests are retried up to the configured limit.

use crate::catalogue::journal::{Journal, JournalRecord};
use crate::catalogue::{CatalogueService, OpExtension};
use crate::error::{GridError, GridResult};
use crate::net::Net;
use crate::proto::{Request, Response};
use crate::storage::SeClient;
use crate::types::{LfnPath, Pfn, Principal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferKind {
    Replicate,
    Move,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferRequest {
    pub id: u64,
    pub lfn: LfnPath,
    /// Source SE name or `any` (first reachable replica in resolve order).
    pub src_se: String,
    pub dst_se: String,
    pub kind: TransferKind,
    pub state: TransferState,
    pub attempts: u32,
    #[serde(default)]
    pub last_error: Option<String>,
    /// Principal that enqueued the request.
    pub owner: String,
}

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub max_concurrent: usize,
    pub retry_limit: u32,
    pub queue_journal_path: Option<PathBuf>,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig { max_concurrent: 2, retry_limit: 3, queue_journal_path: None }
    }
}

#[derive(Default, Serialize, Deserialize)]
struct QueueState {
    next_id: u64,
    requests: BTreeMap<u64, TransferRequest>,
}

/// Queue store plus executor.  Hosted inside the catalogue service
/// process as an [`OpExtension`] handling the `transfer_*` ops.
pub struct TransferBroker {
    cfg: BrokerConfig,
    queue: Mutex<QueueState>,
    journal: Mutex<Option<Journal>>,
}

#[derive(Deserialize)]
struct EnqueueArgs {
    lfn: LfnPath,
    dst_se: String,
    kind: TransferKind,
}

#[derive(Deserialize)]
struct QueryArgs {
    id: u64,
}

impl TransferBroker {
    pub fn new(cfg: BrokerConfig) -> GridResult<Arc<TransferBroker>> {
        let mut state = QueueState::default();
        let journal = match &cfg.queue_journal_path {
            Some(path) => {
                let (journal, records) = Journal::open(path, 0)?;
                for rec in records {
                    apply_record(&mut state, &rec)?;
                }
                Some(journal)
            }
            None => None,
        };
        Ok(Arc::new(TransferBroker { cfg, queue: Mutex::new(state), journal: Mutex::new(journal) }))
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.cfg
    }

    fn journal_event(&self, op: &str, args: serde_json::Value) -> GridResult<()> {
        let mut guard = self.journal.lock().unwrap();
        if let Some(j) = guard.as_mut() {
            j.append(op, args, "broker")?;
        }
        Ok(())
    }

    /// Queue a replication or move after validating it against the
    /// catalogue as the requesting principal.
    pub fn enqueue(
        &self,
        cat: &CatalogueService,
        auth: &str,
        lfn: &LfnPath,
        dst_se: &str,
        kind: TransferKind,
    ) -> GridResult<u64> {
        let who = Principal::from_token(auth)?;
        let dst = cat.read(|c| c.lookup_se(dst_se))?;
        let resolved = cat.read(|c| c.resolve(&who, lfn))?;
        if kind == TransferKind::Replicate
            && resolved.locations.iter().any(|l| l.se.as_deref() == Some(dst_se))
        {
            return Err(GridError::already_replicated(format!(
                "{lfn} already has a replica on {dst_se}"
            )));
        }
        let _ = dst;
        let mut q = self.queue.lock().unwrap();
        let id = q.next_id;
        q.next_id += 1;
        let req = TransferRequest {
            id,
            lfn: lfn.clone(),
            src_se: "any".into(),
            dst_se: dst_se.to_string(),
            kind,
            state: TransferState::Queued,
            attempts: 0,
            last_error: None,
            owner: who.user.clone(),
        };
        self.journal_event("enqueue", serde_json::to_value(&req).expect("request serializes"))?;
        q.requests.insert(id, req);
        Ok(id)
    }

    pub fn query(&self, id: u64) -> GridResult<TransferRequest> {
        self.queue
            .lock()
            .unwrap()
            .requests
            .get(&id)
            .cloned()
            .ok_or_else(|| GridError::not_found(format!("no transfer request {id}")))
    }

    pub fn all_requests(&self) -> Vec<TransferRequest> {
        self.queue.lock().unwrap().requests.values().cloned().collect()
    }

    fn set_state(&self, id: u64, state: TransferState, error: Option<String>) {
        let mut q = self.queue.lock().unwrap();
        if let Some(req) = q.requests.get_mut(&id) {
            req.state = state;
            if state == TransferState::Running {
                req.attempts += 1;
            }
            if error.is_some() {
                req.last_error = error.clone();
            }
        }
        drop(q);
        self.journal_event(
            "state",
            json!({"id": id, "state": state, "error": error }),
        )
        .ok();
    }

    /// One broker step: requeue retriable failures, then run up to
    /// `max_concurrent` queued requests in FIFO order.  Returns the ids
    /// that were executed (successfully or not).
    pub async fn step(
        &self,
        cat: &CatalogueService,
        net: &Arc<dyn Net>,
    ) -> Vec<u64> {
        let batch: Vec<TransferRequest> = {
            let mut q = self.queue.lock().unwrap();
            // failed -> queued for another attempt, within the limit
            let retriable: Vec<u64> = q
                .requests
                .values()
                .filter(|r| r.state == TransferState::Failed && r.attempts < self.cfg.retry_limit)
                .map(|r| r.id)
                .collect();
            for id in retriable {
                q.requests.get_mut(&id).unwrap().state = TransferState::Queued;
            }
            q.requests
                .values()
                .filter(|r| r.state == TransferState::Queued)
                .take(self.cfg.max_concurrent)
                .cloned()
                .collect()
        };
        let mut executed = Vec::new();
        let mut jobs = Vec::new();
        for req in batch {
            executed.push(req.id);
            self.set_state(req.id, TransferState::Running, None);
            jobs.push(self.run_one(req, cat, net));
        }
        // Transfers within one step run concurrently, each owning its
        // request exclusively.
        let results = futures::future::join_all(jobs).await;
        for (id, result) in executed.iter().zip(results) {
            match result {
                Ok(()) => self.set_state(*id, TransferState::Done, None),
                Err(e) => self.set_state(*id, TransferState::Failed, Some(e.to_string())),
            }
        }
        executed
    }

    /// Run the broker until nothing is queued or retriable.
    pub async fn drain(&self, cat: &CatalogueService, net: &Arc<dyn Net>) {
        loop {
            let executed = self.step(cat, net).await;
            if executed.is_empty() {
                break;
            }
        }
    }

    async fn run_one(
        &self,
        req: TransferRequest,
        cat: &CatalogueService,
        net: &Arc<dyn Net>,
    ) -> GridResult<()> {
        let broker_who = cat.superuser_principal();
        let broker_auth = broker_who.to_token();
        let resolved = cat.read(|c| c.resolve(&broker_who, &req.lfn))?;
        let dst = cat.read(|c| c.lookup_se(&req.dst_se))?;

        // Pick the first reachable source replica in resolve order.
        let mut source: Option<(SeClient, Pfn)> = None;
        for loc in &resolved.locations {
            if loc.se.as_deref() == Some(req.dst_se.as_str()) {
                continue;
            }
            match SeClient::connect(net, &loc.pfn.endpoint(), &broker_auth).await {
                Ok(client) => {
                    source = Some((client, loc.pfn.clone()));
                    break;
                }
                Err(_) => continue,
            }
        }
        let (mut src_client, src_pfn) =
            source.ok_or_else(|| GridError::unreachable(format!("no reachable replica of {}", req.lfn)))?;

        // Idempotent completion: a retry after a lost response may find
        // the replica already registered.
        let already = resolved.locations.iter().any(|l| l.se.as_deref() == Some(req.dst_se.as_str()));
        if !already {
            let mut dst_client = SeClient::connect(net, &dst.addr, &broker_auth).await?;
            let (dst_pfn, _vol) = dst_client.allocate(resolved.size, resolved.guid).await?;
            const CHUNK: u64 = 256 << 10;
            let mut offset = 0u64;
            while offset < resolved.size {
                let n = CHUNK.min(resolved.size - offset);
                let bytes = src_client.fetch(&src_pfn, offset, n).await?;
                if bytes.is_empty() {
                    return Err(GridError::transport_error("short read from source replica"));
                }
                dst_client.write(&dst_pfn, offset, &bytes).await?;
                offset += bytes.len() as u64;
            }
            // Durability before registration: commit first, then the
            // catalogue row.
            dst_client.commit(&dst_pfn, resolved.size).await?;
            match cat.mutate(
                "add_replica",
                json!({"lfn": req.lfn, "pfn": dst_pfn, "observed_size": resolved.size}),
                &broker_auth,
            ) {
                Ok(_) => {}
                Err(e) if e.code == crate::ErrorCode::DuplicateReplica => {}
                Err(e) => return Err(e),
            }
        }

        if req.kind == TransferKind::Move {
            // Drop the source location from the catalogue, then erase
            // the physical copy.
            match cat.mutate(
                "drop_replica",
                json!({"lfn": req.lfn, "pfn": src_pfn}),
                &broker_auth,
            ) {
                Ok(_) => {}
                Err(e) if e.code == crate::ErrorCode::NotFound => {}
                Err(e) => return Err(e),
            }
            src_client.rm_pfn(&src_pfn).await.ok();
        }
        Ok(())
    }
}

fn apply_record(state: &mut QueueState, rec: &JournalRecord) -> GridResult<()> {
    match rec.op.as_str() {
        "enqueue" => {
            let req: TransferRequest = serde_json::from_value(rec.args.clone())
                .map_err(|e| GridError::backend_failure(format!("corrupt queue journal: {e}")))?;
            state.next_id = state.next_id.max(req.id + 1);
            state.requests.insert(req.id, req);
        }
        "state" => {
            #[derive(Deserialize)]
            struct StateRec {
                id: u64,
                state: TransferState,
                #[serde(default)]
                error: Option<String>,
            }
            let s: StateRec = serde_json::from_value(rec.args.clone())
                .map_err(|e| GridError::backend_failure(format!("corrupt queue journal: {e}")))?;
            if let Some(req) = state.requests.get_mut(&s.id) {
                if s.state == TransferState::Running {
                    req.attempts += 1;
                }
                req.state = s.state;
                req.last_error = s.error;
            }
        }
        _ => {}
    }
    Ok(())
}

#[async_trait::async_trait]
impl OpExtension for TransferBroker {
    async fn handle(
        &self,
        req: &Request,
        cat: &CatalogueService,
        net: &Arc<dyn Net>,
    ) -> Option<Response> {
        let resp = match req.op.as_str() {
            "transfer_enqueue" => (|| {
                let a: EnqueueArgs = req.parse_args()?;
                let id = self.enqueue(cat, &req.auth, &a.lfn, &a.dst_se, a.kind)?;
                Ok(Response::ok(json!({"id": id})))
            })(),
            "transfer_query" => (|| {
                let a: QueryArgs = req.parse_args()?;
                Ok(Response::ok(self.query(a.id)?))
            })(),
            "transfer_step" => {
                let executed = self.step(cat, net).await;
                Ok(Response::ok(json!({"executed": executed})))
            }
            _ => return None,
        };
        Some(resp.unwrap_or_else(|e: GridError| Response::err(&e)))
    }
}
