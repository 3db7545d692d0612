//! Catalogue service: wire dispatch over the framed protocol, mutation
//! journaling with periodic snapshots, and crash recovery by replay.
//!
//! Mutations run under a single writer lock; reads share a read lock.
//! Every applied mutation is appended to the journal before the response
//! goes out, so replaying snapshot + journal reproduces the state.

use super::journal::{load_snapshot, save_snapshot, snapshot_path, Journal};
use super::store::{Catalogue, ListedEntry, Resolved, SeInfo};
use crate::error::{GridError, GridResult};
use crate::net::{Conn, Net};
use crate::proto::{self, Request, Response};
use crate::types::{Guid, LfnPath, Mode, Pfn, Principal};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use serde_json::Value;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

#[derive(Debug, Clone)]
pub struct CatalogueConfig {
    pub listen: String,
    pub superuser: String,
    /// No journal path means an ephemeral, in-memory catalogue.
    pub journal_path: Option<PathBuf>,
    pub snapshot_every_n_ops: u64,
    /// GUID generator seed; None draws from the OS.
    pub seed: Option<u64>,
}

impl Default for CatalogueConfig {
    fn default() -> Self {
        CatalogueConfig {
            listen: "catalogue:7000".into(),
            superuser: "admin".into(),
            journal_path: None,
            snapshot_every_n_ops: 1000,
            seed: None,
        }
    }
}

/// Extension hook for operations hosted in the same service process but
/// implemented elsewhere (the transfer broker).
#[async_trait::async_trait]
pub trait OpExtension: Send + Sync {
    /// Return None when the op is not handled by this extension.
    async fn handle(
        &self,
        req: &Request,
        cat: &CatalogueService,
        net: &Arc<dyn Net>,
    ) -> Option<Response>;
}

pub struct CatalogueService {
    cfg: CatalogueConfig,
    store: RwLock<Catalogue>,
    journal: Mutex<Option<Journal>>,
    rng: Mutex<StdRng>,
}

#[derive(Deserialize)]
struct MkdirArgs {
    path: LfnPath,
    perms: Mode,
}

#[derive(Deserialize)]
struct RegisterArgs {
    lfn: LfnPath,
    pfn: Pfn,
    size: u64,
    guid: Guid,
    perms: Mode,
}

#[derive(Deserialize)]
struct AddReplicaArgs {
    lfn: LfnPath,
    pfn: Pfn,
    observed_size: u64,
}

#[derive(Deserialize)]
struct LfnPfnArgs {
    lfn: LfnPath,
    pfn: Pfn,
}

#[derive(Deserialize)]
struct LfnArgs {
    lfn: LfnPath,
}

#[derive(Deserialize)]
struct PathArgs {
    path: LfnPath,
}

#[derive(Deserialize)]
struct MoveArgs {
    from: LfnPath,
    to: LfnPath,
}

#[derive(Deserialize)]
struct SetAccessArgs {
    lfn: LfnPath,
    #[serde(default)]
    owner: Option<String>,
    #[serde(default)]
    group: Option<String>,
    #[serde(default)]
    perms: Option<Mode>,
}

#[derive(Deserialize)]
struct SetTagArgs {
    lfn: LfnPath,
    name: String,
    value: String,
}

#[derive(Deserialize)]
struct PutInlineArgs {
    lfn: LfnPath,
    content: String,
    perms: Mode,
}

#[derive(Deserialize)]
struct RegisterSeArgs {
    name: String,
    addr: String,
    site: String,
}

#[derive(Deserialize)]
struct NameArgs {
    name: String,
}

fn parse<T: serde::de::DeserializeOwned>(args: &Value) -> GridResult<T> {
    serde_json::from_value(args.clone()).map_err(|e| GridError::bad_request(format!("bad args: {e}")))
}

/// Apply one mutating operation to the store.  This is the single entry
/// point for both live requests and journal replay.
fn apply_mutation(cat: &mut Catalogue, op: &str, args: &Value, who: &Principal) -> GridResult<Value> {
    match op {
        "mkdir" => {
            let a: MkdirArgs = parse(args)?;
            cat.mkdir(who, &a.path, a.perms)?;
            Ok(Value::Null)
        }
        "register_file" => {
            let a: RegisterArgs = parse(args)?;
            cat.register_file(who, &a.lfn, &a.pfn, a.size, a.guid, a.perms)?;
            Ok(Value::Null)
        }
        "add_replica" => {
            let a: AddReplicaArgs = parse(args)?;
            cat.add_replica(who, &a.lfn, &a.pfn, a.observed_size)?;
            Ok(Value::Null)
        }
        "drop_replica" => {
            let a: LfnPfnArgs = parse(args)?;
            cat.drop_replica(who, &a.lfn, &a.pfn)?;
            Ok(Value::Null)
        }
        "remove" => {
            let a: LfnArgs = parse(args)?;
            let pfns = cat.remove(who, &a.lfn)?;
            Ok(serde_json::json!({ "pfns": pfns }))
        }
        "move" => {
            let a: MoveArgs = parse(args)?;
            cat.rename(who, &a.from, &a.to)?;
            Ok(Value::Null)
        }
        "set_access" => {
            let a: SetAccessArgs = parse(args)?;
            cat.set_access(who, &a.lfn, a.owner.as_deref(), a.group.as_deref(), a.perms)?;
            Ok(Value::Null)
        }
        "set_tag" => {
            let a: SetTagArgs = parse(args)?;
            cat.set_tag(who, &a.lfn, &a.name, &a.value)?;
            Ok(Value::Null)
        }
        "put_inline" => {
            let a: PutInlineArgs = parse(args)?;
            cat.put_inline(who, &a.lfn, &a.content, a.perms)?;
            Ok(Value::Null)
        }
        "register_se" => {
            let a: RegisterSeArgs = parse(args)?;
            cat.register_se(who, &a.name, &a.addr, &a.site)?;
            Ok(Value::Null)
        }
        other => Err(GridError::bad_request(format!("unknown mutation {other}"))),
    }
}

const MUTATIONS: &[&str] = &[
    "mkdir",
    "register_file",
    "add_replica",
    "drop_replica",
    "remove",
    "move",
    "set_access",
    "set_tag",
    "put_inline",
    "register_se",
];

impl CatalogueService {
    pub fn new(cfg: CatalogueConfig) -> GridResult<Arc<CatalogueService>> {
        let mut cat = Catalogue::new(&cfg.superuser);
        let journal = match &cfg.journal_path {
            Some(path) => {
                let first_seq = match load_snapshot::<Catalogue>(&snapshot_path(path))? {
                    Some((seq, state)) => {
                        cat = state;
                        seq + 1
                    }
                    None => 0,
                };
                let (journal, records) = Journal::open(path, first_seq)?;
                for rec in records {
                    let who = Principal::from_token(&rec.auth)?;
                    apply_mutation(&mut cat, &rec.op, &rec.args, &who).map_err(|e| {
                        GridError::backend_failure(format!(
                            "journal replay failed at seq {}: {e}",
                            rec.seq
                        ))
                    })?;
                }
                Some(journal)
            }
            None => None,
        };
        let rng = match cfg.seed {
            Some(seed) => StdRng::seed_from_u64(seed),
            None => StdRng::from_entropy(),
        };
        Ok(Arc::new(CatalogueService {
            cfg,
            store: RwLock::new(cat),
            journal: Mutex::new(journal),
            rng: Mutex::new(rng),
        }))
    }

    pub fn config(&self) -> &CatalogueConfig {
        &self.cfg
    }

    pub fn superuser_principal(&self) -> Principal {
        Principal::new(&self.cfg.superuser, &[])
    }

    /// Read-only access to the store.
    pub fn read<R>(&self, f: impl FnOnce(&Catalogue) -> R) -> R {
        f(&self.store.read().unwrap())
    }

    /// Apply and journal one mutation.
    pub fn mutate(&self, op: &str, args: Value, auth: &str) -> GridResult<Value> {
        let who = Principal::from_token(auth)?;
        let mut store = self.store.write().unwrap();
        let out = apply_mutation(&mut store, op, &args, &who)?;
        let mut guard = self.journal.lock().unwrap();
        if let Some(j) = guard.as_mut() {
            let seq = j.append(op, args, auth)?;
            if j.appended_since_reset() >= self.cfg.snapshot_every_n_ops {
                let path = self.cfg.journal_path.as_ref().expect("journal implies path");
                save_snapshot(&snapshot_path(path), seq, &*store)?;
                j.reset()?;
            }
        }
        Ok(out)
    }

    /// Mint a fresh GUID after checking that a write-once open of `lfn`
    /// would be permitted.
    pub fn prepare_write(&self, auth: &str, lfn: &LfnPath) -> GridResult<Guid> {
        let who = Principal::from_token(auth)?;
        let store = self.store.read().unwrap();
        store.write_check(&who, lfn)?;
        let mut rng = self.rng.lock().unwrap();
        loop {
            let guid = Guid::from_u128(rng.gen());
            if !store.guid_in_use(&guid) {
                return Ok(guid);
            }
        }
    }

    /// Dispatch one request; None means the op is not a catalogue op.
    pub fn handle(&self, req: &Request) -> Option<Response> {
        if MUTATIONS.contains(&req.op.as_str()) {
            return Some(match self.mutate(&req.op, req.args.clone(), &req.auth) {
                Ok(Value::Null) => Response::unit(),
                Ok(v) => Response::ok(v),
                Err(e) => Response::err(&e),
            });
        }
        let resp = match req.op.as_str() {
            "ping" => Ok(Response::unit()),
            "resolve" => self.with_principal(req, |store, who| {
                let a: LfnArgs = parse(&req.args)?;
                store.resolve(&who, &a.lfn).map(|r: Resolved| Response::ok(r))
            }),
            "read_metadata" => self.with_principal(req, |store, who| {
                let a: LfnArgs = parse(&req.args)?;
                store
                    .read_metadata(&who, &a.lfn)
                    .map(|text| Response::ok(serde_json::json!({ "text": text })))
            }),
            "read_inline" => self.with_principal(req, |store, who| {
                let a: LfnArgs = parse(&req.args)?;
                store
                    .read_inline(&who, &a.lfn)
                    .map(|content| Response::ok(serde_json::json!({ "content": content })))
            }),
            "list_dir" => self.with_principal(req, |store, who| {
                let a: PathArgs = parse(&req.args)?;
                store
                    .list_dir(&who, &a.path)
                    .map(|entries: Vec<ListedEntry>| Response::ok(serde_json::json!({ "entries": entries })))
            }),
            "stat" => self.with_principal(req, |store, who| {
                let a: PathArgs = parse(&req.args)?;
                store.stat(&who, &a.path).map(Response::ok)
            }),
            "write_check" => self.with_principal(req, |store, who| {
                let a: LfnArgs = parse(&req.args)?;
                store.write_check(&who, &a.lfn).map(|_| Response::unit())
            }),
            "prepare_write" => (|| {
                let a: LfnArgs = parse(&req.args)?;
                let guid = self.prepare_write(&req.auth, &a.lfn)?;
                Ok(Response::ok(serde_json::json!({ "guid": guid })))
            })(),
            "lookup_se" => (|| {
                let a: NameArgs = parse(&req.args)?;
                let se: SeInfo = self.read(|c| c.lookup_se(&a.name))?;
                Ok(Response::ok(se))
            })(),
            "list_se" => Ok(Response::ok(
                serde_json::json!({ "ses": self.read(|c| c.list_se()) }),
            )),
            _ => return None,
        };
        Some(resp.unwrap_or_else(|e| Response::err(&e)))
    }

    fn with_principal(
        &self,
        req: &Request,
        f: impl FnOnce(&Catalogue, Principal) -> GridResult<Response>,
    ) -> GridResult<Response> {
        let who = Principal::from_token(&req.auth)?;
        let store = self.store.read().unwrap();
        f(&store, who)
    }

    /// Accept-loop entry point; runs until the listener fails.
    pub async fn serve(self: Arc<Self>, net: Arc<dyn Net>, ext: Option<Arc<dyn OpExtension>>) {
        let Ok(mut listener) = net.listen(&self.cfg.listen).await else { return };
        loop {
            let Ok(conn) = listener.accept().await else { break };
            let svc = self.clone();
            let conn_net = net.clone();
            let conn_ext = ext.clone();
            net.spawn(Box::pin(async move {
                svc.handle_conn(conn, conn_net, conn_ext).await;
            }));
        }
    }

    async fn handle_conn(
        &self,
        mut conn: Box<dyn Conn>,
        net: Arc<dyn Net>,
        ext: Option<Arc<dyn OpExtension>>,
    ) {
        loop {
            let frame = match conn.recv().await {
                Ok(Some(f)) => f,
                _ => break,
            };
            let resp = match proto::decode_request(&frame) {
                Ok(req) => match self.handle(&req) {
                    Some(resp) => resp,
                    None => match &ext {
                        Some(e) => match e.handle(&req, self, &net).await {
                            Some(resp) => resp,
                            None => Response::err(&GridError::bad_request(format!(
                                "unknown op {}",
                                req.op
                            ))),
                        },
                        None => Response::err(&GridError::bad_request(format!(
                            "unknown op {}",
                            req.op
                        ))),
                    },
                },
                Err(e) => Response::err(&e),
            };
            if conn.send(&proto::encode(&resp)).await.is_err() {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_with_journal(dir: &std::path::Path) -> CatalogueConfig {
        CatalogueConfig {
            journal_path: Some(dir.join("cat.journal")),
            snapshot_every_n_ops: 4,
            seed: Some(7),
            ..CatalogueConfig::default()
        }
    }

    #[test]
    fn journal_replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_with_journal(dir.path());
        {
            let svc = CatalogueService::new(cfg.clone()).unwrap();
            svc.mutate("mkdir", serde_json::json!({"path": "/alice", "perms": "755"}), "admin")
                .unwrap();
            svc.mutate(
                "register_file",
                serde_json::json!({
                    "lfn": "/alice/f", "pfn": "file://se1:7100/v0/aa/x",
                    "size": 42, "guid": Guid::from_u128(9), "perms": "644"
                }),
                "admin",
            )
            .unwrap();
        }
        let svc = CatalogueService::new(cfg).unwrap();
        let r = svc
            .read(|c| c.resolve(&Principal::new("admin", &[]), &"/alice/f".parse().unwrap()))
            .unwrap();
        assert_eq!(r.size, 42);
        assert_eq!(r.guid, Guid::from_u128(9));
    }

    #[test]
    fn snapshot_cycle_preserves_state() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_with_journal(dir.path());
        {
            let svc = CatalogueService::new(cfg.clone()).unwrap();
            for i in 0..10 {
                svc.mutate(
                    "mkdir",
                    serde_json::json!({"path": format!("/d{i}"), "perms": "755"}),
                    "admin",
                )
                .unwrap();
            }
        }
        // 10 mutations with snapshot_every_n_ops = 4: snapshots happened,
        // journal holds only a tail.
        assert!(snapshot_path(cfg.journal_path.as_ref().unwrap()).exists());
        let svc = CatalogueService::new(cfg).unwrap();
        let listing = svc
            .read(|c| c.list_dir(&Principal::new("admin", &[]), &LfnPath::root()))
            .unwrap();
        assert_eq!(listing.len(), 10);
    }

    #[test]
    fn prepare_write_mints_unused_guids() {
        let svc = CatalogueService::new(CatalogueConfig { seed: Some(1), ..Default::default() })
            .unwrap();
        svc.mutate("mkdir", serde_json::json!({"path": "/a", "perms": "777"}), "admin").unwrap();
        let g1 = svc.prepare_write("alice:alice", &"/a/f".parse().unwrap()).unwrap();
        let g2 = svc.prepare_write("alice:alice", &"/a/g".parse().unwrap()).unwrap();
        assert_ne!(g1, g2);
        let err = svc.prepare_write("alice:alice", &"/missing/f".parse().unwrap()).unwrap_err();
        assert_eq!(err.code.as_str(), "NotFound");
    }
}
