//! World building and scripted scenarios over the simulator.
//!
//! [`WorldBuilder`] assembles a full deployment in one process —
//! catalogue with transfer broker, storage elements, cache servers,
//! clients — wired over [`crate::simnet`].  The same worlds can be
//! described in a topology file and driven by a script file, which is
//! what `gridfs sim` runs, emitting a JSON event trace whose hash is
//! stable for a given seed.

use crate::access::{ClientConfig, GridClient};
use crate::aiod::{AiodConfig, AiodServer, Role, RouteChain};
use crate::catalogue::{CatalogueConfig, CatalogueService};
use crate::error::{GridError, GridResult};
use crate::simnet::{NodeRole, Sim, TraceEvent};
use crate::storage::{Lifetime, PluginKind, SeConfig, SeService, VolumeSpec};
use crate::transfer::{BrokerConfig, TransferBroker, TransferKind};
use crate::types::{LfnPath, Mode, Principal};
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

pub const DEFAULT_LATENCY_MS: u64 = 2;
pub const DEFAULT_BANDWIDTH_BPS: u64 = 1 << 30;

#[derive(Debug, Clone)]
pub struct SeSpec {
    pub name: String,
    pub addr: String,
    pub site: String,
    pub plugin: PluginKind,
    pub volumes: Vec<VolumeSpec>,
    pub cache_budget: u64,
}

impl SeSpec {
    pub fn simple(name: &str, addr: &str, site: &str, capacity: u64) -> SeSpec {
        SeSpec {
            name: name.to_string(),
            addr: addr.to_string(),
            site: site.to_string(),
            plugin: PluginKind::Mem,
            volumes: vec![VolumeSpec {
                id: "v0".into(),
                mount_point: "v0".into(),
                capacity_bytes: capacity,
                lifetime: Lifetime::Infinite,
            }],
            cache_budget: 256 << 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AiodSpec {
    pub addr: String,
    pub roles: BTreeSet<Role>,
    pub slaves: Vec<String>,
    pub rate_limit_bps: u64,
    pub cache_budget: u64,
    pub report_to: Option<String>,
    pub report_every_ms: u64,
}

impl AiodSpec {
    pub fn plain(addr: &str) -> AiodSpec {
        AiodSpec {
            addr: addr.to_string(),
            roles: BTreeSet::new(),
            slaves: Vec::new(),
            rate_limit_bps: 0,
            cache_budget: 256 << 20,
            report_to: None,
            report_every_ms: 0,
        }
    }

    pub fn with_roles(addr: &str, roles: &[Role], slaves: &[&str]) -> AiodSpec {
        AiodSpec {
            roles: roles.iter().copied().collect(),
            slaves: slaves.iter().map(|s| s.to_string()).collect(),
            ..AiodSpec::plain(addr)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientSpec {
    pub addr: String,
    pub site: String,
    pub user: String,
    pub groups: Vec<String>,
}

pub struct WorldBuilder {
    base: PathBuf,
    seed: u64,
    latency_ms: u64,
    bandwidth_bps: u64,
    persist_catalogue: bool,
    broker: BrokerConfig,
    ses: Vec<SeSpec>,
    aiods: Vec<AiodSpec>,
    clients: Vec<ClientSpec>,
    extra_links: Vec<(String, String, u64, u64)>,
}

pub const CAT_ADDR: &str = "cat:7000";

impl WorldBuilder {
    /// `base` is a scratch directory owned by the caller.
    pub fn new(base: impl Into<PathBuf>) -> WorldBuilder {
        WorldBuilder {
            base: base.into(),
            seed: 0,
            latency_ms: DEFAULT_LATENCY_MS,
            bandwidth_bps: DEFAULT_BANDWIDTH_BPS,
            persist_catalogue: false,
            broker: BrokerConfig::default(),
            ses: Vec::new(),
            aiods: Vec::new(),
            clients: Vec::new(),
            extra_links: Vec::new(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn links(mut self, latency_ms: u64, bandwidth_bps: u64) -> Self {
        self.latency_ms = latency_ms;
        self.bandwidth_bps = bandwidth_bps;
        self
    }

    pub fn persist_catalogue(mut self) -> Self {
        self.persist_catalogue = true;
        self
    }

    pub fn broker_config(mut self, cfg: BrokerConfig) -> Self {
        self.broker = cfg;
        self
    }

    pub fn se(mut self, spec: SeSpec) -> Self {
        self.ses.push(spec);
        self
    }

    pub fn aiod(mut self, spec: AiodSpec) -> Self {
        self.aiods.push(spec);
        self
    }

    pub fn client(mut self, addr: &str, site: &str, user: &str) -> Self {
        self.clients.push(ClientSpec {
            addr: addr.to_string(),
            site: site.to_string(),
            user: user.to_string(),
            groups: vec![user.to_string()],
        });
        self
    }

    /// Extra link with its own latency/bandwidth (overrides the mesh
    /// default for that pair).
    pub fn link(mut self, a: &str, b: &str, latency_ms: u64, bandwidth_bps: u64) -> Self {
        self.extra_links.push((a.to_string(), b.to_string(), latency_ms, bandwidth_bps));
        self
    }

    pub fn build(self) -> GridResult<World> {
        let sim = Sim::new();
        let mut all_addrs = vec![CAT_ADDR.to_string()];
        sim.add_node(CAT_ADDR, NodeRole::Catalogue);
        for se in &self.ses {
            sim.add_node(&se.addr, NodeRole::Se);
            all_addrs.push(se.addr.clone());
        }
        for a in &self.aiods {
            sim.add_node(&a.addr, NodeRole::Aiod);
            all_addrs.push(a.addr.clone());
        }
        for c in &self.clients {
            sim.add_node(&c.addr, NodeRole::Client);
            all_addrs.push(c.addr.clone());
        }
        let overridden: BTreeSet<(String, String)> = self
            .extra_links
            .iter()
            .map(|(a, b, _, _)| if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) })
            .collect();
        for i in 0..all_addrs.len() {
            for j in i + 1..all_addrs.len() {
                let key = (all_addrs[i].clone(), all_addrs[j].clone());
                if !overridden.contains(&key) {
                    sim.add_link(&all_addrs[i], &all_addrs[j], self.latency_ms, self.bandwidth_bps);
                }
            }
        }
        for (a, b, lat, bw) in &self.extra_links {
            sim.add_link(a, b, *lat, *bw);
        }

        let superuser = "admin".to_string();
        let catalogue = CatalogueService::new(CatalogueConfig {
            listen: CAT_ADDR.into(),
            superuser: superuser.clone(),
            journal_path: self
                .persist_catalogue
                .then(|| self.base.join("catalogue/cat.journal")),
            snapshot_every_n_ops: 1000,
            seed: Some(self.seed.wrapping_add(0x9e3779b97f4a7c15)),
        })?;
        let broker = TransferBroker::new(self.broker.clone())?;
        {
            let svc = catalogue.clone();
            let net = sim.handle(CAT_ADDR);
            let ext: Arc<dyn crate::catalogue::OpExtension> = broker.clone();
            sim.spawn(async move {
                svc.serve(net, Some(ext)).await;
            });
        }

        let mut ses = BTreeMap::new();
        for spec in &self.ses {
            let dir = self.base.join(format!("se-{}", spec.addr.replace(':', "_")));
            let se = SeService::new(SeConfig {
                se_name: spec.name.clone(),
                plugin: spec.plugin,
                listen: spec.addr.clone(),
                site: spec.site.clone(),
                root_dir: dir.join("store"),
                cache_dir: dir.join("aux"),
                cache_budget_bytes: spec.cache_budget,
                volumes: spec.volumes.clone(),
            })?;
            let svc = se.clone();
            let net = sim.handle(&spec.addr);
            sim.spawn(async move {
                svc.serve(net).await;
            });
            ses.insert(spec.name.clone(), se);
        }

        let mut aiods = BTreeMap::new();
        for spec in &self.aiods {
            let dir = self.base.join(format!("aiod-{}", spec.addr.replace(':', "_")));
            let server = AiodServer::new(AiodConfig {
                listen: spec.addr.clone(),
                catalogue_addr: CAT_ADDR.into(),
                auth: superuser.clone(),
                roles: spec.roles.clone(),
                slaves: spec.slaves.clone(),
                cache_dir: dir,
                cache_budget: spec.cache_budget,
                rate_limit_bps: spec.rate_limit_bps,
                locate_deadline_ms: 1000,
                report_to: spec.report_to.clone(),
                report_every_ms: spec.report_every_ms,
            })?;
            let svc = server.clone();
            let net = sim.handle(&spec.addr);
            sim.spawn(async move {
                svc.serve(net).await;
            });
            aiods.insert(spec.addr.clone(), server);
        }

        // Let every service reach its accept loop.
        sim.run_ready();

        // Register SEs and bootstrap users directly in the catalogue.
        for spec in &self.ses {
            catalogue.mutate(
                "register_se",
                serde_json::json!({"name": spec.name, "addr": spec.addr, "site": spec.site}),
                &superuser,
            )?;
        }
        let mut users: Vec<Principal> = Vec::new();
        for c in &self.clients {
            let who = Principal {
                user: c.user.clone(),
                groups: c.groups.clone(),
            };
            if users.iter().any(|u| u.user == who.user) {
                continue;
            }
            bootstrap_user(&catalogue, &superuser, &who)?;
            users.push(who);
        }

        Ok(World {
            sim,
            base: self.base,
            catalogue,
            broker,
            ses,
            aiods,
            clients: self.clients,
            seed: self.seed,
        })
    }
}

/// Home directory plus credential virtual file for one user.
pub fn bootstrap_user(
    catalogue: &CatalogueService,
    superuser: &str,
    who: &Principal,
) -> GridResult<()> {
    let home = LfnPath::parse(&format!("/{}", who.user))?;
    catalogue.mutate(
        "mkdir",
        serde_json::json!({"path": home, "perms": "755"}),
        superuser,
    )?;
    catalogue.mutate(
        "set_access",
        serde_json::json!({"lfn": home, "owner": who.user, "group": who.primary_group()}),
        superuser,
    )?;
    let cred = home.child(".credential")?;
    catalogue.mutate(
        "put_inline",
        serde_json::json!({"lfn": cred, "content": who.to_token(), "perms": "644"}),
        &who.to_token(),
    )?;
    Ok(())
}

pub struct World {
    pub sim: Sim,
    pub base: PathBuf,
    pub catalogue: Arc<CatalogueService>,
    pub broker: Arc<TransferBroker>,
    pub ses: BTreeMap<String, Arc<SeService>>,
    pub aiods: BTreeMap<String, Arc<AiodServer>>,
    pub clients: Vec<ClientSpec>,
    pub seed: u64,
}

impl World {
    /// A fresh GridClient for the given client node.
    pub fn client(&self, user: &str) -> GridResult<GridClient> {
        let spec = self
            .clients
            .iter()
            .find(|c| c.user == user)
            .ok_or_else(|| GridError::bad_request(format!("no client node for user {user}")))?;
        let who = Principal { user: spec.user.clone(), groups: spec.groups.clone() };
        let default_se = self.ses.keys().next().cloned().unwrap_or_default();
        let cfg = ClientConfig {
            catalogue_addr: CAT_ADDR.into(),
            default_se,
            site: spec.site.clone(),
            cache_dir: self.base.join(format!("client-{}", spec.addr.replace(':', "_"))),
            route: None,
            auth: who.to_token(),
            credential_ref: None,
            staging_budget_bytes: 1 << 30,
        };
        GridClient::new(self.sim.handle(&spec.addr), cfg)
    }

    /// Run the transfer broker until the queue settles.
    pub fn run_broker(&self) {
        let cat = self.catalogue.clone();
        let broker = self.broker.clone();
        let net = self.sim.handle(CAT_ADDR);
        self.sim.block_on(async move {
            broker.drain(&cat, &net).await;
        });
    }

    pub fn broker_step(&self) -> Vec<u64> {
        let cat = self.catalogue.clone();
        let broker = self.broker.clone();
        let net = self.sim.handle(CAT_ADDR);
        self.sim.block_on(async move { broker.step(&cat, &net).await })
    }
}

/// Deterministic pseudo-random file content for scenarios and tests.
pub fn deterministic_bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = vec![0u8; len];
    rng.fill_bytes(&mut out);
    out
}

/// Log-uniform random size in [1, max], biased toward small files.
pub fn log_uniform_size(rng: &mut StdRng, max: u64) -> u64 {
    let max_log = (max as f64).ln();
    let x: f64 = rng.gen_range(0.0..=max_log);
    (x.exp() as u64).clamp(1, max)
}

// ---- topology and script files ---------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyNode {
    pub addr: String,
    pub role: NodeRole,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub site: Option<String>,
    #[serde(default)]
    pub user: Option<String>,
    #[serde(default)]
    pub plugin: Option<PluginKind>,
    #[serde(default)]
    pub capacity_bytes: Option<u64>,
    #[serde(default)]
    pub lifetime_s: Option<u64>,
    #[serde(default)]
    pub roles: Vec<Role>,
    #[serde(default)]
    pub slaves: Vec<String>,
    #[serde(default)]
    pub rate_limit_bps: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyLink {
    pub a: String,
    pub b: String,
    #[serde(default = "default_latency")]
    pub latency_ms: u64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_bps: u64,
}

fn default_latency() -> u64 {
    DEFAULT_LATENCY_MS
}

fn default_bandwidth() -> u64 {
    DEFAULT_BANDWIDTH_BPS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    #[serde(default)]
    pub seed: u64,
    /// Mesh defaults applied to node pairs without an explicit link.
    #[serde(default = "default_latency")]
    pub latency_ms: u64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_bps: u64,
    #[serde(default)]
    pub node: Vec<TopologyNode>,
    #[serde(default)]
    pub link: Vec<TopologyLink>,
}

impl TopologyFile {
    pub fn parse(text: &str) -> GridResult<TopologyFile> {
        toml::from_str(text).map_err(|e| GridError::bad_request(format!("topology file: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    Mkdir { path: String, #[serde(default)] user: Option<String> },
    Put { lfn: String, size: u64, #[serde(default)] seed: u64, #[serde(default)] route: Option<String>, #[serde(default)] user: Option<String> },
    Get { lfn: String, #[serde(default)] route: Option<String>, #[serde(default)] verify_seed: Option<u64>, #[serde(default)] user: Option<String> },
    Replicate { lfn: String, dst: String, #[serde(default)] user: Option<String> },
    MoveFile { lfn: String, dst: String, #[serde(default)] user: Option<String> },
    Broker {},
    Partition { node: String },
    Heal { node: String },
    Sleep { ms: u64 },
    Expire { se: String },
    Resync { se: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub step: Vec<Step>,
}

impl ScriptFile {
    pub fn parse(text: &str) -> GridResult<ScriptFile> {
        toml::from_str(text).map_err(|e| GridError::bad_request(format!("script file: {e}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub trace_hash: String,
    pub virtual_ms: u64,
    pub steps: Vec<String>,
    pub events: Vec<TraceEvent>,
}

/// Build the world a topology file describes.
pub fn world_from_topology(base: PathBuf, topo: &TopologyFile) -> GridResult<World> {
    let mut builder = WorldBuilder::new(base).seed(topo.seed).links(topo.latency_ms, topo.bandwidth_bps);
    for node in &topo.node {
        match node.role {
            NodeRole::Catalogue => {} // fixed address, always present
            NodeRole::Se => {
                let name = node.name.clone().unwrap_or_else(|| node.addr.clone());
                let mut spec = SeSpec::simple(
                    &name,
                    &node.addr,
                    node.site.as_deref().unwrap_or(""),
                    node.capacity_bytes.unwrap_or(1 << 30),
                );
                if let Some(plugin) = node.plugin {
                    spec.plugin = plugin;
                }
                if let Some(s) = node.lifetime_s {
                    spec.volumes[0].lifetime = Lifetime::Seconds(s);
                }
                builder = builder.se(spec);
            }
            NodeRole::Aiod => {
                let mut spec = AiodSpec::plain(&node.addr);
                spec.roles = node.roles.iter().copied().collect();
                spec.slaves = node.slaves.clone();
                spec.rate_limit_bps = node.rate_limit_bps.unwrap_or(0);
                builder = builder.aiod(spec);
            }
            NodeRole::Client => {
                let user = node.user.clone().unwrap_or_else(|| "alice".to_string());
                builder = builder.client(&node.addr, node.site.as_deref().unwrap_or(""), &user);
            }
        }
    }
    for link in &topo.link {
        builder = builder.link(&link.a, &link.b, link.latency_ms, link.bandwidth_bps);
    }
    builder.build()
}

/// Run a scripted scenario and return the trace, its hash and per-step
/// summaries.  Identical topology + seed + script give identical traces.
pub fn run_scenario(base: PathBuf, topo: &TopologyFile, script: &ScriptFile) -> GridResult<ScenarioReport> {
    let world = world_from_topology(base, topo)?;
    let mut summaries = Vec::new();
    let default_user =
        world.clients.first().map(|c| c.user.clone()).unwrap_or_else(|| "alice".to_string());
    for (i, step) in script.step.iter().enumerate() {
        let summary = run_step(&world, step, &default_user)
            .unwrap_or_else(|e| format!("error: {e}"));
        summaries.push(format!("step {i}: {summary}"));
    }
    Ok(ScenarioReport {
        trace_hash: world.sim.trace_hash(),
        virtual_ms: world.sim.now_ms(),
        steps: summaries,
        events: world.sim.trace(),
    })
}

fn run_step(world: &World, step: &Step, default_user: &str) -> GridResult<String> {
    use crate::access::AccessStrategy;
    let user_of = |u: &Option<String>| u.clone().unwrap_or_else(|| default_user.to_string());
    match step {
        Step::Mkdir { path, user } => {
            let client = world.client(&user_of(user))?;
            let path = LfnPath::parse(path)?;
            world.sim.block_on(async move {
                client.catalogue().mkdir(&path, Mode::new(0o755)).await?;
                Ok(format!("mkdir {path}"))
            })
        }
        Step::Put { lfn, size, seed, route, user } => {
            let client = world.client(&user_of(user))?;
            let size = *size;
            let data = deterministic_bytes(*seed, size as usize);
            let route = route.as_deref().map(RouteChain::parse).transpose()?;
            let target = lfn.clone();
            world.sim.block_on(async move {
                client.put_file(&target, &data, AccessStrategy::RemotePartial, route).await?;
                Ok(format!("put {target} ({size} bytes)"))
            })
        }
        Step::Get { lfn, route, verify_seed, user } => {
            let client = world.client(&user_of(user))?;
            let route = route.as_deref().map(RouteChain::parse).transpose()?;
            let target = lfn.clone();
            let verify = *verify_seed;
            world.sim.block_on(async move {
                let data = client.get_file(&target, AccessStrategy::RemotePartial, route).await?;
                if let Some(seed) = verify {
                    let expect = deterministic_bytes(seed, data.len());
                    if data != expect {
                        return Err(GridError::size_mismatch(format!(
                            "content mismatch reading {target}"
                        )));
                    }
                }
                Ok(format!("get {target} ({} bytes)", data.len()))
            })
        }
        Step::Replicate { lfn, dst, user } | Step::MoveFile { lfn, dst, user } => {
            let kind = if matches!(step, Step::Replicate { .. }) {
                TransferKind::Replicate
            } else {
                TransferKind::Move
            };
            let who = world
                .clients
                .iter()
                .find(|c| c.user == user_of(user))
                .map(|c| Principal { user: c.user.clone(), groups: c.groups.clone() })
                .ok_or_else(|| GridError::bad_request("unknown user"))?;
            let lfn = LfnPath::parse(lfn)?;
            let id = world.broker.enqueue(&world.catalogue, &who.to_token(), &lfn, dst, kind)?;
            Ok(format!("enqueued transfer {id} of {lfn} to {dst}"))
        }
        Step::Broker {} => {
            let executed = world.broker_step();
            Ok(format!("broker step executed {executed:?}"))
        }
        Step::Partition { node } => {
            world.sim.partition(node).map_err(crate::proto::net_to_grid)?;
            Ok(format!("partitioned {node}"))
        }
        Step::Heal { node } => {
            world.sim.heal(node).map_err(crate::proto::net_to_grid)?;
            Ok(format!("healed {node}"))
        }
        Step::Sleep { ms } => {
            let net = world.sim.handle(CAT_ADDR);
            let ms = *ms;
            world.sim.block_on(async move {
                net.sleep_ms(ms).await;
            });
            Ok(format!("slept {ms} ms"))
        }
        Step::Expire { se } => {
            let svc = world
                .ses
                .get(se)
                .ok_or_else(|| GridError::unknown_se(format!("no SE named {se}")))?;
            let removed = svc.expire_files(world.sim.now_ms() / 1000)?;
            Ok(format!("expired {} files on {se}", removed.len()))
        }
        Step::Resync { se } => {
            let svc = world
                .ses
                .get(se)
                .ok_or_else(|| GridError::unknown_se(format!("no SE named {se}")))?;
            let report = svc.resync(world.sim.now_ms() / 1000)?;
            Ok(format!(
                "resync {se}: added {} removed {} corrected {}",
                report.added, report.removed, report.size_corrected
            ))
        }
    }
}
