//! On-disk configuration for the daemons and the client tools.
//! Everything is TOML; the client honors `GRIDFS_CONFIG` (file path)
//! and `GRIDFS_TOKEN` (auth token override).

use crate::aiod::{AiodConfig, Role};
use crate::catalogue::CatalogueConfig;
use crate::error::{GridError, GridResult};
use crate::storage::{PluginKind, SeConfig, VolumeSpec};
use crate::transfer::BrokerConfig;
use serde::Deserialize;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

fn read(path: &Path) -> GridResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| GridError::bad_request(format!("{}: {e}", path.display())))
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> GridResult<T> {
    toml::from_str(&read(path)?)
        .map_err(|e| GridError::bad_request(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Deserialize)]
pub struct CatalogueFileConfig {
    pub listen: String,
    #[serde(default = "default_superuser")]
    pub superuser: String,
    #[serde(default)]
    pub journal_path: Option<PathBuf>,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every_n_ops: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub broker: BrokerFileConfig,
}

fn default_superuser() -> String {
    "admin".into()
}

fn default_snapshot_every() -> u64 {
    1000
}

#[derive(Debug, Clone, Deserialize)]
pub struct BrokerFileConfig {
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default)]
    pub queue_journal_path: Option<PathBuf>,
    /// Broker step period for the daemon, in milliseconds.
    #[serde(default = "default_broker_interval")]
    pub interval_ms: u64,
}

fn default_max_concurrent() -> usize {
    2
}

fn default_retry_limit() -> u32 {
    3
}

fn default_broker_interval() -> u64 {
    1000
}

impl Default for BrokerFileConfig {
    fn default() -> Self {
        BrokerFileConfig {
            max_concurrent: default_max_concurrent(),
            retry_limit: default_retry_limit(),
            queue_journal_path: None,
            interval_ms: default_broker_interval(),
        }
    }
}

impl CatalogueFileConfig {
    pub fn load(path: &Path) -> GridResult<CatalogueFileConfig> {
        parse(path)
    }

    pub fn service_config(&self) -> CatalogueConfig {
        CatalogueConfig {
            listen: self.listen.clone(),
            superuser: self.superuser.clone(),
            journal_path: self.journal_path.clone(),
            snapshot_every_n_ops: self.snapshot_every_n_ops,
            seed: self.seed,
        }
    }

    pub fn broker_config(&self) -> BrokerConfig {
        BrokerConfig {
            max_concurrent: self.broker.max_concurrent,
            retry_limit: self.broker.retry_limit,
            queue_journal_path: self.broker.queue_journal_path.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SeFileConfig {
    pub se_name: String,
    pub plugin: PluginKind,
    pub listen: String,
    #[serde(default)]
    pub site: String,
    pub root_dir: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(default = "default_cache_budget")]
    pub cache_budget_bytes: u64,
    pub volumes: Vec<VolumeSpec>,
}

fn default_cache_budget() -> u64 {
    256 << 20
}

impl SeFileConfig {
    pub fn load(path: &Path) -> GridResult<SeFileConfig> {
        parse(path)
    }

    pub fn service_config(&self) -> SeConfig {
        SeConfig {
            se_name: self.se_name.clone(),
            plugin: self.plugin,
            listen: self.listen.clone(),
            site: self.site.clone(),
            root_dir: self.root_dir.clone(),
            cache_dir: self.cache_dir.clone(),
            cache_budget_bytes: self.cache_budget_bytes,
            volumes: self.volumes.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct AiodFileConfig {
    pub listen: String,
    pub catalogue_addr: String,
    #[serde(default = "default_superuser")]
    pub auth: String,
    #[serde(default)]
    pub roles: Vec<Role>,
    #[serde(default)]
    pub slaves: Vec<String>,
    pub cache_dir: PathBuf,
    #[serde(default = "default_cache_budget")]
    pub cache_budget: u64,
    #[serde(default)]
    pub rate_limit_bps: u64,
    #[serde(default = "default_locate_deadline")]
    pub locate_deadline_ms: u64,
    #[serde(default)]
    pub report_to: Option<String>,
    #[serde(default = "default_report_every")]
    pub report_every_ms: u64,
}

fn default_locate_deadline() -> u64 {
    1000
}

fn default_report_every() -> u64 {
    2000
}

impl AiodFileConfig {
    pub fn load(path: &Path) -> GridResult<AiodFileConfig> {
        parse(path)
    }

    pub fn service_config(&self) -> AiodConfig {
        AiodConfig {
            listen: self.listen.clone(),
            catalogue_addr: self.catalogue_addr.clone(),
            auth: self.auth.clone(),
            roles: self.roles.iter().copied().collect::<BTreeSet<Role>>(),
            slaves: self.slaves.clone(),
            cache_dir: self.cache_dir.clone(),
            cache_budget: self.cache_budget,
            rate_limit_bps: self.rate_limit_bps,
            locate_deadline_ms: self.locate_deadline_ms,
            report_to: self.report_to.clone(),
            report_every_ms: self.report_every_ms,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ClientFileConfig {
    pub catalogue_addr: String,
    pub default_se: String,
    #[serde(default)]
    pub site: String,
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub route: Option<String>,
    #[serde(default)]
    pub auth: String,
    #[serde(default)]
    pub credential_ref: Option<String>,
    #[serde(default = "default_staging_budget")]
    pub staging_budget_bytes: u64,
    #[serde(default = "default_dir_cache_ttl")]
    pub dir_cache_ttl_s: u64,
}

fn default_staging_budget() -> u64 {
    1 << 30
}

fn default_dir_cache_ttl() -> u64 {
    5
}

impl ClientFileConfig {
    /// Load from `GRIDFS_CONFIG` (or an explicit path); `GRIDFS_TOKEN`
    /// overrides the auth token.
    pub fn load(explicit: Option<&Path>) -> GridResult<ClientFileConfig> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => std::env::var("GRIDFS_CONFIG")
                .map(PathBuf::from)
                .map_err(|_| GridError::bad_request("set GRIDFS_CONFIG or pass --config"))?,
        };
        let mut cfg: ClientFileConfig = parse(&path)?;
        if let Ok(token) = std::env::var("GRIDFS_TOKEN") {
            if !token.is_empty() {
                cfg.auth = token;
            }
        }
        if cfg.auth.is_empty() {
            return Err(GridError::bad_request(
                "no auth token: set `auth` in the config or GRIDFS_TOKEN",
            ));
        }
        Ok(cfg)
    }

    pub fn client_config(&self) -> GridResult<crate::access::ClientConfig> {
        Ok(crate::access::ClientConfig {
            catalogue_addr: self.catalogue_addr.clone(),
            default_se: self.default_se.clone(),
            site: self.site.clone(),
            cache_dir: self.cache_dir.clone(),
            route: self.route.as_deref().map(crate::aiod::RouteChain::parse).transpose()?,
            auth: self.auth.clone(),
            credential_ref: self
                .credential_ref
                .as_deref()
                .map(crate::types::LfnPath::parse)
                .transpose()?,
            staging_budget_bytes: self.staging_budget_bytes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn se_config_parses_volumes_and_lifetimes() {
        let text = r#"
se_name = "CERN::disk1"
plugin = "file"
listen = "127.0.0.1:7100"
site = "cern"
root_dir = "/tmp/se/store"
cache_dir = "/tmp/se/aux"

[[volumes]]
id = "v0"
mount_point = "v0"
capacity_bytes = 1048576
lifetime = "infinite"

[[volumes]]
id = "v1"
mount_point = "v1"
capacity_bytes = 2048
lifetime = 3600
"#;
        let cfg: SeFileConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.volumes.len(), 2);
        assert_eq!(cfg.volumes[1].lifetime, crate::storage::Lifetime::Seconds(3600));
        assert_eq!(cfg.cache_budget_bytes, 256 << 20);
    }

    #[test]
    fn catalogue_defaults() {
        let cfg: CatalogueFileConfig = toml::from_str("listen = \"127.0.0.1:7000\"").unwrap();
        assert_eq!(cfg.superuser, "admin");
        assert_eq!(cfg.snapshot_every_n_ops, 1000);
        assert_eq!(cfg.broker.max_concurrent, 2);
        assert_eq!(cfg.broker.retry_limit, 3);
    }

    #[test]
    fn aiod_roles_parse() {
        let text = r#"
listen = "127.0.0.1:7200"
catalogue_addr = "127.0.0.1:7000"
cache_dir = "/tmp/aiod"
roles = ["io_gatekeeper", "slave_cache"]
slaves = ["127.0.0.1:7201"]
"#;
        let cfg: AiodFileConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.roles, vec![Role::IoGatekeeper, Role::SlaveCache]);
        assert_eq!(cfg.report_every_ms, 2000);
    }
}
