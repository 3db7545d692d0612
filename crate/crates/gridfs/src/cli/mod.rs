//! Command implementations behind the `gridfs` binary and the
//! interactive shell.  Every command is a thin composition of catalogue
//! and access operations; no grid logic lives here, which is what lets
//! the test suite run the same scenarios through the API directly and
//! compare outcomes.

pub mod shell;

use crate::access::{AccessStrategy, GridClient, WriteOptions};
use crate::aiod::RouteChain;
use crate::catalogue::EntryKind;
use crate::error::{GridError, GridResult};
use crate::transfer::{TransferKind, TransferRequest};
use crate::types::{LfnPath, Mode};
use serde_json::json;

/// A copy/addressing target: a local filesystem path or an LFN with an
/// optional `@SE` suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Local(std::path::PathBuf),
    Grid { lfn: LfnPath, se: Option<String> },
}

impl Target {
    /// `local:<path>` and relative paths are local; absolute paths (and
    /// `grid://` URLs) are LFNs, split at the last `@`.
    pub fn parse(text: &str) -> GridResult<Target> {
        if let Some(path) = text.strip_prefix("local:") {
            return Ok(Target::Local(path.into()));
        }
        if !text.starts_with('/') && !text.starts_with("grid://") {
            return Ok(Target::Local(text.into()));
        }
        let (lfn, se) = crate::access::parse_lfn_at_se(text)?;
        Ok(Target::Grid { lfn, se })
    }

    fn grid_text(&self) -> Option<String> {
        match self {
            Target::Grid { lfn, se: Some(se) } => Some(format!("{lfn}@{se}")),
            Target::Grid { lfn, se: None } => Some(lfn.to_string()),
            Target::Local(_) => None,
        }
    }
}

pub struct Cli {
    pub client: GridClient,
}

impl Cli {
    pub fn new(client: GridClient) -> Cli {
        Cli { client }
    }

    pub async fn ls(&self, path: &LfnPath, long: bool) -> GridResult<String> {
        let entries = self.client.catalogue().list_dir(path).await?;
        let mut out = String::new();
        for e in entries {
            if long {
                let kind_char = match e.kind {
                    EntryKind::Dir => 'd',
                    EntryKind::File => '-',
                    EntryKind::Meta => 'm',
                };
                let name = if e.kind == EntryKind::Dir { format!("{}/", e.name) } else { e.name };
                out.push_str(&format!(
                    "{kind_char}{} {} {} {:>10} {}\n",
                    e.perms.symbolic(),
                    e.owner,
                    e.group,
                    e.size,
                    name
                ));
            } else {
                let name = if e.kind == EntryKind::Dir { format!("{}/", e.name) } else { e.name };
                out.push_str(&name);
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub async fn mkdir(&self, path: &LfnPath, mode: Mode) -> GridResult<String> {
        self.client.catalogue().mkdir(path, mode).await?;
        Ok(String::new())
    }

    pub async fn rm(&self, lfn: &LfnPath) -> GridResult<String> {
        let pfns = self.client.catalogue().remove(lfn).await?;
        // Catalogue removal returns the physical locations so we can
        // erase the stored copies.
        let mut failures = 0;
        for pfn in &pfns {
            match crate::storage::SeClient::connect(
                self.net(),
                &pfn.endpoint(),
                self.client.config().auth.as_str(),
            )
            .await
            {
                Ok(mut se) => {
                    if se.rm_pfn(pfn).await.is_err() {
                        failures += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }
        if failures > 0 {
            Ok(format!("removed {lfn}; {failures} physical copies left behind\n"))
        } else {
            Ok(String::new())
        }
    }

    fn net(&self) -> &std::sync::Arc<dyn crate::net::Net> {
        self.client.net()
    }

    pub async fn mv(&self, from: &LfnPath, to: &LfnPath) -> GridResult<String> {
        self.client.catalogue().rename(from, to).await?;
        Ok(String::new())
    }

    pub async fn whereis(&self, lfn: &LfnPath) -> GridResult<String> {
        let resolved = self.client.catalogue().resolve(lfn).await?;
        let mut out = String::new();
        for (i, loc) in resolved.locations.iter().enumerate() {
            let role = if i == 0 { "master" } else { "replica" };
            let se = loc.se.as_deref().unwrap_or("?");
            out.push_str(&format!("{role} {se} {}\n", loc.pfn));
        }
        Ok(out)
    }

    pub async fn cat(&self, lfn: &LfnPath) -> GridResult<Vec<u8>> {
        self.client.get_file(&lfn.to_string(), AccessStrategy::RemotePartial, self.client.config().route.clone()).await
    }

    pub async fn meta(&self, lfn: &LfnPath) -> GridResult<String> {
        let mut text = self.client.catalogue().read_metadata(lfn).await?;
        if !text.is_empty() {
            text.push('\n');
        }
        Ok(text)
    }

    pub async fn set_meta(&self, lfn: &LfnPath, name: &str, value: &str) -> GridResult<String> {
        self.client.catalogue().set_tag(lfn, name, value).await?;
        Ok(String::new())
    }

    /// `cp` with the grid addressing rules: local<->grid copies run
    /// synchronously; same-LFN grid->grid copies between distinct SEs
    /// queue an asynchronous transfer and print its id.
    pub async fn cp(&self, src: &str, dst: &str) -> GridResult<String> {
        let src = Target::parse(src)?;
        let dst = Target::parse(dst)?;
        match (&src, &dst) {
            (Target::Local(from), Target::Grid { .. }) => {
                let data = std::fs::read(from)
                    .map_err(|e| GridError::not_found(format!("{}: {e}", from.display())))?;
                let target = dst.grid_text().expect("grid target");
                self.client
                    .open_and_put(&target, &data)
                    .await?;
                Ok(String::new())
            }
            (Target::Grid { .. }, Target::Local(to)) => {
                let source = src.grid_text().expect("grid target");
                let data = self
                    .client
                    .get_file(&source, AccessStrategy::RemotePartial, self.client.config().route.clone())
                    .await?;
                std::fs::write(to, data)
                    .map_err(|e| GridError::backend_failure(format!("{}: {e}", to.display())))?;
                Ok(String::new())
            }
            (Target::Grid { lfn: src_lfn, se: _ }, Target::Grid { lfn: dst_lfn, se: Some(dst_se) })
                if src_lfn == dst_lfn =>
            {
                // Asynchronous replication between storage elements.
                let id = self.transfer_enqueue(src_lfn, dst_se, TransferKind::Replicate).await?;
                Ok(format!("transfer {id} queued\n"))
            }
            (Target::Grid { .. }, Target::Grid { se: None, .. }) => Err(GridError::bad_request(
                "grid-to-grid copy needs an @SE suffix on the destination",
            )),
            (Target::Grid { .. }, Target::Grid { .. }) => {
                // Different LFNs: synchronous copy through the client.
                let source = src.grid_text().expect("grid target");
                let data = self
                    .client
                    .get_file(&source, AccessStrategy::RemotePartial, self.client.config().route.clone())
                    .await?;
                let target = dst.grid_text().expect("grid target");
                self.client.open_and_put(&target, &data).await?;
                Ok(String::new())
            }
            (Target::Local(_), Target::Local(_)) => {
                Err(GridError::bad_request("both targets are local; nothing grid-side to do"))
            }
        }
    }

    /// Whole-file download, optionally through an explicit route chain.
    pub async fn aioget(
        &self,
        lfn: &str,
        local: &std::path::Path,
        route: Option<RouteChain>,
    ) -> GridResult<String> {
        let route = route.or_else(|| self.client.config().route.clone());
        let data = self.client.get_file(lfn, AccessStrategy::RemotePartial, route).await?;
        let len = data.len();
        std::fs::write(local, data)
            .map_err(|e| GridError::backend_failure(format!("{}: {e}", local.display())))?;
        Ok(format!("{len} bytes\n"))
    }

    /// Whole-file upload, optionally through an explicit route chain.
    pub async fn aioput(
        &self,
        local: &std::path::Path,
        lfn: &str,
        route: Option<RouteChain>,
    ) -> GridResult<String> {
        let data = std::fs::read(local)
            .map_err(|e| GridError::not_found(format!("{}: {e}", local.display())))?;
        let route = route.or_else(|| self.client.config().route.clone());
        let h = self
            .client
            .open_write_with(
                lfn,
                AccessStrategy::RemotePartial,
                route,
                WriteOptions { size_hint: data.len() as u64, perms: Mode::new(0o644) },
            )
            .await?;
        let mut offset = 0u64;
        for chunk in data.chunks(256 << 10) {
            self.client.generic_write(h, offset, chunk).await?;
            offset += chunk.len() as u64;
        }
        self.client.generic_close(h).await?;
        Ok(format!("{offset} bytes\n"))
    }

    pub async fn transfer_enqueue(
        &self,
        lfn: &LfnPath,
        dst_se: &str,
        kind: TransferKind,
    ) -> GridResult<u64> {
        #[derive(serde::Deserialize)]
        struct Out {
            id: u64,
        }
        let out: Out = self
            .client
            .catalogue()
            .call("transfer_enqueue", json!({"lfn": lfn, "dst_se": dst_se, "kind": kind}))
            .await?;
        Ok(out.id)
    }

    pub async fn transfer_status(&self, id: u64) -> GridResult<TransferRequest> {
        self.client.catalogue().call("transfer_query", json!({"id": id})).await
    }

    pub async fn transfer_step(&self) -> GridResult<Vec<u64>> {
        #[derive(serde::Deserialize)]
        struct Out {
            executed: Vec<u64>,
        }
        let out: Out = self.client.catalogue().call("transfer_step", json!({})).await?;
        Ok(out.executed)
    }

    /// Make a storage element known to the catalogue (superuser only).
    pub async fn register_se(&self, name: &str, addr: &str, site: &str) -> GridResult<String> {
        self.client.catalogue().register_se(name, addr, site).await?;
        Ok(String::new())
    }

    /// Create a user's home directory and credential virtual file; the
    /// session must run as the superuser.  `token` is the user's full
    /// auth token (`user` or `user:g1,g2`).
    pub async fn bootstrap_user(&self, token: &str) -> GridResult<String> {
        let who = crate::types::Principal::from_token(token)?;
        let home = LfnPath::parse(&format!("/{}", who.user))?;
        let cat = self.client.catalogue();
        cat.mkdir(&home, Mode::new(0o755)).await?;
        cat.set_access(&home, Some(&who.user), Some(who.primary_group()), None).await?;
        let cred = home.child(".credential")?;
        cat.put_inline(&cred, token, Mode::new(0o600)).await?;
        cat.set_access(&cred, Some(&who.user), Some(who.primary_group()), None).await?;
        Ok(format!("user {} ready under {home}\n", who.user))
    }
}

impl GridClient {
    /// Upload with a size hint, used by `cp` and `aioput`.
    pub async fn open_and_put(&self, target: &str, data: &[u8]) -> GridResult<()> {
        let h = self
            .open_write_with(
                target,
                AccessStrategy::RemotePartial,
                self.config().route.clone(),
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_parsing() {
        assert_eq!(Target::parse("local:/tmp/a.dat").unwrap(), Target::Local("/tmp/a.dat".into()));
        assert_eq!(Target::parse("a.dat").unwrap(), Target::Local("a.dat".into()));
        match Target::parse("/alice/f@CERN::disk1").unwrap() {
            Target::Grid { lfn, se } => {
                assert_eq!(lfn.to_string(), "/alice/f");
                assert_eq!(se.as_deref(), Some("CERN::disk1"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match Target::parse("grid:///alice/f").unwrap() {
            Target::Grid { lfn, se } => {
                assert_eq!(lfn.to_string(), "/alice/f");
                assert!(se.is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
