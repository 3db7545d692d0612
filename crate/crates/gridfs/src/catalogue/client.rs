//! Typed catalogue client with a cached connection and one transparent
//! reconnect: a broken connection is redialed once per call, which is
//! what keeps interactive sessions alive across service restarts and
//! healed partitions.

use super::store::{ListedEntry, Resolved, SeInfo};
use crate::error::GridResult;
use crate::net::{Conn, Net};
use crate::proto::{self, Request};
use crate::types::{Guid, LfnPath, Mode, Pfn};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use std::sync::Arc;

pub struct CatClient {
    net: Arc<dyn Net>,
    addr: String,
    auth: String,
    conn: futures::lock::Mutex<Option<Box<dyn Conn>>>,
}

impl CatClient {
    pub fn new(net: Arc<dyn Net>, addr: &str, auth: &str) -> CatClient {
        CatClient {
            net,
            addr: addr.to_string(),
            auth: auth.to_string(),
            conn: futures::lock::Mutex::new(None),
        }
    }

    pub fn auth(&self) -> &str {
        &self.auth
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub async fn call<T: DeserializeOwned>(&self, op: &str, args: Value) -> GridResult<T> {
        let mut slot = self.conn.lock().await;
        let mut last_err = None;
        for _attempt in 0..2 {
            if slot.is_none() {
                match self.net.dial(&self.addr).await {
                    Ok(c) => *slot = Some(c),
                    Err(e) => {
                        last_err = Some(proto::net_to_grid(e));
                        continue;
                    }
                }
            }
            let conn = slot.as_mut().expect("connection present");
            match proto::call(conn.as_mut(), &Request::new(op, args.clone(), &self.auth)).await {
                Ok(resp) => return resp.into_result(),
                Err(e) => {
                    // Local transport failure: drop the connection and retry once.
                    *slot = None;
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.expect("at least one attempt ran"))
    }

    pub async fn ping(&self) -> GridResult<()> {
        self.call::<Value>("ping", json!({})).await.map(|_| ())
    }

    pub async fn mkdir(&self, path: &LfnPath, perms: Mode) -> GridResult<()> {
        self.call::<Value>("mkdir", json!({"path": path, "perms": perms})).await.map(|_| ())
    }

    pub async fn register_file(
        &self,
        lfn: &LfnPath,
        pfn: &Pfn,
        size: u64,
        guid: Guid,
        perms: Mode,
    ) -> GridResult<()> {
        self.call::<Value>(
            "register_file",
            json!({"lfn": lfn, "pfn": pfn, "size": size, "guid": guid, "perms": perms}),
        )
        .await
        .map(|_| ())
    }

    pub async fn resolve(&self, lfn: &LfnPath) -> GridResult<Resolved> {
        self.call("resolve", json!({"lfn": lfn})).await
    }

    pub async fn add_replica(&self, lfn: &LfnPath, pfn: &Pfn, observed_size: u64) -> GridResult<()> {
        self.call::<Value>(
            "add_replica",
            json!({"lfn": lfn, "pfn": pfn, "observed_size": observed_size}),
        )
        .await
        .map(|_| ())
    }

    pub async fn drop_replica(&self, lfn: &LfnPath, pfn: &Pfn) -> GridResult<()> {
        self.call::<Value>("drop_replica", json!({"lfn": lfn, "pfn": pfn})).await.map(|_| ())
    }

    pub async fn remove(&self, lfn: &LfnPath) -> GridResult<Vec<Pfn>> {
        #[derive(serde::Deserialize)]
        struct Out {
            pfns: Vec<Pfn>,
        }
        self.call::<Out>("remove", json!({"lfn": lfn})).await.map(|o| o.pfns)
    }

    pub async fn rename(&self, from: &LfnPath, to: &LfnPath) -> GridResult<()> {
        self.call::<Value>("move", json!({"from": from, "to": to})).await.map(|_| ())
    }

    pub async fn set_access(
        &self,
        lfn: &LfnPath,
        owner: Option<&str>,
        group: Option<&str>,
        perms: Option<Mode>,
    ) -> GridResult<()> {
        self.call::<Value>(
            "set_access",
            json!({"lfn": lfn, "owner": owner, "group": group, "perms": perms}),
        )
        .await
        .map(|_| ())
    }

    pub async fn read_metadata(&self, lfn: &LfnPath) -> GridResult<String> {
        #[derive(serde::Deserialize)]
        struct Out {
            text: String,
        }
        self.call::<Out>("read_metadata", json!({"lfn": lfn})).await.map(|o| o.text)
    }

    pub async fn set_tag(&self, lfn: &LfnPath, name: &str, value: &str) -> GridResult<()> {
        self.call::<Value>("set_tag", json!({"lfn": lfn, "name": name, "value": value}))
            .await
            .map(|_| ())
    }

    pub async fn list_dir(&self, path: &LfnPath) -> GridResult<Vec<ListedEntry>> {
        #[derive(serde::Deserialize)]
        struct Out {
            entries: Vec<ListedEntry>,
        }
        self.call::<Out>("list_dir", json!({"path": path})).await.map(|o| o.entries)
    }

    pub async fn stat(&self, path: &LfnPath) -> GridResult<ListedEntry> {
        self.call("stat", json!({"path": path})).await
    }

    pub async fn write_check(&self, lfn: &LfnPath) -> GridResult<()> {
        self.call::<Value>("write_check", json!({"lfn": lfn})).await.map(|_| ())
    }

    pub async fn prepare_write(&self, lfn: &LfnPath) -> GridResult<Guid> {
        #[derive(serde::Deserialize)]
        struct Out {
            guid: Guid,
        }
        self.call::<Out>("prepare_write", json!({"lfn": lfn})).await.map(|o| o.guid)
    }

    pub async fn put_inline(&self, lfn: &LfnPath, content: &str, perms: Mode) -> GridResult<()> {
        self.call::<Value>("put_inline", json!({"lfn": lfn, "content": content, "perms": perms}))
            .await
            .map(|_| ())
    }

    pub async fn read_inline(&self, lfn: &LfnPath) -> GridResult<String> {
        #[derive(serde::Deserialize)]
        struct Out {
            content: String,
        }
        self.call::<Out>("read_inline", json!({"lfn": lfn})).await.map(|o| o.content)
    }

    pub async fn register_se(&self, name: &str, addr: &str, site: &str) -> GridResult<()> {
        self.call::<Value>("register_se", json!({"name": name, "addr": addr, "site": site}))
            .await
            .map(|_| ())
    }

    pub async fn lookup_se(&self, name: &str) -> GridResult<SeInfo> {
        self.call("lookup_se", json!({"name": name})).await
    }

    pub async fn list_se(&self) -> GridResult<Vec<SeInfo>> {
        #[derive(serde::Deserialize)]
        struct Out {
            ses: Vec<SeInfo>,
        }
        self.call::<Out>("list_se", json!({})).await.map(|o| o.ses)
    }
}
