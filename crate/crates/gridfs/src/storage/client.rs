//! Storage element client.  Each client owns one connection, which is
//! also what scopes ownership of an in-flight write-once PFN.

use super::lvm::ResyncReport;
use super::service::SeInfoReply;
use crate::error::{GridError, GridResult};
use crate::net::{Conn, Net};
use crate::proto::{self, Request, Response};
use crate::types::{Guid, Pfn};
use serde_json::json;
use std::sync::Arc;

pub struct SeClient {
    conn: Box<dyn Conn>,
    auth: String,
}

impl SeClient {
    pub async fn connect(net: &Arc<dyn Net>, addr: &str, auth: &str) -> GridResult<SeClient> {
        let conn = net.dial(addr).await.map_err(proto::net_to_grid)?;
        Ok(SeClient { conn, auth: auth.to_string() })
    }

    async fn call(&mut self, op: &str, args: serde_json::Value) -> GridResult<Response> {
        proto::call(self.conn.as_mut(), &Request::new(op, args, &self.auth)).await
    }

    pub async fn ping(&mut self) -> GridResult<()> {
        self.call("ping", json!({})).await?.into_result::<serde_json::Value>().map(|_| ())
    }

    pub async fn se_info(&mut self) -> GridResult<SeInfoReply> {
        self.call("se_info", json!({})).await?.into_result()
    }

    pub async fn allocate(&mut self, size_hint: u64, guid: Guid) -> GridResult<(Pfn, String)> {
        #[derive(serde::Deserialize)]
        struct Out {
            pfn: Pfn,
            volume: String,
        }
        let out: Out = self
            .call("allocate", json!({"size_hint": size_hint, "guid": guid}))
            .await?
            .into_result()?;
        Ok((out.pfn, out.volume))
    }

    /// Stream one chunk at `offset`; the bytes travel as a raw frame
    /// right after the request frame.
    pub async fn write(&mut self, pfn: &Pfn, offset: u64, data: &[u8]) -> GridResult<u64> {
        let req = Request::new(
            "write",
            json!({"pfn": pfn, "offset": offset, "len": data.len() as u64}),
            &self.auth,
        );
        self.conn.send(&proto::encode(&req)).await.map_err(proto::net_to_grid)?;
        self.conn.send(data).await.map_err(proto::net_to_grid)?;
        let frame = self
            .conn
            .recv()
            .await
            .map_err(proto::net_to_grid)?
            .ok_or_else(|| GridError::transport_error("connection closed mid-write"))?;
        #[derive(serde::Deserialize)]
        struct Out {
            accepted: u64,
        }
        proto::decode_response(&frame)?.into_result::<Out>().map(|o| o.accepted)
    }

    pub async fn sync(&mut self, pfn: &Pfn) -> GridResult<()> {
        self.call("sync", json!({"pfn": pfn})).await?.into_result::<serde_json::Value>().map(|_| ())
    }

    pub async fn commit(&mut self, pfn: &Pfn, expected_size: u64) -> GridResult<u64> {
        #[derive(serde::Deserialize)]
        struct Out {
            size: u64,
        }
        self.call("commit", json!({"pfn": pfn, "expected_size": expected_size}))
            .await?
            .into_result::<Out>()
            .map(|o| o.size)
    }

    pub async fn abort(&mut self, pfn: &Pfn) -> GridResult<()> {
        self.call("abort", json!({"pfn": pfn})).await?.into_result::<serde_json::Value>().map(|_| ())
    }

    async fn recv_payload(&mut self, resp: Response) -> GridResult<Vec<u8>> {
        #[derive(serde::Deserialize)]
        struct Out {
            len: u64,
        }
        let out: Out = resp.into_result()?;
        proto::recv_data(self.conn.as_mut(), out.len).await
    }

    pub async fn fetch(&mut self, pfn: &Pfn, offset: u64, len: u64) -> GridResult<Vec<u8>> {
        let resp = self.call("fetch", json!({"pfn": pfn, "offset": offset, "len": len})).await?;
        self.recv_payload(resp).await
    }

    pub async fn fetch_whole(&mut self, pfn: &Pfn) -> GridResult<Vec<u8>> {
        let resp = self.call("whole", json!({"pfn": pfn})).await?;
        self.recv_payload(resp).await
    }

    pub async fn sizeof(&mut self, pfn: &Pfn) -> GridResult<u64> {
        #[derive(serde::Deserialize)]
        struct Out {
            size: u64,
        }
        self.call("sizeof", json!({"pfn": pfn})).await?.into_result::<Out>().map(|o| o.size)
    }

    pub async fn lslist(&mut self) -> GridResult<Vec<(String, u64)>> {
        #[derive(serde::Deserialize)]
        struct Out {
            files: Vec<(String, u64)>,
        }
        self.call("lslist", json!({})).await?.into_result::<Out>().map(|o| o.files)
    }

    pub async fn expire(&mut self, now_s: Option<u64>) -> GridResult<Vec<String>> {
        #[derive(serde::Deserialize)]
        struct Out {
            removed: Vec<String>,
        }
        self.call("expire", json!({"now_s": now_s})).await?.into_result::<Out>().map(|o| o.removed)
    }

    pub async fn resync(&mut self) -> GridResult<ResyncReport> {
        self.call("resync", json!({})).await?.into_result()
    }

    pub async fn rm_pfn(&mut self, pfn: &Pfn) -> GridResult<()> {
        self.call("rm_pfn", json!({"pfn": pfn})).await?.into_result::<serde_json::Value>().map(|_| ())
    }
}
