//! Client side of the cache-and-forward protocol: opens a session at
//! the first route hop, transparently following gatekeeper redirects
//! (each address visited at most once, bounded by [`MAX_REDIRECTS`]).

use super::gatekeeper::LoadReport;
use super::pages::AccessKind;
use super::route::{AccessTicket, EncryptionKind};
use crate::error::{GridError, GridResult};
use crate::net::{Conn, Net};
use crate::proto::{self, Request, Response};
use crate::types::{Guid, OpenMode};
use serde_json::json;
use std::collections::BTreeSet;
use std::sync::Arc;

pub const MAX_REDIRECTS: usize = 4;

pub struct AiodSession {
    conn: Box<dyn Conn>,
    session: u64,
    pub page_size: u64,
    pub file_size: u64,
    pub addr: String,
    encryption: EncryptionKind,
    auth: String,
}

/// Open a session at the route's first hop, following redirects.
pub async fn open_session(
    net: &Arc<dyn Net>,
    ticket: &AccessTicket,
    mode: OpenMode,
    access: AccessKind,
    page_size: Option<u64>,
    auth: &str,
) -> GridResult<AiodSession> {
    let mut ticket = ticket.clone();
    let mut visited = BTreeSet::new();
    for _hop in 0..=MAX_REDIRECTS {
        let addr = ticket.route.first().to_string();
        if !visited.insert(addr.clone()) {
            return Err(GridError::transport_error(format!("redirect cycle through {addr}")));
        }
        let mut conn = net.dial(&addr).await.map_err(proto::net_to_grid)?;
        let req = Request::new(
            "OPEN",
            json!({"ticket": ticket, "mode": mode, "access": access, "page_size": page_size}),
            auth,
        );
        let resp = proto::call(conn.as_mut(), &req).await?;
        if resp.ok {
            #[derive(serde::Deserialize)]
            struct Out {
                session: u64,
                page_size: u64,
                file_size: u64,
            }
            let out: Out = resp.into_result()?;
            return Ok(AiodSession {
                conn,
                session: out.session,
                page_size: out.page_size,
                file_size: out.file_size,
                addr,
                encryption: ticket.encryption,
                auth: auth.to_string(),
            });
        }
        if resp.error.as_deref() == Some("Redirect") {
            let next = resp
                .addr
                .clone()
                .ok_or_else(|| GridError::transport_error("redirect without address"))?;
            ticket.route = ticket.route.with_first(&next)?;
            continue;
        }
        return Err(resp.into_result::<serde_json::Value>().unwrap_err());
    }
    Err(GridError::unreachable(format!("more than {MAX_REDIRECTS} redirects")))
}

impl AiodSession {
    async fn call(&mut self, op: &str, args: serde_json::Value) -> GridResult<Response> {
        proto::call(self.conn.as_mut(), &Request::new(op, args, &self.auth)).await
    }

    pub async fn read(&mut self, offset: u64, size: u64) -> GridResult<Vec<u8>> {
        let resp = self
            .call("READ", json!({"session": self.session, "offset": offset, "size": size}))
            .await?;
        #[derive(serde::Deserialize)]
        struct Out {
            len: u64,
        }
        let out: Out = resp.into_result()?;
        let data = proto::recv_data(self.conn.as_mut(), out.len).await?;
        Ok(self.encryption.decode(data))
    }

    pub async fn write(&mut self, offset: u64, data: &[u8]) -> GridResult<u64> {
        let req = Request::new(
            "WRITE",
            json!({"session": self.session, "offset": offset, "len": data.len() as u64}),
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

    pub async fn close(&mut self, total_size: Option<u64>) -> GridResult<()> {
        self.call("CLOSE", json!({"session": self.session, "total_size": total_size}))
            .await?
            .into_result::<serde_json::Value>()
            .map(|_| ())
    }

    pub async fn sync(&mut self) -> GridResult<()> {
        self.call("SYNC", json!({"session": self.session}))
            .await?
            .into_result::<serde_json::Value>()
            .map(|_| ())
    }

    pub async fn preload(&mut self, ranges: &[(u64, u64)]) -> GridResult<u64> {
        let resp = self
            .call("PRELOAD", json!({"session": self.session, "ranges": ranges}))
            .await?;
        #[derive(serde::Deserialize)]
        struct Out {
            scheduled: u64,
        }
        resp.into_result::<Out>().map(|o| o.scheduled)
    }
}

/// Ask one server (gatekeeper or slave) which address holds a GUID.
pub async fn locate_guid(
    net: &Arc<dyn Net>,
    addr: &str,
    guid: &Guid,
    auth: &str,
) -> GridResult<Option<String>> {
    let mut conn = net.dial(addr).await.map_err(proto::net_to_grid)?;
    let resp =
        proto::call(conn.as_mut(), &Request::new("LOCATE_GUID", json!({"guid": guid}), auth)).await?;
    #[derive(serde::Deserialize)]
    struct Out {
        addr: Option<String>,
    }
    resp.into_result::<Out>().map(|o| o.addr)
}

pub async fn send_load_report(
    net: &Arc<dyn Net>,
    to: &str,
    report: &LoadReport,
    auth: &str,
) -> GridResult<()> {
    let mut conn = net.dial(to).await.map_err(proto::net_to_grid)?;
    proto::call(conn.as_mut(), &Request::new("LOAD_REPORT", json!({"report": report}), auth))
        .await?
        .into_result::<serde_json::Value>()
        .map(|_| ())
}

#[derive(Debug, Clone, serde::Deserialize)]
pub struct AiodStats {
    pub hits: u64,
    pub misses: u64,
    pub next_hop_fetches: u64,
    pub cached_bytes: u64,
    pub open_connections: u64,
}

pub async fn fetch_stats(net: &Arc<dyn Net>, addr: &str, auth: &str) -> GridResult<AiodStats> {
    let mut conn = net.dial(addr).await.map_err(proto::net_to_grid)?;
    proto::call(conn.as_mut(), &Request::new("STATS", json!({}), auth)).await?.into_result()
}
