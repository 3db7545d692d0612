//! The framed request/response protocol shared by all services.
//!
//! Each request is one frame whose body is JSON:
//! `{"op": <name>, "args": {...}, "auth": <token>}`.  Responses are
//! `{"ok": true, "value": ...}` or `{"ok": false, "error": <code>,
//! "msg": ...}`; a gatekeeper redirect uses the error code `Redirect`
//! plus an `addr` field.  Operations that move bulk data declare the
//! byte count in the JSON and send the bytes as one raw frame
//! immediately after.

use crate::error::{ErrorCode, GridError, GridResult};
use crate::net::{Conn, NetError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Request {
    pub op: String,
    #[serde(default)]
    pub args: serde_json::Value,
    #[serde(default)]
    pub auth: String,
}

impl Request {
    pub fn new(op: &str, args: impl Serialize, auth: &str) -> Request {
        Request {
            op: op.to_string(),
            args: serde_json::to_value(args).expect("request args serialize"),
            auth: auth.to_string(),
        }
    }

    pub fn parse_args<T: DeserializeOwned>(&self) -> GridResult<T> {
        serde_json::from_value(self.args.clone())
            .map_err(|e| GridError::bad_request(format!("bad args for {}: {e}", self.op)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub value: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg: Option<String>,
    /// Redirect target, present only with `error == "Redirect"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addr: Option<String>,
}

impl Response {
    pub fn ok(value: impl Serialize) -> Response {
        Response {
            ok: true,
            value: serde_json::to_value(value).expect("response value serializes"),
            error: None,
            msg: None,
            addr: None,
        }
    }

    pub fn unit() -> Response {
        Response::ok(serde_json::json!({}))
    }

    pub fn err(e: &GridError) -> Response {
        Response {
            ok: false,
            value: serde_json::Value::Null,
            error: Some(e.code.as_str().to_string()),
            msg: Some(e.msg.clone()),
            addr: None,
        }
    }

    pub fn redirect(addr: &str) -> Response {
        Response {
            ok: false,
            value: serde_json::Value::Null,
            error: Some(ErrorCode::Redirect.as_str().to_string()),
            msg: Some(format!("redirect to {addr}")),
            addr: Some(addr.to_string()),
        }
    }

    /// Convert into a typed value, surfacing wire errors as `GridError`.
    pub fn into_result<T: DeserializeOwned>(self) -> GridResult<T> {
        if self.ok {
            serde_json::from_value(self.value)
                .map_err(|e| GridError::bad_request(format!("bad response value: {e}")))
        } else {
            let code = self
                .error
                .as_deref()
                .and_then(ErrorCode::parse)
                .unwrap_or(ErrorCode::BadRequest);
            Err(GridError::new(code, self.msg.unwrap_or_default()))
        }
    }
}

pub fn encode<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("protocol message serializes")
}

pub fn decode_request(frame: &[u8]) -> GridResult<Request> {
    serde_json::from_slice(frame).map_err(|e| GridError::bad_request(format!("bad request frame: {e}")))
}

pub fn decode_response(frame: &[u8]) -> GridResult<Response> {
    serde_json::from_slice(frame).map_err(|e| GridError::bad_request(format!("bad response frame: {e}")))
}

pub fn net_to_grid(e: NetError) -> GridError {
    match e {
        NetError::Refused(addr) | NetError::NoRoute(addr) => {
            GridError::unreachable(format!("no path to {addr}"))
        }
        NetError::UnknownNode(n) => GridError::unreachable(format!("unknown node {n}")),
        other => GridError::transport_error(other.to_string()),
    }
}

/// Send one request frame and await the response frame.
pub async fn call(conn: &mut dyn Conn, req: &Request) -> GridResult<Response> {
    conn.send(&encode(req)).await.map_err(net_to_grid)?;
    let frame = conn
        .recv()
        .await
        .map_err(net_to_grid)?
        .ok_or_else(|| GridError::transport_error("connection closed mid-call"))?;
    decode_response(&frame)
}

/// As [`call`], for an operation whose response is followed by one raw
/// data frame of exactly `len` bytes (the `len` comes from the JSON).
pub async fn recv_data(conn: &mut dyn Conn, declared_len: u64) -> GridResult<Vec<u8>> {
    let data = conn
        .recv()
        .await
        .map_err(net_to_grid)?
        .ok_or_else(|| GridError::transport_error("connection closed before data frame"))?;
    if data.len() as u64 != declared_len {
        return Err(GridError::transport_error(format!(
            "data frame length {} != declared {}",
            data.len(),
            declared_len
        )));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip() {
        let req = Request::new("resolve", serde_json::json!({"lfn": "/a/f"}), "alice:alice");
        let back = decode_request(&encode(&req)).unwrap();
        assert_eq!(back.op, "resolve");
        assert_eq!(back.auth, "alice:alice");
        assert_eq!(back.args["lfn"], "/a/f");
    }

    #[test]
    fn response_error_carries_exact_code_name() {
        let resp = Response::err(&GridError::not_found("no such lfn"));
        let text = String::from_utf8(encode(&resp)).unwrap();
        assert!(text.contains("\"error\":\"NotFound\""), "{text}");
        let parsed: Response = decode_response(text.as_bytes()).unwrap();
        let err = parsed.into_result::<serde_json::Value>().unwrap_err();
        assert_eq!(err.code, ErrorCode::NotFound);
    }

    #[test]
    fn redirect_response_shape() {
        let resp = Response::redirect("slave2:7401");
        let v: serde_json::Value = serde_json::from_slice(&encode(&resp)).unwrap();
        assert_eq!(v["ok"], false);
        assert_eq!(v["error"], "Redirect");
        assert_eq!(v["addr"], "slave2:7401");
    }
}
