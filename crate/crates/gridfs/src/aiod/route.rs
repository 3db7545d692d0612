//! Route chains and access tickets for the cache-and-forward servers.

use crate::error::{GridError, GridResult};
use crate::types::{Guid, LfnPath, Pfn};
use serde::{Deserialize, Serialize};

/// Ordered forwarding path of cache servers, client-nearest hop first;
/// text form `host1@host2@host3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteChain {
    pub hops: Vec<String>,
}

impl RouteChain {
    pub fn new(hops: &[&str]) -> GridResult<RouteChain> {
        Self::from_hops(hops.iter().map(|s| s.to_string()).collect())
    }

    pub fn from_hops(hops: Vec<String>) -> GridResult<RouteChain> {
        if hops.is_empty() {
            return Err(GridError::bad_request("a route needs at least one hop"));
        }
        if hops.iter().any(|h| h.is_empty() || h.contains('@')) {
            return Err(GridError::bad_request("bad hop in route"));
        }
        if hops.windows(2).any(|w| w[0] == w[1]) {
            return Err(GridError::bad_request("route repeats adjacent hops"));
        }
        Ok(RouteChain { hops })
    }

    pub fn parse(text: &str) -> GridResult<RouteChain> {
        Self::from_hops(text.split('@').map(String::from).collect())
    }

    pub fn first(&self) -> &str {
        &self.hops[0]
    }

    /// The chain seen by the next hop, if any.
    pub fn rest(&self) -> Option<RouteChain> {
        if self.hops.len() > 1 {
            Some(RouteChain { hops: self.hops[1..].to_vec() })
        } else {
            None
        }
    }

    /// Replace the first hop (after a gatekeeper redirect).
    pub fn with_first(&self, addr: &str) -> GridResult<RouteChain> {
        let mut hops = self.hops.clone();
        hops[0] = addr.to_string();
        Self::from_hops(hops)
    }
}

impl std::fmt::Display for RouteChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.hops.join("@"))
    }
}

impl Serialize for RouteChain {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RouteChain {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        RouteChain::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Per-page payload transform negotiated at open; the envelope
/// encryption hook.  Only the identity transform ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncryptionKind {
    #[default]
    None,
    Stub,
}

impl EncryptionKind {
    pub fn encode(&self, page: Vec<u8>) -> Vec<u8> {
        match self {
            EncryptionKind::None | EncryptionKind::Stub => page,
        }
    }

    pub fn decode(&self, page: Vec<u8>) -> Vec<u8> {
        match self {
            EncryptionKind::None | EncryptionKind::Stub => page,
        }
    }
}

/// Everything a client presents to an `aiod` server at open, validated
/// server-side against the catalogue before any byte moves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccessTicket {
    pub route: RouteChain,
    pub grid_user: String,
    /// Catalogue path of the user's credential virtual file.
    pub credential_ref: LfnPath,
    pub lfn: LfnPath,
    pub pfn: Pfn,
    pub guid: Guid,
    #[serde(default)]
    pub encryption: EncryptionKind,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_parse_serialize_identity() {
        for text in ["h1", "h1@h2", "h1@h2@h3"] {
            let r = RouteChain::parse(text).unwrap();
            assert_eq!(r.to_string(), text);
        }
    }

    #[test]
    fn route_rejects_bad_input() {
        for text in ["", "@", "a@", "a@@b", "a@a", "x@y@y"] {
            assert!(RouteChain::parse(text).is_err(), "{text:?} must not parse");
        }
        // Non-adjacent repeats are a legal (if odd) route.
        assert!(RouteChain::parse("a@b@a").is_ok());
    }

    #[test]
    fn route_rest_walks_the_chain() {
        let r = RouteChain::parse("h1@h2@h3").unwrap();
        let rest = r.rest().unwrap();
        assert_eq!(rest.to_string(), "h2@h3");
        assert_eq!(rest.rest().unwrap().to_string(), "h3");
        assert!(rest.rest().unwrap().rest().is_none());
    }
}
