//! Core domain types: logical paths, physical file names, principals and
//! permission bits.

use crate::error::{GridError, GridResult};
use serde::{Deserialize, Serialize};

/// Globally unique identifier labeling immutable file content.
pub type Guid = uuid::Uuid;

/// Maximum byte length of one path segment.
pub const MAX_SEGMENT_LEN: usize = 255;

/// A logical file name: an absolute path in the virtual directory tree.
///
/// The canonical text form is `/<seg>/<seg>/...` (just `/` for the root).
/// A `grid://` scheme prefix is accepted on input and stripped.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LfnPath {
    segments: Vec<String>,
}

impl LfnPath {
    pub fn root() -> LfnPath {
        LfnPath { segments: Vec::new() }
    }

    pub fn parse(text: &str) -> GridResult<LfnPath> {
        let text = text.strip_prefix("grid://").unwrap_or(text);
        if !text.starts_with('/') {
            return Err(GridError::bad_request(format!("path not absolute: {text:?}")));
        }
        let mut segments = Vec::new();
        for seg in text.split('/') {
            if seg.is_empty() {
                continue;
            }
            if seg == "." || seg == ".." {
                return Err(GridError::bad_request(format!("path contains {seg:?}")));
            }
            if seg.len() > MAX_SEGMENT_LEN {
                return Err(GridError::bad_request("path segment longer than 255 bytes"));
            }
            if seg.contains('\0') {
                return Err(GridError::bad_request("path segment contains NUL"));
            }
            segments.push(seg.to_string());
        }
        // Reject interior empty segments: "/a//b" was filtered above but is
        // not canonical input.  A lone trailing slash is tolerated.
        let canonical = if segments.is_empty() {
            "/".to_string()
        } else {
            format!("/{}", segments.join("/"))
        };
        if text != canonical && text.trim_end_matches('/') != canonical && !(text == "/" && canonical == "/") {
            return Err(GridError::bad_request(format!("non-canonical path: {text:?}")));
        }
        Ok(LfnPath { segments })
    }

    pub fn is_root(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn basename(&self) -> Option<&str> {
        self.segments.last().map(|s| s.as_str())
    }

    pub fn parent(&self) -> Option<LfnPath> {
        if self.segments.is_empty() {
            None
        } else {
            Some(LfnPath { segments: self.segments[..self.segments.len() - 1].to_vec() })
        }
    }

    pub fn child(&self, name: &str) -> GridResult<LfnPath> {
        if name.is_empty() || name.contains('/') || name.contains('\0') || name == "." || name == ".." {
            return Err(GridError::bad_request(format!("bad path segment {name:?}")));
        }
        if name.len() > MAX_SEGMENT_LEN {
            return Err(GridError::bad_request("path segment longer than 255 bytes"));
        }
        let mut segments = self.segments.clone();
        segments.push(name.to_string());
        Ok(LfnPath { segments })
    }

    /// Resolve `text` relative to `self`, with `.` and `..` handling.
    /// Used by the shell for `cd`-style navigation.
    pub fn join_relative(&self, text: &str) -> GridResult<LfnPath> {
        let text = text.strip_prefix("grid://").unwrap_or(text);
        let mut segments = if text.starts_with('/') { Vec::new() } else { self.segments.clone() };
        for seg in text.split('/') {
            match seg {
                "" | "." => {}
                ".." => {
                    segments.pop();
                }
                s => {
                    if s.len() > MAX_SEGMENT_LEN || s.contains('\0') {
                        return Err(GridError::bad_request("bad path segment"));
                    }
                    segments.push(s.to_string());
                }
            }
        }
        Ok(LfnPath { segments })
    }
}

impl std::fmt::Display for LfnPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.segments.is_empty() {
            f.write_str("/")
        } else {
            for seg in &self.segments {
                write!(f, "/{seg}")?;
            }
            Ok(())
        }
    }
}

impl std::str::FromStr for LfnPath {
    type Err = GridError;
    fn from_str(s: &str) -> GridResult<LfnPath> {
        LfnPath::parse(s)
    }
}

impl Serialize for LfnPath {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LfnPath {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        LfnPath::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A physical file name in URL form `protocol://host:port/direntry`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pfn {
    pub protocol: String,
    pub host: String,
    pub port: u16,
    pub direntry: String,
}

impl Pfn {
    pub fn new(protocol: &str, host: &str, port: u16, direntry: &str) -> Pfn {
        Pfn {
            protocol: protocol.to_string(),
            host: host.to_string(),
            port,
            direntry: direntry.trim_start_matches('/').to_string(),
        }
    }

    pub fn parse(text: &str) -> GridResult<Pfn> {
        let (protocol, rest) = text
            .split_once("://")
            .ok_or_else(|| GridError::bad_request(format!("pfn missing scheme: {text:?}")))?;
        let (hostport, direntry) = rest
            .split_once('/')
            .ok_or_else(|| GridError::bad_request(format!("pfn missing direntry: {text:?}")))?;
        let (host, port) = hostport
            .rsplit_once(':')
            .ok_or_else(|| GridError::bad_request(format!("pfn missing port: {text:?}")))?;
        let port: u16 = port
            .parse()
            .map_err(|_| GridError::bad_request(format!("bad pfn port in {text:?}")))?;
        if port == 0 {
            return Err(GridError::bad_request("pfn port must be 1-65535"));
        }
        if protocol.is_empty() || host.is_empty() {
            return Err(GridError::bad_request(format!("bad pfn {text:?}")));
        }
        Ok(Pfn {
            protocol: protocol.to_string(),
            host: host.to_string(),
            port,
            direntry: direntry.to_string(),
        })
    }

    /// The `host:port` endpoint text, which is also the service address of
    /// the storage element holding this file.
    pub fn endpoint(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

impl std::fmt::Display for Pfn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}://{}:{}/{}", self.protocol, self.host, self.port, self.direntry)
    }
}

impl Serialize for Pfn {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Pfn {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Pfn::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// The acting identity for an operation: a user plus their groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub user: String,
    pub groups: Vec<String>,
}

impl Principal {
    pub fn new(user: &str, groups: &[&str]) -> Principal {
        Principal { user: user.to_string(), groups: groups.iter().map(|g| g.to_string()).collect() }
    }

    /// Primary group: the first listed group, or the user name itself.
    pub fn primary_group(&self) -> &str {
        self.groups.first().map(|g| g.as_str()).unwrap_or(&self.user)
    }

    /// Parse an auth token of the form `user` or `user:g1,g2`.
    pub fn from_token(token: &str) -> GridResult<Principal> {
        let (user, groups) = match token.split_once(':') {
            Some((u, g)) => (u, g.split(',').filter(|s| !s.is_empty()).map(String::from).collect()),
            None => (token, Vec::new()),
        };
        if user.is_empty() {
            return Err(GridError::bad_request("empty user in auth token"));
        }
        Ok(Principal { user: user.to_string(), groups })
    }

    pub fn to_token(&self) -> String {
        if self.groups.is_empty() {
            self.user.clone()
        } else {
            format!("{}:{}", self.user, self.groups.join(","))
        }
    }
}

/// What an operation wants to do with an entry or directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
    Execute,
}

/// File open mode: arbitrary-position reads, or the streamed write-once
/// mode that only ever succeeds on a nonexistent LFN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenMode {
    Read,
    WriteOnce,
}

/// Unix-style owner/group/other permission bits, 9 bits total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mode(pub u16);

impl Mode {
    pub const fn new(bits: u16) -> Mode {
        Mode(bits & 0o777)
    }

    pub fn parse_octal(text: &str) -> GridResult<Mode> {
        let bits = u16::from_str_radix(text, 8)
            .map_err(|_| GridError::bad_request(format!("bad mode {text:?}")))?;
        if bits > 0o777 {
            return Err(GridError::bad_request(format!("mode out of range: {text:?}")));
        }
        Ok(Mode(bits))
    }

    pub fn octal(&self) -> String {
        format!("{:03o}", self.0)
    }

    /// Evaluate `who` against owner/group/other classes, unix style: the
    /// owner match consults the owner bits only, otherwise a group match
    /// consults the group bits only, otherwise the other bits apply.
    pub fn allows(&self, owner: &str, group: &str, who: &Principal, access: Access) -> bool {
        let shift = if who.user == owner {
            6
        } else if who.groups.iter().any(|g| g == group) {
            3
        } else {
            0
        };
        let bit = match access {
            Access::Read => 0o4,
            Access::Write => 0o2,
            Access::Execute => 0o1,
        };
        (self.0 >> shift) & bit != 0
    }

    /// Render as `rwxr-x---` style text.
    pub fn symbolic(&self) -> String {
        let mut s = String::with_capacity(9);
        for shift in [6u16, 3, 0] {
            let bits = (self.0 >> shift) & 0o7;
            s.push(if bits & 0o4 != 0 { 'r' } else { '-' });
            s.push(if bits & 0o2 != 0 { 'w' } else { '-' });
            s.push(if bits & 0o1 != 0 { 'x' } else { '-' });
        }
        s
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.octal())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Mode::parse_octal(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lfn_parse_canonical_round_trip() {
        for text in ["/", "/alice", "/alice/sim/run7", "/a/b/c"] {
            let p = LfnPath::parse(text).unwrap();
            assert_eq!(p.to_string(), text);
            assert_eq!(LfnPath::parse(&p.to_string()).unwrap(), p);
        }
    }

    #[test]
    fn lfn_accepts_grid_scheme_and_trailing_slash() {
        assert_eq!(LfnPath::parse("grid:///alice/sim").unwrap().to_string(), "/alice/sim");
        assert_eq!(LfnPath::parse("/alice/").unwrap().to_string(), "/alice");
    }

    #[test]
    fn lfn_rejects_bad_input() {
        for text in ["relative/path", "/a/../b", "/a/./b", "/a//b", ""] {
            assert!(LfnPath::parse(text).is_err(), "{text:?} should not parse");
        }
        let long = format!("/{}", "x".repeat(256));
        assert!(LfnPath::parse(&long).is_err());
    }

    #[test]
    fn lfn_parent_child() {
        let p = LfnPath::parse("/alice/sim").unwrap();
        assert_eq!(p.parent().unwrap().to_string(), "/alice");
        assert_eq!(p.child("f1").unwrap().to_string(), "/alice/sim/f1");
        assert!(LfnPath::root().parent().is_none());
    }

    #[test]
    fn join_relative_navigation() {
        let cwd = LfnPath::parse("/alice/sim").unwrap();
        assert_eq!(cwd.join_relative("..").unwrap().to_string(), "/alice");
        assert_eq!(cwd.join_relative("run/7").unwrap().to_string(), "/alice/sim/run/7");
        assert_eq!(cwd.join_relative("/bob").unwrap().to_string(), "/bob");
    }

    #[test]
    fn pfn_round_trip() {
        let text = "file://se1:7100/v0/ab/f1.guid";
        let pfn = Pfn::parse(text).unwrap();
        assert_eq!(pfn.protocol, "file");
        assert_eq!(pfn.host, "se1");
        assert_eq!(pfn.port, 7100);
        assert_eq!(pfn.direntry, "v0/ab/f1.guid");
        assert_eq!(pfn.to_string(), text);
    }

    #[test]
    fn pfn_rejects_bad_input() {
        for text in ["file://se1/x", "se1:7100/x", "file://se1:0/x", "file://:7100/x", "file://se1:7100"] {
            assert!(Pfn::parse(text).is_err(), "{text:?} should not parse");
        }
    }

    #[test]
    fn mode_octal_round_trip() {
        for text in ["755", "600", "000", "777"] {
            assert_eq!(Mode::parse_octal(text).unwrap().octal(), text);
        }
        assert!(Mode::parse_octal("1755").is_err());
    }

    #[test]
    fn mode_evaluation_order() {
        let m = Mode::new(0o075);
        let alice = Principal::new("alice", &["hi"]);
        // alice owns the entry: owner bits (0) apply even though group
        // and other bits would allow the access.
        assert!(!m.allows("alice", "hi", &alice, Access::Read));
        let bob = Principal::new("bob", &["hi"]);
        assert!(m.allows("alice", "hi", &bob, Access::Read));
        assert!(m.allows("alice", "hi", &bob, Access::Write));
        let eve = Principal::new("eve", &["lo"]);
        assert!(m.allows("alice", "hi", &eve, Access::Read));
        assert!(!m.allows("alice", "hi", &eve, Access::Write));
    }

    #[test]
    fn principal_token_round_trip() {
        let p = Principal::new("alice", &["alice", "ops"]);
        assert_eq!(Principal::from_token(&p.to_token()).unwrap(), p);
        assert_eq!(Principal::from_token("bob").unwrap(), Principal::new("bob", &[]));
        assert!(Principal::from_token("").is_err());
    }
}
