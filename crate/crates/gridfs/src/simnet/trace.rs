//! Event trace records and the determinism hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One recorded simulation event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Virtual time in milliseconds.
    pub t: u64,
    /// Global event sequence number.
    pub seq: u64,
    /// Event kind: send, deliver, drop, dial, dial-fail, listen,
    /// partition, heal.
    pub ev: String,
    pub from: String,
    pub to: String,
    pub len: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

/// SHA-256 over the JSON-line rendering of the trace.
pub fn hash(trace: &[TraceEvent]) -> String {
    let mut hasher = Sha256::new();
    for ev in trace {
        hasher.update(serde_json::to_string(ev).expect("trace event serializes"));
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}
