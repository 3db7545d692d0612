//! Gate-keeper selection logic: slave servers report load through the
//! monitoring path; the I/O gate keeper redirects each open to the
//! server with the lowest load score.

use crate::error::{GridError, GridResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Reports older than this (by ingest time) are ignored.
pub const STALENESS_WINDOW_MS: u64 = 10_000;

/// One monitoring report from a slave server.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadReport {
    pub server: String,
    pub open_connections: u64,
    pub bytes_per_second_recent: u64,
    /// Sender-side timestamp; freshness is judged by ingest time, so
    /// clock skew between nodes does not matter.
    pub timestamp: u64,
}

/// Latest report per slave, stamped with local ingest time.
#[derive(Default)]
pub struct LoadBoard {
    reports: BTreeMap<String, (LoadReport, u64)>,
}

impl LoadBoard {
    pub fn new() -> LoadBoard {
        LoadBoard::default()
    }

    pub fn ingest(&mut self, report: LoadReport, now_ms: u64) {
        self.reports.insert(report.server.clone(), (report, now_ms));
    }

    /// Fresh reports at `now_ms`, in address order.
    pub fn fresh(&self, now_ms: u64) -> Vec<&LoadReport> {
        self.reports
            .values()
            .filter(|(_, at)| now_ms.saturating_sub(*at) <= STALENESS_WINDOW_MS)
            .map(|(r, _)| r)
            .collect()
    }
}

/// Load score: open connections plus recent throughput normalized by
/// the per-connection rate limit (a zero limit drops the second term).
pub fn load_score(report: &LoadReport, rate_limit_bps: u64) -> f64 {
    let rate_term = if rate_limit_bps == 0 {
        0.0
    } else {
        report.bytes_per_second_recent as f64 / rate_limit_bps as f64
    };
    report.open_connections as f64 + rate_term
}

/// The slave with the lowest load score; ties break by address.
pub fn pick_io_slave(reports: &[&LoadReport], rate_limit_bps: u64) -> GridResult<String> {
    reports
        .iter()
        .map(|r| (load_score(r, rate_limit_bps), r.server.as_str()))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(b.1)))
        .map(|(_, addr)| addr.to_string())
        .ok_or_else(|| GridError::no_fresh_reports("no fresh load reports"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(server: &str, conns: u64, rate: u64) -> LoadReport {
        LoadReport {
            server: server.to_string(),
            open_connections: conns,
            bytes_per_second_recent: rate,
            timestamp: 0,
        }
    }

    #[test]
    fn lowest_connection_count_wins() {
        let a = report("a:1", 10, 0);
        let b = report("b:1", 2, 0);
        assert_eq!(pick_io_slave(&[&a, &b], 0).unwrap(), "b:1");
    }

    #[test]
    fn single_slave_is_picked() {
        let a = report("only:1", 99, 123);
        assert_eq!(pick_io_slave(&[&a], 1000).unwrap(), "only:1");
    }

    #[test]
    fn tie_breaks_lexicographically() {
        let a = report("zeta:1", 3, 0);
        let b = report("alpha:1", 3, 0);
        assert_eq!(pick_io_slave(&[&a, &b], 0).unwrap(), "alpha:1");
    }

    #[test]
    fn throughput_term_uses_rate_limit() {
        // a: 1 conn + 2.0 rate term; b: 2 conns + 0.5 rate term.
        let a = report("a:1", 1, 2_000_000);
        let b = report("b:1", 2, 500_000);
        assert_eq!(pick_io_slave(&[&a, &b], 1_000_000).unwrap(), "b:1");
        // Unlimited rate: connection counts dominate.
        assert_eq!(pick_io_slave(&[&a, &b], 0).unwrap(), "a:1");
    }

    #[test]
    fn empty_reports_is_an_error() {
        assert_eq!(pick_io_slave(&[], 0).unwrap_err().code.as_str(), "NoFreshReports");
    }

    #[test]
    fn staleness_window_filters_by_ingest_time() {
        let mut board = LoadBoard::new();
        board.ingest(report("a:1", 1, 0), 1_000);
        board.ingest(report("b:1", 2, 0), 12_000);
        let fresh: Vec<String> = board.fresh(12_500).iter().map(|r| r.server.clone()).collect();
        assert_eq!(fresh, vec!["b:1"]);
        // A newer report for the same server replaces the stale one.
        board.ingest(report("a:1", 5, 0), 12_600);
        assert_eq!(board.fresh(12_700).len(), 2);
    }
}
