use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::profile::LoadProfile;
use crate::router::RoutingMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeOccupancy {
    pub node_id: String,
    pub bucket: usize,
    /// Producers the federation hash assigns to this node; `None` in
    /// clustered mode, where requests rotate over all nodes.
    pub predicted_producers: Option<usize>,
    /// Publish requests the node itself counted, when reachable.
    pub published: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcurrencySample {
    pub at_ms: u64,
    pub active_producers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub mode: RoutingMode,
    pub profile: LoadProfile,
    pub wall_seconds: f64,
    /// Length of the window after warm-up used for the mean.
    pub measured_seconds: f64,
    /// True when no request completed after the warm-up and the whole run
    /// was measured instead.
    pub warmup_skipped: bool,
    pub requests_ok: u64,
    pub requests_failed: u64,
    pub failures_by_status: BTreeMap<String, u64>,
    pub mean_rps: f64,
    pub median_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub messages_received: u64,
    pub bucket_occupancy: Vec<NodeOccupancy>,
    pub concurrency: Vec<ConcurrencySample>,
}

impl ThroughputReport {
    pub fn total_issued(&self) -> u64 {
        self.requests_ok + self.requests_failed
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_text(&self) -> String {
        let p = &self.profile;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "mode={} nodes={} producers={} messages/producer={} consumers={} payload={}B",
            self.mode, p.node_count, p.producers, p.messages_per_producer, p.consumers, p.payload_bytes
        );
        let _ = writeln!(
            s,
            "wall {:.2}s  measured {:.2}s{}  ok {}  failed {}",
            self.wall_seconds,
            self.measured_seconds,
            if self.warmup_skipped { " (no warm-up)" } else { "" },
            self.requests_ok,
            self.requests_failed
        );
        let _ = writeln!(
            s,
            "throughput {:.1} req/s  median {:.3} ms  p99 {:.3} ms  received {}",
            self.mean_rps, self.median_latency_ms, self.p99_latency_ms, self.messages_received
        );
        for (status, n) in &self.failures_by_status {
            let _ = writeln!(s, "  failures {status}: {n}");
        }
        for n in &self.bucket_occupancy {
            let published = n.published.map_or("-".to_string(), |v| v.to_string());
            let predicted = n.predicted_producers.map_or("-".to_string(), |v| v.to_string());
            let _ = writeln!(
                s,
                "  {} bucket {} producers {} published {}",
                n.node_id, n.bucket, predicted, published
            );
        }
        s
    }

    pub const TABLE_HEADER: &'static str =
        "mode\tnodes\tproducers\tmessages\tconsumers\tpayload\tok\tfailed\trps\tmedian_ms\tp99_ms\twall_s";

    pub fn table_row(&self) -> String {
        let p = &self.profile;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.1}\t{:.3}\t{:.3}\t{:.2}",
            self.mode,
            p.node_count,
            p.producers,
            p.messages_per_producer,
            p.consumers,
            p.payload_bytes,
            self.requests_ok,
            self.requests_failed,
            self.mean_rps,
            self.median_latency_ms,
            self.p99_latency_ms,
            self.wall_seconds
        )
    }
}

/// Renders reports as a tab-separated table with a header row.
pub fn table(reports: &[ThroughputReport]) -> String {
    let mut s = String::from(ThroughputReport::TABLE_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.table_row());
        s.push('\n');
    }
    s
}

/// Nearest-rank percentile of an ascending slice, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 50.0);
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
        assert_eq!(percentile(&[], 0.5), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
