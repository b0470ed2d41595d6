use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::profile::LoadProfile;
use super::report::{median, ThroughputReport};
use super::runner::{run_load, LoadError};
use crate::router::RoutingMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePair {
    pub federated: ThroughputReport,
    pub clustered: ThroughputReport,
}

impl ModePair {
    /// Federated over clustered throughput.
    pub fn ratio(&self) -> f64 {
        if self.clustered.mean_rps == 0.0 {
            return f64::INFINITY;
        }
        self.federated.mean_rps / self.clustered.mean_rps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub pairs: Vec<ModePair>,
}

impl ModeComparison {
    pub fn federated_median(&self) -> f64 {
        median(&self.pairs.iter().map(|p| p.federated.mean_rps).collect::<Vec<_>>())
    }

    pub fn clustered_median(&self) -> f64 {
        median(&self.pairs.iter().map(|p| p.clustered.mean_rps).collect::<Vec<_>>())
    }

    pub fn median_ratio(&self) -> f64 {
        median(&self.pairs.iter().map(ModePair::ratio).collect::<Vec<_>>())
    }

    /// Pairs in which federated beat clustered.
    pub fn federated_wins(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.federated.mean_rps > p.clustered.mean_rps)
            .count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("pair\tfederated_rps\tclustered_rps\tratio\n");
        for (i, p) in self.pairs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{:.1}\t{:.1}\t{:.3}",
                i + 1,
                p.federated.mean_rps,
                p.clustered.mean_rps,
                p.ratio()
            );
        }
        let _ = writeln!(
            s,
            "median\t{:.1}\t{:.1}\t{:.3}\nfederated ahead in {}/{} pairs",
            self.federated_median(),
            self.clustered_median(),
            self.median_ratio(),
            self.federated_wins(),
            self.pairs.len()
        );
        s
    }
}

/// Runs the profile under federated and clustered routing, `pairs` times,
/// each run on a fresh deployment with the same seed. The order within a
/// pair alternates so neither mode always runs first.
pub async fn compare_modes(profile: &LoadProfile, pairs: usize) -> Result<ModeComparison, LoadError> {
    let federated = LoadProfile { mode: RoutingMode::Federated, ..profile.clone() };
    let clustered = LoadProfile { mode: RoutingMode::Clustered, ..profile.clone() };
    let mut out = Vec::new();
    for i in 0..pairs.max(1) {
        let pair = if i % 2 == 0 {
            let f = run_load(&federated).await?;
            ModePair { federated: f, clustered: run_load(&clustered).await? }
        } else {
            let c = run_load(&clustered).await?;
            ModePair { federated: run_load(&federated).await?, clustered: c }
        };
        out.push(pair);
    }
    Ok(ModeComparison { pairs: out })
}
