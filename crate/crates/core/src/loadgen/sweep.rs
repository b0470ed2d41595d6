use super::profile::LoadProfile;
use super::report::ThroughputReport;
use super::runner::{run_load, LoadError};

/// One report per payload size, otherwise identical profiles.
pub async fn payload_sweep(profile: &LoadProfile, sizes: &[usize]) -> Result<Vec<ThroughputReport>, LoadError> {
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        out.push(run_load(&LoadProfile { payload_bytes: size, ..profile.clone() }).await?);
    }
    Ok(out)
}
