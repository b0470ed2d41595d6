//! Node configuration, loadable from TOML.
//!
//! ```toml
//! node_id = "rabbit1"
//! host = "127.0.0.1"
//! port = 7101
//! mode = "clustered"
//! system_key = "…"                # admin credential used for relays and peers
//! auth_url = "http://127.0.0.1:8080"  # gateway exposing /auth/*
//!
//! [[peer]]
//! node_id = "rabbit2"
//! address = "127.0.0.1:7102"
//! ```

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::message::DEFAULT_MAX_PAYLOAD;
use crate::router::RoutingMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerConfig {
    pub node_id: String,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShovelConfig {
    pub batch_size: usize,
    pub idle_sleep_ms: u64,
    /// Consecutive failures before a shovel is marked inactive.
    pub max_failures: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for ShovelConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            idle_sleep_ms: 10,
            max_failures: 5,
            backoff_base_ms: 10,
            backoff_max_ms: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeConfig {
    pub node_id: String,
    pub host: String,
    /// 0 picks an ephemeral port.
    pub port: u16,
    pub mode: RoutingMode,
    #[serde(rename = "peer")]
    pub peers: Vec<PeerConfig>,
    pub default_depth_limit: u64,
    pub archive_depth_limit: u64,
    pub max_payload: usize,
    pub system_key: String,
    pub auth_url: Option<String>,
    pub auth_cache_ttl_ms: u64,
    pub replicate_timeout_ms: u64,
    pub shovel: ShovelConfig,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            node_id: "rabbit1".into(),
            host: "127.0.0.1".into(),
            port: 0,
            mode: RoutingMode::Single,
            peers: Vec::new(),
            default_depth_limit: 100_000,
            archive_depth_limit: 10_000_000,
            max_payload: DEFAULT_MAX_PAYLOAD,
            system_key: String::new(),
            auth_url: None,
            auth_cache_ttl_ms: 5_000,
            replicate_timeout_ms: 2_000,
            shovel: ShovelConfig::default(),
        }
    }
}

impl NodeConfig {
    pub fn new(node_id: impl Into<String>, mode: RoutingMode, system_key: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            mode,
            system_key: system_key.into(),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn replicate_timeout(&self) -> Duration {
        Duration::from_millis(self.replicate_timeout_ms)
    }

    pub fn auth_cache_ttl(&self) -> Duration {
        Duration::from_millis(self.auth_cache_ttl_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults() {
        let cfg: NodeConfig = toml::from_str(
            r#"
node_id = "rabbit2"
port = 7102
mode = "clustered"
system_key = "k"

[[peer]]
node_id = "rabbit1"
address = "127.0.0.1:7101"

[shovel]
batch_size = 50
"#,
        )
        .unwrap();
        assert_eq!(cfg.mode, RoutingMode::Clustered);
        assert_eq!(cfg.peers.len(), 1);
        assert_eq!(cfg.shovel.batch_size, 50);
        assert_eq!(cfg.shovel.max_failures, 5);
        assert_eq!(cfg.max_payload, 1024 * 1024);
        assert_eq!(cfg.auth_cache_ttl(), Duration::from_secs(5));
    }
}
