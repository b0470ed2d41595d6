//! Topology file loading.
//!
//! ```toml
//! mode = "federated"
//!
//! [[node]]
//! node_id = "rabbit1"
//! host = "127.0.0.1"
//! port = 7101
//! bucket = 1
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NodeAddress, NodeDescriptor, NodeRegistry, RouterError, RoutingMode};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    #[serde(default)]
    pub mode: Option<RoutingMode>,
    #[serde(rename = "node", default)]
    pub nodes: Vec<TopologyEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyEntry {
    pub node_id: String,
    pub host: String,
    pub port: u16,
    pub bucket: usize,
}

impl TopologyFile {
    pub fn parse(text: &str) -> Result<Self, RouterError> {
        toml::from_str(text).map_err(|e| RouterError::InvalidTopology(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RouterError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RouterError::InvalidTopology(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn registry(&self) -> Result<NodeRegistry, RouterError> {
        NodeRegistry::from_descriptors(
            self.nodes
                .iter()
                .map(|e| NodeDescriptor {
                    node_id: e.node_id.clone(),
                    bucket: e.bucket,
                    address: NodeAddress::new(e.host.clone(), e.port),
                    alive: true,
                })
                .collect(),
        )
    }

    pub fn from_registry(mode: RoutingMode, registry: &NodeRegistry) -> Self {
        Self {
            mode: Some(mode),
            nodes: registry
                .nodes()
                .iter()
                .map(|n| TopologyEntry {
                    node_id: n.node_id.clone(),
                    host: n.address.host.clone(),
                    port: n.address.port,
                    bucket: n.bucket,
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("topology serializes")
    }
}
