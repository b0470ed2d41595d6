//! Node selection for every request principal.
//!
//! In federated mode the principal's bucket picks the node, in clustered mode
//! a shared cursor round-robins across the fleet, and a single-node
//! deployment always answers with its only node.

mod hash;
pub mod topology;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hash::{compute_bucket, BucketHash, FirstCharHash};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouterError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("node not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("node unavailable: {0}")]
    NodeUnavailable(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    Single,
    Federated,
    Clustered,
}

impl fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoutingMode::Single => "single",
            RoutingMode::Federated => "federated",
            RoutingMode::Clustered => "clustered",
        })
    }
}

impl FromStr for RoutingMode {
    type Err = RouterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(RoutingMode::Single),
            "federated" => Ok(RoutingMode::Federated),
            "clustered" => Ok(RoutingMode::Clustered),
            other => Err(RouterError::InvalidArgument(format!(
                "unknown routing mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeAddress {
    pub host: String,
    pub port: u16,
}

impl NodeAddress {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self {
            host: host.into(),
            port,
        }
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: String,
    /// 1-based bucket index.
    pub bucket: usize,
    pub address: NodeAddress,
    pub alive: bool,
}

/// Ordered set of broker nodes whose buckets are exactly `1..=len`.
#[derive(Debug, Clone, Default)]
pub struct NodeRegistry {
    nodes: Vec<NodeDescriptor>,
}

impl NodeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a registry from descriptors carrying explicit buckets, as read
    /// from a topology file.
    pub fn from_descriptors(mut nodes: Vec<NodeDescriptor>) -> Result<Self, RouterError> {
        nodes.sort_by_key(|n| n.bucket);
        for (i, node) in nodes.iter().enumerate() {
            if node.bucket != i + 1 {
                return Err(RouterError::InvalidTopology(format!(
                    "buckets must be exactly 1..={} without duplicates (node {} has bucket {})",
                    nodes.len(),
                    node.node_id,
                    node.bucket
                )));
            }
        }
        let registry = Self { nodes };
        registry.check_unique()?;
        Ok(registry)
    }

    fn check_unique(&self) -> Result<(), RouterError> {
        for (i, a) in self.nodes.iter().enumerate() {
            for b in &self.nodes[i + 1..] {
                if a.node_id == b.node_id {
                    return Err(RouterError::Conflict(format!("duplicate node id {}", a.node_id)));
                }
                if a.address == b.address {
                    return Err(RouterError::Conflict(format!("duplicate address {}", a.address)));
                }
            }
        }
        Ok(())
    }

    /// Appends a node, assigning it the next bucket.
    pub fn register(
        &mut self,
        node_id: impl Into<String>,
        address: NodeAddress,
    ) -> Result<&NodeDescriptor, RouterError> {
        let node_id = node_id.into();
        if node_id.is_empty() {
            return Err(RouterError::InvalidArgument("node id must not be empty".into()));
        }
        if self.nodes.iter().any(|n| n.node_id == node_id) {
            return Err(RouterError::Conflict(format!("duplicate node id {node_id}")));
        }
        if self.nodes.iter().any(|n| n.address == address) {
            return Err(RouterError::Conflict(format!("duplicate address {address}")));
        }
        let bucket = self.nodes.len() + 1;
        self.nodes.push(NodeDescriptor {
            node_id,
            bucket,
            address,
            alive: true,
        });
        Ok(self.nodes.last().expect("just pushed"))
    }

    /// Removes a node and renumbers the remaining buckets contiguously.
    /// Resources homed on other nodes do not migrate.
    pub fn remove(&mut self, node_id: &str) -> Result<NodeDescriptor, RouterError> {
        let idx = self
            .nodes
            .iter()
            .position(|n| n.node_id == node_id)
            .ok_or_else(|| RouterError::NotFound(node_id.to_string()))?;
        let removed = self.nodes.remove(idx);
        for (i, node) in self.nodes.iter_mut().enumerate() {
            node.bucket = i + 1;
        }
        Ok(removed)
    }

    pub fn set_alive(&mut self, node_id: &str, alive: bool) -> Result<(), RouterError> {
        let node = self
            .nodes
            .iter_mut()
            .find(|n| n.node_id == node_id)
            .ok_or_else(|| RouterError::NotFound(node_id.to_string()))?;
        node.alive = alive;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeDescriptor] {
        &self.nodes
    }

    pub fn get(&self, node_id: &str) -> Option<&NodeDescriptor> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    pub fn by_bucket(&self, bucket: usize) -> Option<&NodeDescriptor> {
        bucket.checked_sub(1).and_then(|i| self.nodes.get(i))
    }

    pub fn buckets(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.bucket).collect()
    }
}

/// Resolves principals to broker nodes. Cheap to share behind an `Arc`.
#[derive(Debug)]
pub struct FederationRouter {
    mode: RoutingMode,
    registry: RwLock<NodeRegistry>,
    cursor: AtomicUsize,
    hash: Arc<dyn BucketHash>,
}

impl FederationRouter {
    pub fn new(mode: RoutingMode, registry: NodeRegistry) -> Result<Self, RouterError> {
        Self::with_hash(mode, registry, Arc::new(FirstCharHash))
    }

    pub fn with_hash(
        mode: RoutingMode,
        registry: NodeRegistry,
        hash: Arc<dyn BucketHash>,
    ) -> Result<Self, RouterError> {
        check_mode(mode, registry.len())?;
        Ok(Self {
            mode,
            registry: RwLock::new(registry),
            cursor: AtomicUsize::new(0),
            hash,
        })
    }

    pub fn mode(&self) -> RoutingMode {
        self.mode
    }

    pub fn registry(&self) -> NodeRegistry {
        self.registry.read().clone()
    }

    pub fn node_count(&self) -> usize {
        self.registry.read().len()
    }

    pub fn node(&self, node_id: &str) -> Option<NodeDescriptor> {
        self.registry.read().get(node_id).cloned()
    }

    pub fn register_node(
        &self,
        node_id: impl Into<String>,
        address: NodeAddress,
    ) -> Result<NodeDescriptor, RouterError> {
        let mut registry = self.registry.write();
        check_mode(self.mode, registry.len() + 1)?;
        registry.register(node_id, address).cloned()
    }

    pub fn remove_node(&self, node_id: &str) -> Result<NodeDescriptor, RouterError> {
        self.registry.write().remove(node_id)
    }

    pub fn set_alive(&self, node_id: &str, alive: bool) -> Result<(), RouterError> {
        self.registry.write().set_alive(node_id, alive)
    }

    /// The bucket a principal hashes to under the current topology.
    pub fn bucket_of(&self, principal: &str) -> Result<usize, RouterError> {
        let count = self.registry.read().len();
        self.hash.bucket(principal.as_bytes(), count)
    }

    pub fn resolve_node(&self, principal: &str) -> Result<NodeDescriptor, RouterError> {
        let registry = self.registry.read();
        if registry.is_empty() {
            return Err(RouterError::InvalidTopology("no broker nodes registered".into()));
        }
        let node = match self.mode {
            RoutingMode::Single => &registry.nodes()[0],
            RoutingMode::Federated => {
                let bucket = self.hash.bucket(principal.as_bytes(), registry.len())?;
                registry
                    .by_bucket(bucket)
                    .ok_or_else(|| RouterError::InvalidTopology(format!("no node for bucket {bucket}")))?
            }
            RoutingMode::Clustered => {
                let turn = self.cursor.fetch_add(1, Ordering::Relaxed);
                &registry.nodes()[turn % registry.len()]
            }
        };
        if !node.alive {
            return Err(RouterError::NodeUnavailable(node.node_id.clone()));
        }
        Ok(node.clone())
    }
}

fn check_mode(mode: RoutingMode, node_count: usize) -> Result<(), RouterError> {
    if mode == RoutingMode::Single && node_count > 1 {
        return Err(RouterError::InvalidTopology(format!(
            "single mode requires exactly one node, got {node_count}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry(n: usize) -> NodeRegistry {
        let mut r = NodeRegistry::new();
        for i in 1..=n {
            r.register(format!("rabbit{i}"), NodeAddress::new("127.0.0.1", 7000 + i as u16))
                .unwrap();
        }
        r
    }

    #[test]
    fn register_assigns_contiguous_buckets() {
        assert_eq!(registry(4).buckets(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn remove_renumbers() {
        let mut r = registry(3);
        let removed = r.remove("rabbit2").unwrap();
        assert_eq!(removed.bucket, 2);
        assert_eq!(r.buckets(), vec![1, 2]);
        assert_eq!(r.by_bucket(2).unwrap().node_id, "rabbit3");
    }

    #[test]
    fn remove_unknown_is_not_found() {
        let mut r = registry(2);
        assert!(matches!(r.remove("nope"), Err(RouterError::NotFound(_))));
    }

    #[test]
    fn duplicate_id_or_address_conflicts() {
        let mut r = registry(2);
        assert!(matches!(
            r.register("rabbit1", NodeAddress::new("10.0.0.1", 1)),
            Err(RouterError::Conflict(_))
        ));
        assert!(matches!(
            r.register("other", NodeAddress::new("127.0.0.1", 7001)),
            Err(RouterError::Conflict(_))
        ));
    }

    #[test]
    fn from_descriptors_requires_complete_buckets() {
        let mut nodes = registry(3).nodes().to_vec();
        nodes[2].bucket = 5;
        assert!(NodeRegistry::from_descriptors(nodes).is_err());
        let mut shuffled = registry(3).nodes().to_vec();
        shuffled.reverse();
        let r = NodeRegistry::from_descriptors(shuffled).unwrap();
        assert_eq!(r.nodes()[0].node_id, "rabbit1");
    }

    #[test]
    fn federated_resolves_by_bucket() {
        let router = FederationRouter::new(RoutingMode::Federated, registry(2)).unwrap();
        assert_eq!(router.resolve_node("alice").unwrap().bucket, 2);
        assert_eq!(router.resolve_node("bob").unwrap().bucket, 1);
        // stateless
        assert_eq!(router.resolve_node("alice").unwrap().bucket, 2);
    }

    #[test]
    fn single_mode_returns_sole_node() {
        let router = FederationRouter::new(RoutingMode::Single, registry(1)).unwrap();
        assert_eq!(router.resolve_node("anyone").unwrap().node_id, "rabbit1");
        assert!(FederationRouter::new(RoutingMode::Single, registry(2)).is_err());
        assert!(router
            .register_node("rabbit9", NodeAddress::new("h", 1))
            .is_err());
    }

    #[test]
    fn clustered_round_robins() {
        let router = FederationRouter::new(RoutingMode::Clustered, registry(2)).unwrap();
        assert_eq!(router.resolve_node("x").unwrap().bucket, 1);
        assert_eq!(router.resolve_node("x").unwrap().bucket, 2);
        assert_eq!(router.resolve_node("x").unwrap().bucket, 1);
    }

    #[test]
    fn clustered_visits_each_node_once_per_cycle() {
        let router = FederationRouter::new(RoutingMode::Clustered, registry(5)).unwrap();
        router.resolve_node("warm").unwrap();
        let mut seen: Vec<usize> = (0..5).map(|_| router.resolve_node("p").unwrap().bucket).collect();
        seen.sort();
        assert_eq!(seen, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn dead_node_is_unavailable() {
        let router = FederationRouter::new(RoutingMode::Federated, registry(2)).unwrap();
        router.set_alive("rabbit2", false).unwrap();
        assert!(matches!(
            router.resolve_node("alice"),
            Err(RouterError::NodeUnavailable(id)) if id == "rabbit2"
        ));
        assert!(router.resolve_node("bob").is_ok());
    }

    #[test]
    fn clustered_cursor_is_atomic_under_contention() {
        let router = Arc::new(FederationRouter::new(RoutingMode::Clustered, registry(4)).unwrap());
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let router = router.clone();
                std::thread::spawn(move || {
                    let mut counts = [0usize; 4];
                    for _ in 0..1000 {
                        counts[router.resolve_node("p").unwrap().bucket - 1] += 1;
                    }
                    counts
                })
            })
            .collect();
        let mut total = [0usize; 4];
        for h in handles {
            for (t, c) in total.iter_mut().zip(h.join().unwrap()) {
                *t += c;
            }
        }
        assert_eq!(total, [1000; 4]);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("FEDERATED".parse::<RoutingMode>().unwrap(), RoutingMode::Federated);
        assert!("mesh".parse::<RoutingMode>().is_err());
    }
}
