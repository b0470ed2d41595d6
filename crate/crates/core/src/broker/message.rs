use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::clock::Millis;

/// Default ceiling on a single payload.
pub const DEFAULT_MAX_PAYLOAD: usize = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    /// Exchange the message was originally published to.
    pub exchange: String,
    pub routing_key: String,
    pub payload: Bytes,
    pub timestamp: Millis,
    pub publisher_id: String,
}

impl Message {
    pub fn new(
        exchange: impl Into<String>,
        routing_key: impl Into<String>,
        payload: impl Into<Bytes>,
        timestamp: Millis,
        publisher_id: impl Into<String>,
    ) -> Self {
        Self {
            exchange: exchange.into(),
            routing_key: routing_key.into(),
            payload: payload.into(),
            timestamp,
            publisher_id: publisher_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub exchange: String,
    pub queue: String,
    pub pattern: String,
    pub expires_at: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShovelSpec {
    pub source_queue: String,
    pub dest_node: String,
    /// `host:port` of the destination node.
    pub dest_address: String,
    pub dest_exchange: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShovelStatus {
    pub shovel_id: String,
    pub source_node: String,
    pub source_queue: String,
    pub dest_node: String,
    pub dest_exchange: String,
    pub active: bool,
    pub relayed: u64,
    pub consecutive_failures: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub node_id: String,
    /// Publish requests accepted on this node.
    pub published: u64,
    /// Copies enqueued into subscriber queues (archive excluded).
    pub enqueued: u64,
    pub dropped: u64,
    pub exchanges: u64,
    pub queues: u64,
    pub archive_depth: u64,
    pub auth_checks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueInfo {
    pub name: String,
    pub home_node: String,
    pub depth: u64,
    pub depth_limit: u64,
    pub dropped: u64,
}

/// Exchange and binding changes replicated across a clustered fleet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetadataEvent {
    ExchangeDeclared { name: String },
    ExchangeDeleted { name: String },
    QueueDeclared { name: String, home_node: String, depth_limit: u64 },
    QueueDeleted { name: String },
    BindingAdded(Binding),
    BindingRemoved { exchange: String, queue: String, pattern: String },
}

impl MetadataEvent {
    /// The event undoing this one, used to roll back partial replication.
    /// Deletions have no inverse.
    pub fn inverse(&self) -> Option<MetadataEvent> {
        match self {
            MetadataEvent::ExchangeDeclared { name } => {
                Some(MetadataEvent::ExchangeDeleted { name: name.clone() })
            }
            MetadataEvent::QueueDeclared { name, .. } => {
                Some(MetadataEvent::QueueDeleted { name: name.clone() })
            }
            MetadataEvent::BindingAdded(b) => Some(MetadataEvent::BindingRemoved {
                exchange: b.exchange.clone(),
                queue: b.queue.clone(),
                pattern: b.pattern.clone(),
            }),
            _ => None,
        }
    }
}
