use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::router::RoutingMode;

/// Payload size of the paper-style small message.
pub const SMALL_PAYLOAD: usize = 220;
pub const LARGE_PAYLOAD: usize = 10 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub producers: usize,
    pub messages_per_producer: usize,
    /// 0 gives the idealistic test; otherwise consumers drain concurrently.
    pub consumers: usize,
    pub payload_bytes: usize,
    pub mode: RoutingMode,
    pub node_count: usize,
    pub gateways: usize,
    #[serde(with = "millis")]
    pub warmup: Duration,
    pub seed: u64,
    /// Upper bound on `consumers / producers`.
    pub max_consumer_factor: usize,
    pub subscribe_batch: u32,
}

impl Default for LoadProfile {
    fn default() -> Self {
        Self {
            producers: 10,
            messages_per_producer: 100,
            consumers: 0,
            payload_bytes: SMALL_PAYLOAD,
            mode: RoutingMode::Federated,
            node_count: 1,
            gateways: 1,
            warmup: Duration::from_secs(5),
            seed: 1,
            max_consumer_factor: 1,
            subscribe_batch: 100,
        }
    }
}

impl LoadProfile {
    pub fn validate(&self) -> Result<(), String> {
        if self.producers == 0 || self.messages_per_producer == 0 || self.node_count == 0 || self.gateways == 0 {
            return Err("producers, messages, nodes and gateways must be positive".into());
        }
        if self.payload_bytes == 0 || self.subscribe_batch == 0 {
            return Err("payload size and subscribe batch must be positive".into());
        }
        if self.consumers > self.producers * self.max_consumer_factor.max(1) {
            return Err(format!(
                "{} consumers exceeds {} x {} producers",
                self.consumers, self.max_consumer_factor, self.producers
            ));
        }
        if self.mode == RoutingMode::Single && self.node_count != 1 {
            return Err("single mode runs exactly one node".into());
        }
        Ok(())
    }

    pub fn total_messages(&self) -> u64 {
        (self.producers * self.messages_per_producer) as u64
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
