//! Standalone message-broker node.
//!
//! A node owns exchanges, queues and bindings, serves the framed protocol in
//! [`protocol`] over TCP, runs shovel relays toward other nodes and, in
//! clustered mode, replicates exchange and binding metadata to its peers
//! while keeping each queue on the node that created it.

mod cluster;
mod client;
pub mod config;
pub mod message;
mod node;
pub mod protocol;
mod queue;
mod server;
mod shovel;

use thiserror::Error;

pub use client::BrokerClient;
pub use config::{NodeConfig, PeerConfig, ShovelConfig};
pub use message::{Binding, Message, MetadataEvent, NodeStats, QueueInfo, ShovelSpec, ShovelStatus};
pub use node::BrokerNode;
pub use server::{BrokerServer, ServerHandle};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrokerError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("payload too large: {0}")]
    PayloadTooLarge(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("peer timeout: {0}")]
    PeerTimeout(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unauthenticated: {0}")]
    Unauthenticated(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl BrokerError {
    pub fn code(&self) -> u8 {
        match self {
            BrokerError::NotFound(_) => 1,
            BrokerError::Conflict(_) => 2,
            BrokerError::AccessDenied(_) => 3,
            BrokerError::PayloadTooLarge(_) => 4,
            BrokerError::InvalidArgument(_) => 5,
            BrokerError::PeerTimeout(_) => 6,
            BrokerError::Unavailable(_) => 7,
            BrokerError::Protocol(_) => 8,
            BrokerError::Unauthenticated(_) => 9,
            BrokerError::Internal(_) => 10,
        }
    }

    pub fn detail(&self) -> String {
        match self {
            BrokerError::NotFound(s)
            | BrokerError::Conflict(s)
            | BrokerError::AccessDenied(s)
            | BrokerError::PayloadTooLarge(s)
            | BrokerError::InvalidArgument(s)
            | BrokerError::PeerTimeout(s)
            | BrokerError::Unavailable(s)
            | BrokerError::Protocol(s)
            | BrokerError::Unauthenticated(s)
            | BrokerError::Internal(s) => s.clone(),
        }
    }

    pub fn from_code(code: u8, detail: String) -> Self {
        match code {
            1 => BrokerError::NotFound(detail),
            2 => BrokerError::Conflict(detail),
            3 => BrokerError::AccessDenied(detail),
            4 => BrokerError::PayloadTooLarge(detail),
            5 => BrokerError::InvalidArgument(detail),
            6 => BrokerError::PeerTimeout(detail),
            7 => BrokerError::Unavailable(detail),
            8 => BrokerError::Protocol(detail),
            9 => BrokerError::Unauthenticated(detail),
            _ => BrokerError::Internal(detail),
        }
    }

    /// True when the failure came from the transport rather than the node.
    pub fn is_transport(&self) -> bool {
        matches!(self, BrokerError::Unavailable(_) | BrokerError::Protocol(_))
    }
}

impl From<std::io::Error> for BrokerError {
    fn from(e: std::io::Error) -> Self {
        BrokerError::Unavailable(e.to_string())
    }
}
