//! Auth DB and authorisation backend.
//!
//! Holds providers, entities, salted API-key digests, follow requests and
//! time-limited permissions, and answers allow/deny for every gateway and
//! broker action. Every table is keyed so that each decision is a
//! single-record read.

pub mod backend;
pub mod keys;
mod snapshot;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Millis;
use crate::topic::RoutingPattern;

pub use keys::KeyDigest;
pub use store::{AuthConfig, AuthStore, BindingKey, BindingRecord, RelayKey, RelayRecord};

/// Queue receiving a copy of every publish on a node.
pub const ARCHIVE_QUEUE: &str = "archive";
/// Prefix reserved for staging queues and mirror exchanges.
pub const RESERVED_PREFIX: &str = "vm.";
pub const DEFAULT_VALIDITY_SECONDS: u64 = 604_800;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("unauthenticated")]
    Unauthenticated,
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("storage: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Publisher,
    Subscriber,
}

/// Authenticated identity behind an API key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Principal {
    Admin,
    Provider { id: String },
    Entity { id: String, owner: String, kind: EntityKind },
}

impl Principal {
    pub fn id(&self) -> &str {
        match self {
            Principal::Admin => "admin",
            Principal::Provider { id } | Principal::Entity { id, .. } => id,
        }
    }

    /// The id used for node selection: providers route on themselves,
    /// entities on their owning provider.
    pub fn routing_id(&self) -> &str {
        match self {
            Principal::Entity { owner, .. } => owner,
            other => other.id(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Resource {
    Exchange { name: String },
    Queue { name: String },
    Binding { exchange: String, queue: String, pattern: String },
    Admin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Declare,
    Delete,
    Publish,
    Consume,
    Bind,
    Unbind,
    Administer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Allow,
    Deny,
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

impl From<bool> for Decision {
    fn from(allow: bool) -> Self {
        if allow {
            Decision::Allow
        } else {
            Decision::Deny
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRecord {
    pub provider_id: String,
    pub api_key: KeyDigest,
    pub created_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub owner: String,
    pub kind: EntityKind,
    pub api_key: KeyDigest,
    pub catalogue_item: serde_json::Value,
    pub created_at: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FollowStatus {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowRequest {
    pub follow_id: String,
    pub subscriber_id: String,
    pub target_entity: String,
    /// Owner of `target_entity`, denormalised so provider listings need no join.
    pub target_owner: String,
    pub requested_pattern: RoutingPattern,
    pub status: FollowStatus,
    pub validity_seconds: u64,
    pub created_at: Millis,
    pub decided_at: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionRecord {
    pub subscriber_id: String,
    pub target_entity: String,
    pub routing_pattern: RoutingPattern,
    pub expires_at: Millis,
}

/// Row returned to a provider reviewing pending follows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowView {
    pub follow_id: String,
    pub subscriber_id: String,
    pub entity_id: String,
    pub pattern: String,
}

/// Entity and exchange/queue names share a namespace with broker internals.
pub fn validate_entity_id(id: &str) -> Result<(), AuthError> {
    if id.is_empty() || id.len() > 128 {
        return Err(AuthError::InvalidArgument(
            "id must be 1..=128 characters".into(),
        ));
    }
    if !id
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | ':' | '/'))
    {
        return Err(AuthError::InvalidArgument(format!(
            "id {id:?} contains characters outside [A-Za-z0-9-_.:/]"
        )));
    }
    if id == ARCHIVE_QUEUE || id.starts_with(RESERVED_PREFIX) {
        return Err(AuthError::InvalidArgument(format!("id {id:?} is reserved")));
    }
    Ok(())
}
