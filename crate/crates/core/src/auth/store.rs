use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::keys::{self, KeyDigest};
use super::snapshot;
use super::{
    validate_entity_id, Action, AuthError, Decision, EntityKind, EntityRecord, FollowRequest,
    FollowStatus, FollowView, PermissionRecord, Principal, ProviderRecord, Resource,
    DEFAULT_VALIDITY_SECONDS,
};
use crate::clock::{Millis, SharedClock};
use crate::topic::RoutingPattern;

#[derive(Debug, Clone)]
pub struct AuthConfig {
    pub admin_key: String,
    pub key_iterations: u32,
    /// Snapshot directory; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub default_validity_seconds: u64,
    /// How long a verified key stays in the in-memory verification cache.
    pub verify_cache_ttl: Duration,
}

impl AuthConfig {
    pub fn new(admin_key: impl Into<String>) -> Self {
        Self {
            admin_key: admin_key.into(),
            key_iterations: keys::DEFAULT_ITERATIONS,
            data_dir: None,
            default_validity_seconds: DEFAULT_VALIDITY_SECONDS,
            verify_cache_ttl: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BindingKey {
    pub subscriber_id: String,
    pub exchange: String,
    pub pattern: String,
}

/// A live subscriber binding and where its pieces live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingRecord {
    pub key: BindingKey,
    pub publisher_node: String,
    pub subscriber_node: String,
    /// Set when delivery crosses nodes through a relay chain.
    pub relay: Option<RelayKey>,
    pub created_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelayKey {
    pub exchange: String,
    pub dest_node: String,
}

/// Cross-node relay chain: staging queue on the publisher's node, a shovel,
/// and a mirror exchange on the subscriber's node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayRecord {
    pub key: RelayKey,
    pub source_node: String,
    pub staging_queue: String,
    pub mirror_exchange: String,
    pub shovel_id: String,
    /// Staging bindings on the publisher exchange, counted per pattern.
    pub pattern_refs: BTreeMap<String, u32>,
    pub dependents: BTreeSet<BindingKey>,
}

#[derive(Debug, Clone)]
enum KeyOwner {
    Provider(String),
    Entity(String),
}

#[derive(Debug)]
pub struct AuthStore {
    config: AuthConfig,
    clock: SharedClock,
    admin: KeyDigest,
    providers: RwLock<HashMap<String, ProviderRecord>>,
    entities: RwLock<HashMap<String, EntityRecord>>,
    key_index: RwLock<HashMap<String, Vec<KeyOwner>>>,
    follows: RwLock<HashMap<String, FollowRequest>>,
    permissions: RwLock<HashMap<(String, String), Vec<PermissionRecord>>>,
    bindings: RwLock<BTreeMap<BindingKey, BindingRecord>>,
    relays: RwLock<BTreeMap<RelayKey, RelayRecord>>,
    relay_locks: Mutex<HashMap<RelayKey, Arc<tokio::sync::Mutex<()>>>>,
    verified: Mutex<HashMap<[u8; 32], (Principal, Instant)>>,
}

const PROVIDERS: &str = "providers";
const ENTITIES: &str = "entities";
const FOLLOWS: &str = "follows";
const PERMISSIONS: &str = "permissions";
const BINDINGS: &str = "bindings";
const RELAYS: &str = "relays";

impl AuthStore {
    /// Opens the store, loading snapshots from `config.data_dir` when present.
    pub fn open(config: AuthConfig, clock: SharedClock) -> Result<Self, AuthError> {
        if config.admin_key.is_empty() {
            return Err(AuthError::InvalidArgument("admin key must not be empty".into()));
        }
        let admin = KeyDigest::compute(&config.admin_key, config.key_iterations);
        let store = Self {
            admin,
            clock,
            providers: Default::default(),
            entities: Default::default(),
            key_index: Default::default(),
            follows: Default::default(),
            permissions: Default::default(),
            bindings: Default::default(),
            relays: Default::default(),
            relay_locks: Default::default(),
            verified: Default::default(),
            config,
        };
        if let Some(dir) = store.config.data_dir.clone() {
            store.load(&dir)?;
        }
        Ok(store)
    }

    pub fn in_memory(admin_key: impl Into<String>, clock: SharedClock) -> Self {
        Self::open(AuthConfig::new(admin_key), clock).expect("in-memory store opens")
    }

    fn load(&self, dir: &std::path::Path) -> Result<(), AuthError> {
        let providers: Vec<ProviderRecord> = snapshot::read_table(dir, PROVIDERS)?;
        let entities: Vec<EntityRecord> = snapshot::read_table(dir, ENTITIES)?;
        let follows: Vec<FollowRequest> = snapshot::read_table(dir, FOLLOWS)?;
        let permissions: Vec<PermissionRecord> = snapshot::read_table(dir, PERMISSIONS)?;
        let bindings: Vec<BindingRecord> = snapshot::read_table(dir, BINDINGS)?;
        let relays: Vec<RelayRecord> = snapshot::read_table(dir, RELAYS)?;

        let mut index = self.key_index.write();
        for p in providers {
            index
                .entry(p.api_key.lookup.clone())
                .or_default()
                .push(KeyOwner::Provider(p.provider_id.clone()));
            self.providers.write().insert(p.provider_id.clone(), p);
        }
        for e in entities {
            index
                .entry(e.api_key.lookup.clone())
                .or_default()
                .push(KeyOwner::Entity(e.entity_id.clone()));
            self.entities.write().insert(e.entity_id.clone(), e);
        }
        self.follows
            .write()
            .extend(follows.into_iter().map(|f| (f.follow_id.clone(), f)));
        let mut perms = self.permissions.write();
        for p in permissions {
            perms
                .entry((p.subscriber_id.clone(), p.target_entity.clone()))
                .or_default()
                .push(p);
        }
        self.bindings
            .write()
            .extend(bindings.into_iter().map(|b| (b.key.clone(), b)));
        self.relays
            .write()
            .extend(relays.into_iter().map(|r| (r.key.clone(), r)));
        Ok(())
    }

    fn persist<'a, T: Serialize + 'a>(
        &self,
        table: &str,
        records: impl IntoIterator<Item = &'a T>,
    ) -> Result<(), AuthError> {
        match &self.config.data_dir {
            Some(dir) => snapshot::write_table(dir, table, records),
            None => Ok(()),
        }
    }

    pub fn now(&self) -> Millis {
        self.clock.now_ms()
    }

    pub fn config(&self) -> &AuthConfig {
        &self.config
    }

    // ---- identity -------------------------------------------------------

    pub fn authenticate(&self, api_key: &str) -> Option<Principal> {
        if api_key.is_empty() {
            return None;
        }
        let fingerprint = keys::fingerprint(api_key);
        {
            let mut cache = self.verified.lock();
            if let Some((principal, at)) = cache.get(&fingerprint) {
                if at.elapsed() < self.config.verify_cache_ttl {
                    return Some(principal.clone());
                }
                cache.remove(&fingerprint);
            }
        }
        let principal = self.verify_uncached(api_key)?;
        self.verified
            .lock()
            .insert(fingerprint, (principal.clone(), Instant::now()));
        Some(principal)
    }

    fn verify_uncached(&self, api_key: &str) -> Option<Principal> {
        let lookup = keys::lookup_prefix(api_key);
        if self.admin.lookup == lookup && self.admin.verify(api_key) {
            return Some(Principal::Admin);
        }
        let candidates = self.key_index.read().get(lookup).cloned().unwrap_or_default();
        for owner in candidates {
            match owner {
                KeyOwner::Provider(id) => {
                    let providers = self.providers.read();
                    if let Some(p) = providers.get(&id) {
                        if p.api_key.verify(api_key) {
                            return Some(Principal::Provider { id });
                        }
                    }
                }
                KeyOwner::Entity(id) => {
                    let entities = self.entities.read();
                    if let Some(e) = entities.get(&id) {
                        if e.api_key.verify(api_key) {
                            return Some(Principal::Entity {
                                id,
                                owner: e.owner.clone(),
                                kind: e.kind,
                            });
                        }
                    }
                }
            }
        }
        None
    }

    pub fn register_provider(
        &self,
        caller: &Principal,
        provider_id: &str,
    ) -> Result<String, AuthError> {
        if *caller != Principal::Admin {
            return Err(AuthError::AccessDenied("admin credential required".into()));
        }
        validate_entity_id(provider_id)?;
        let key = keys::generate_key();
        let digest = KeyDigest::compute(&key, self.config.key_iterations);
        let mut providers = self.providers.write();
        if providers.contains_key(provider_id) {
            return Err(AuthError::Conflict(format!("provider {provider_id} exists")));
        }
        let lookup = digest.lookup.clone();
        providers.insert(
            provider_id.to_string(),
            ProviderRecord {
                provider_id: provider_id.to_string(),
                api_key: digest,
                created_at: self.now(),
            },
        );
        self.key_index
            .write()
            .entry(lookup)
            .or_default()
            .push(KeyOwner::Provider(provider_id.to_string()));
        self.persist(PROVIDERS, providers.values())?;
        Ok(key)
    }

    pub fn register_entity(
        &self,
        caller: &Principal,
        entity_id: &str,
        kind: EntityKind,
        catalogue_item: serde_json::Value,
    ) -> Result<String, AuthError> {
        let Principal::Provider { id: owner } = caller else {
            return Err(AuthError::AccessDenied("provider credential required".into()));
        };
        validate_entity_id(entity_id)?;
        if !catalogue_item.is_object() {
            return Err(AuthError::InvalidArgument(
                "catalogue_item must be a JSON object".into(),
            ));
        }
        let key = keys::generate_key();
        let digest = KeyDigest::compute(&key, self.config.key_iterations);
        let mut entities = self.entities.write();
        if entities.contains_key(entity_id) {
            return Err(AuthError::Conflict(format!("entity {entity_id} exists")));
        }
        let lookup = digest.lookup.clone();
        entities.insert(
            entity_id.to_string(),
            EntityRecord {
                entity_id: entity_id.to_string(),
                owner: owner.clone(),
                kind,
                api_key: digest,
                catalogue_item,
                created_at: self.now(),
            },
        );
        self.key_index
            .write()
            .entry(lookup)
            .or_default()
            .push(KeyOwner::Entity(entity_id.to_string()));
        self.persist(ENTITIES, entities.values())?;
        Ok(key)
    }

    pub fn entity(&self, entity_id: &str) -> Option<EntityRecord> {
        self.entities.read().get(entity_id).cloned()
    }

    pub fn provider(&self, provider_id: &str) -> Option<ProviderRecord> {
        self.providers.read().get(provider_id).cloned()
    }

    pub fn entities(&self) -> Vec<EntityRecord> {
        let mut all: Vec<_> = self.entities.read().values().cloned().collect();
        all.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
        all
    }

    // ---- authorisation --------------------------------------------------

    pub fn check_permission(
        &self,
        principal: &Principal,
        resource: &Resource,
        action: Action,
    ) -> Decision {
        if *principal == Principal::Admin {
            return Decision::Allow;
        }
        let decision = match (resource, action) {
            (Resource::Exchange { name }, Action::Publish) => matches!(
                principal,
                Principal::Entity { id, kind: EntityKind::Publisher, .. } if id == name
            ),
            (Resource::Queue { name }, Action::Consume) => matches!(
                principal,
                Principal::Entity { id, kind: EntityKind::Subscriber, .. } if id == name
            ),
            (Resource::Exchange { name } | Resource::Queue { name }, Action::Declare | Action::Delete) => {
                match principal {
                    Principal::Provider { id } => self
                        .entities
                        .read()
                        .get(name)
                        .is_some_and(|e| &e.owner == id),
                    _ => false,
                }
            }
            (Resource::Binding { exchange, queue, pattern }, Action::Bind) => {
                let is_subscriber = matches!(
                    principal,
                    Principal::Entity { id, kind: EntityKind::Subscriber, .. } if id == queue
                );
                is_subscriber && self.covering_permission(queue, exchange, pattern).is_some()
            }
            (Resource::Binding { queue, .. }, Action::Unbind) => matches!(
                principal,
                Principal::Entity { id, .. } if id == queue
            ),
            _ => false,
        };
        decision.into()
    }

    /// Expiry of the live permission letting `subscriber` bind `pattern` on
    /// `exchange`, if any.
    pub fn covering_permission(&self, subscriber: &str, exchange: &str, pattern: &str) -> Option<Millis> {
        let requested = RoutingPattern::parse(pattern).ok()?;
        let now = self.now();
        self.permissions
            .read()
            .get(&(subscriber.to_string(), exchange.to_string()))?
            .iter()
            .filter(|p| p.expires_at > now && p.routing_pattern.covers(&requested))
            .map(|p| p.expires_at)
            .max()
    }

    // ---- follow workflow ------------------------------------------------

    pub fn create_follow(
        &self,
        caller: &Principal,
        target_entity: &str,
        pattern: &str,
    ) -> Result<String, AuthError> {
        let Principal::Entity { id: subscriber, kind: EntityKind::Subscriber, .. } = caller else {
            return Err(AuthError::AccessDenied("subscriber credential required".into()));
        };
        let pattern = RoutingPattern::parse(pattern)
            .map_err(|e| AuthError::InvalidArgument(e.to_string()))?;
        let target = self
            .entity(target_entity)
            .ok_or_else(|| AuthError::NotFound(format!("entity {target_entity}")))?;
        if target.kind != EntityKind::Publisher {
            return Err(AuthError::InvalidArgument(format!(
                "{target_entity} is not a publisher"
            )));
        }
        let mut follows = self.follows.write();
        let follow_id = loop {
            let candidate = format!("f-{:016x}", rand::thread_rng().gen::<u64>());
            if !follows.contains_key(&candidate) {
                break candidate;
            }
        };
        follows.insert(
            follow_id.clone(),
            FollowRequest {
                follow_id: follow_id.clone(),
                subscriber_id: subscriber.clone(),
                target_entity: target.entity_id,
                target_owner: target.owner,
                requested_pattern: pattern,
                status: FollowStatus::Pending,
                validity_seconds: self.config.default_validity_seconds,
                created_at: self.now(),
                decided_at: None,
            },
        );
        self.persist(FOLLOWS, follows.values())?;
        Ok(follow_id)
    }

    pub fn follow(&self, follow_id: &str) -> Option<FollowRequest> {
        self.follows.read().get(follow_id).cloned()
    }

    pub fn follow_status(&self, caller: &Principal, follow_id: &str) -> Result<FollowStatus, AuthError> {
        let follow = self
            .follow(follow_id)
            .ok_or_else(|| AuthError::NotFound(format!("follow {follow_id}")))?;
        match caller {
            Principal::Entity { id, .. } if *id == follow.subscriber_id => Ok(follow.status),
            _ => Err(AuthError::AccessDenied(format!("follow {follow_id} belongs to another subscriber"))),
        }
    }

    pub fn list_follow_requests(&self, caller: &Principal) -> Result<Vec<FollowView>, AuthError> {
        let Principal::Provider { id: provider } = caller else {
            return Err(AuthError::AccessDenied("provider credential required".into()));
        };
        let mut rows: Vec<FollowView> = self
            .follows
            .read()
            .values()
            .filter(|f| f.status == FollowStatus::Pending && &f.target_owner == provider)
            .map(|f| FollowView {
                follow_id: f.follow_id.clone(),
                subscriber_id: f.subscriber_id.clone(),
                entity_id: f.target_entity.clone(),
                pattern: f.requested_pattern.to_string(),
            })
            .collect();
        rows.sort_by(|a, b| a.follow_id.cmp(&b.follow_id));
        Ok(rows)
    }

    fn decide(
        &self,
        caller: &Principal,
        follow_id: &str,
        approve: Option<u64>,
    ) -> Result<FollowRequest, AuthError> {
        let Principal::Provider { id: provider } = caller else {
            return Err(AuthError::AccessDenied("provider credential required".into()));
        };
        if approve == Some(0) {
            return Err(AuthError::InvalidArgument("validity_seconds must be positive".into()));
        }
        let mut follows = self.follows.write();
        let follow = follows
            .get_mut(follow_id)
            .ok_or_else(|| AuthError::NotFound(format!("follow {follow_id}")))?;
        if &follow.target_owner != provider {
            return Err(AuthError::AccessDenied(format!(
                "follow {follow_id} targets another provider's entity"
            )));
        }
        if follow.status != FollowStatus::Pending {
            return Err(AuthError::Conflict(format!("follow {follow_id} already decided")));
        }
        let now = self.now();
        follow.decided_at = Some(now);
        match approve {
            Some(validity) => {
                follow.status = FollowStatus::Approved;
                follow.validity_seconds = validity;
            }
            None => follow.status = FollowStatus::Rejected,
        }
        let decided = follow.clone();
        self.persist(FOLLOWS, follows.values())?;
        Ok(decided)
    }

    pub fn approve_follow(
        &self,
        caller: &Principal,
        follow_id: &str,
        validity_seconds: Option<u64>,
    ) -> Result<PermissionRecord, AuthError> {
        let validity = validity_seconds.unwrap_or(self.config.default_validity_seconds);
        let follow = self.decide(caller, follow_id, Some(validity))?;
        let record = PermissionRecord {
            subscriber_id: follow.subscriber_id.clone(),
            target_entity: follow.target_entity.clone(),
            routing_pattern: follow.requested_pattern.clone(),
            expires_at: follow.decided_at.unwrap_or_else(|| self.now()) + validity * 1000,
        };
        let mut perms = self.permissions.write();
        let slot = perms
            .entry((record.subscriber_id.clone(), record.target_entity.clone()))
            .or_default();
        match slot.iter_mut().find(|p| p.routing_pattern == record.routing_pattern) {
            Some(existing) => existing.expires_at = existing.expires_at.max(record.expires_at),
            None => slot.push(record.clone()),
        }
        self.persist(PERMISSIONS, perms.values().flatten())?;
        Ok(record)
    }

    pub fn reject_follow(&self, caller: &Principal, follow_id: &str) -> Result<(), AuthError> {
        self.decide(caller, follow_id, None).map(|_| ())
    }

    pub fn expired_permissions(&self, now: Millis) -> Vec<PermissionRecord> {
        let mut expired: Vec<_> = self
            .permissions
            .read()
            .values()
            .flatten()
            .filter(|p| p.expires_at <= now)
            .cloned()
            .collect();
        expired.sort_by(|a, b| {
            (a.expires_at, &a.subscriber_id, &a.target_entity)
                .cmp(&(b.expires_at, &b.subscriber_id, &b.target_entity))
        });
        expired
    }

    pub fn permissions(&self) -> Vec<PermissionRecord> {
        self.permissions.read().values().flatten().cloned().collect()
    }

    /// Deletes a permission unless it was renewed since `record` was read.
    pub fn revoke_permission(&self, record: &PermissionRecord) -> Result<bool, AuthError> {
        let mut perms = self.permissions.write();
        let key = (record.subscriber_id.clone(), record.target_entity.clone());
        let Some(slot) = perms.get_mut(&key) else {
            return Ok(false);
        };
        let before = slot.len();
        slot.retain(|p| !(p.routing_pattern == record.routing_pattern && p.expires_at <= record.expires_at));
        let removed = slot.len() != before;
        if slot.is_empty() {
            perms.remove(&key);
        }
        if removed {
            self.persist(PERMISSIONS, perms.values().flatten())?;
        }
        Ok(removed)
    }

    // ---- binding and relay tracking ------------------------------------

    pub fn binding(&self, key: &BindingKey) -> Option<BindingRecord> {
        self.bindings.read().get(key).cloned()
    }

    pub fn bindings(&self) -> Vec<BindingRecord> {
        self.bindings.read().values().cloned().collect()
    }

    pub fn bindings_between(&self, subscriber: &str, exchange: &str) -> Vec<BindingRecord> {
        self.bindings
            .read()
            .values()
            .filter(|b| b.key.subscriber_id == subscriber && b.key.exchange == exchange)
            .cloned()
            .collect()
    }

    pub fn put_binding(&self, record: BindingRecord) -> Result<(), AuthError> {
        let mut bindings = self.bindings.write();
        bindings.insert(record.key.clone(), record);
        self.persist(BINDINGS, bindings.values())
    }

    pub fn remove_binding(&self, key: &BindingKey) -> Result<Option<BindingRecord>, AuthError> {
        let mut bindings = self.bindings.write();
        let removed = bindings.remove(key);
        if removed.is_some() {
            self.persist(BINDINGS, bindings.values())?;
        }
        Ok(removed)
    }

    pub fn relay(&self, key: &RelayKey) -> Option<RelayRecord> {
        self.relays.read().get(key).cloned()
    }

    pub fn relays(&self) -> Vec<RelayRecord> {
        self.relays.read().values().cloned().collect()
    }

    pub fn put_relay(&self, record: RelayRecord) -> Result<(), AuthError> {
        let mut relays = self.relays.write();
        relays.insert(record.key.clone(), record);
        self.persist(RELAYS, relays.values())
    }

    pub fn remove_relay(&self, key: &RelayKey) -> Result<Option<RelayRecord>, AuthError> {
        let mut relays = self.relays.write();
        let removed = relays.remove(key);
        if removed.is_some() {
            self.persist(RELAYS, relays.values())?;
        }
        Ok(removed)
    }

    /// Serialises relay-chain edits for one (exchange, destination) pair
    /// across every gateway sharing this store.
    pub fn relay_lock(&self, key: &RelayKey) -> Arc<tokio::sync::Mutex<()>> {
        self.relay_locks.lock().entry(key.clone()).or_default().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, ManualClock};

    const ADMIN: &str = "admin-secret-key";

    fn store_with_clock() -> (AuthStore, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(1_000_000));
        let mut config = AuthConfig::new(ADMIN);
        config.key_iterations = 50;
        (AuthStore::open(config, clock.clone()).unwrap(), clock)
    }

    fn provider(store: &AuthStore, id: &str) -> Principal {
        let key = store.register_provider(&Principal::Admin, id).unwrap();
        store.authenticate(&key).unwrap()
    }

    fn entity(store: &AuthStore, owner: &Principal, id: &str, kind: EntityKind) -> Principal {
        let key = store
            .register_entity(owner, id, kind, serde_json::json!({"type": "flood"}))
            .unwrap();
        store.authenticate(&key).unwrap()
    }

    #[test]
    fn admin_key_authenticates() {
        let (store, _) = store_with_clock();
        assert_eq!(store.authenticate(ADMIN), Some(Principal::Admin));
        assert_eq!(store.authenticate("nope"), None);
        assert_eq!(store.authenticate(""), None);
    }

    #[test]
    fn provider_registration_round_trips() {
        let (store, _) = store_with_clock();
        let key = store.register_provider(&Principal::Admin, "pune-flood").unwrap();
        assert_eq!(key.len(), 43);
        assert_eq!(
            store.authenticate(&key),
            Some(Principal::Provider { id: "pune-flood".into() })
        );
        assert!(matches!(
            store.register_provider(&Principal::Admin, "pune-flood"),
            Err(AuthError::Conflict(_))
        ));
        let p = Principal::Provider { id: "x".into() };
        assert!(matches!(store.register_provider(&p, "other"), Err(AuthError::AccessDenied(_))));
    }

    #[test]
    fn entity_registration() {
        let (store, _) = store_with_clock();
        let owner = provider(&store, "alpha");
        let sensor = entity(&store, &owner, "sensor1", EntityKind::Publisher);
        assert_eq!(
            sensor,
            Principal::Entity { id: "sensor1".into(), owner: "alpha".into(), kind: EntityKind::Publisher }
        );
        assert!(matches!(
            store.register_entity(&owner, "sensor1", EntityKind::Publisher, serde_json::json!({})),
            Err(AuthError::Conflict(_))
        ));
        assert!(matches!(
            store.register_entity(&owner, "sensor2", EntityKind::Publisher, serde_json::json!([1])),
            Err(AuthError::InvalidArgument(_))
        ));
        assert!(matches!(
            store.register_entity(&Principal::Admin, "sensor3", EntityKind::Publisher, serde_json::json!({})),
            Err(AuthError::AccessDenied(_))
        ));
    }

    #[test]
    fn publish_and_consume_rules() {
        let (store, _) = store_with_clock();
        let owner = provider(&store, "alpha");
        let publisher = entity(&store, &owner, "sensor1", EntityKind::Publisher);
        let subscriber = entity(&store, &owner, "app1", EntityKind::Subscriber);
        let exchange = Resource::Exchange { name: "sensor1".into() };
        assert_eq!(store.check_permission(&publisher, &exchange, Action::Publish), Decision::Allow);
        assert_eq!(store.check_permission(&subscriber, &exchange, Action::Publish), Decision::Deny);
        let queue = Resource::Queue { name: "app1".into() };
        assert_eq!(store.check_permission(&subscriber, &queue, Action::Consume), Decision::Allow);
        assert_eq!(store.check_permission(&publisher, &queue, Action::Consume), Decision::Deny);
        assert_eq!(store.check_permission(&owner, &queue, Action::Declare), Decision::Allow);
        let stranger = provider(&store, "beta");
        assert_eq!(store.check_permission(&stranger, &queue, Action::Declare), Decision::Deny);
        assert_eq!(store.check_permission(&stranger, &Resource::Admin, Action::Administer), Decision::Deny);
    }

    #[test]
    fn follow_lifecycle_gates_bind() {
        let (store, clock) = store_with_clock();
        let alpha = provider(&store, "alpha");
        let beta = provider(&store, "beta");
        entity(&store, &alpha, "sensor1", EntityKind::Publisher);
        let sub = entity(&store, &beta, "app1", EntityKind::Subscriber);
        let bind = Resource::Binding {
            exchange: "sensor1".into(),
            queue: "app1".into(),
            pattern: "temp.#".into(),
        };
        assert_eq!(store.check_permission(&sub, &bind, Action::Bind), Decision::Deny);

        let follow = store.create_follow(&sub, "sensor1", "temp.#").unwrap();
        assert_eq!(store.follow_status(&sub, &follow).unwrap(), FollowStatus::Pending);
        assert_eq!(store.list_follow_requests(&alpha).unwrap().len(), 1);
        assert!(store.list_follow_requests(&beta).unwrap().is_empty());
        assert!(matches!(store.approve_follow(&beta, &follow, None), Err(AuthError::AccessDenied(_))));

        let record = store.approve_follow(&alpha, &follow, Some(2)).unwrap();
        assert_eq!(record.expires_at, clock.now_ms() + 2000);
        assert_eq!(store.follow_status(&sub, &follow).unwrap(), FollowStatus::Approved);
        assert!(store.list_follow_requests(&alpha).unwrap().is_empty());
        assert_eq!(store.check_permission(&sub, &bind, Action::Bind), Decision::Allow);
        // narrower pattern is covered, wider is not
        let narrow = Resource::Binding { exchange: "sensor1".into(), queue: "app1".into(), pattern: "temp.room1".into() };
        let wide = Resource::Binding { exchange: "sensor1".into(), queue: "app1".into(), pattern: "#".into() };
        assert_eq!(store.check_permission(&sub, &narrow, Action::Bind), Decision::Allow);
        assert_eq!(store.check_permission(&sub, &wide, Action::Bind), Decision::Deny);

        assert!(matches!(store.approve_follow(&alpha, &follow, None), Err(AuthError::Conflict(_))));
        assert!(matches!(store.reject_follow(&alpha, &follow), Err(AuthError::Conflict(_))));

        assert!(store.expired_permissions(clock.now_ms()).is_empty());
        clock.advance_ms(1999);
        assert_eq!(store.check_permission(&sub, &bind, Action::Bind), Decision::Allow);
        clock.advance_ms(1);
        assert_eq!(store.check_permission(&sub, &bind, Action::Bind), Decision::Deny);
        let expired = store.expired_permissions(clock.now_ms());
        assert_eq!(expired.len(), 1);
        assert!(store.revoke_permission(&expired[0]).unwrap());
        assert!(store.expired_permissions(clock.now_ms()).is_empty());
    }

    #[test]
    fn reject_denies_bind() {
        let (store, _) = store_with_clock();
        let alpha = provider(&store, "alpha");
        entity(&store, &alpha, "sensor1", EntityKind::Publisher);
        let sub = entity(&store, &alpha, "app1", EntityKind::Subscriber);
        let follow = store.create_follow(&sub, "sensor1", "#").unwrap();
        store.reject_follow(&alpha, &follow).unwrap();
        assert_eq!(store.follow_status(&sub, &follow).unwrap(), FollowStatus::Rejected);
        let bind = Resource::Binding { exchange: "sensor1".into(), queue: "app1".into(), pattern: "#".into() };
        assert_eq!(store.check_permission(&sub, &bind, Action::Bind), Decision::Deny);
        assert!(store.permissions().is_empty());
    }

    #[test]
    fn follow_errors() {
        let (store, _) = store_with_clock();
        let alpha = provider(&store, "alpha");
        entity(&store, &alpha, "sensor1", EntityKind::Publisher);
        let sub = entity(&store, &alpha, "app1", EntityKind::Subscriber);
        let other = entity(&store, &alpha, "app2", EntityKind::Subscriber);
        assert!(matches!(store.create_follow(&sub, "ghost", "#"), Err(AuthError::NotFound(_))));
        let a = store.create_follow(&sub, "sensor1", "#").unwrap();
        let b = store.create_follow(&sub, "sensor1", "#").unwrap();
        assert_ne!(a, b);
        assert!(matches!(store.follow_status(&other, &a), Err(AuthError::AccessDenied(_))));
        assert!(matches!(store.follow_status(&sub, "f-missing"), Err(AuthError::NotFound(_))));
        assert!(matches!(store.approve_follow(&alpha, &a, Some(0)), Err(AuthError::InvalidArgument(_))));
    }

    #[test]
    fn default_validity_is_seven_days() {
        let (store, clock) = store_with_clock();
        let alpha = provider(&store, "alpha");
        entity(&store, &alpha, "sensor1", EntityKind::Publisher);
        let sub = entity(&store, &alpha, "app1", EntityKind::Subscriber);
        let f = store.create_follow(&sub, "sensor1", "#").unwrap();
        let record = store.approve_follow(&alpha, &f, None).unwrap();
        assert_eq!(record.expires_at, clock.now_ms() + 604_800_000);
    }

    #[test]
    fn snapshots_reload_and_never_hold_raw_keys() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(5_000));
        let mut config = AuthConfig::new(ADMIN);
        config.key_iterations = 50;
        config.data_dir = Some(dir.path().to_path_buf());
        let mut keys = Vec::new();
        {
            let store = AuthStore::open(config.clone(), clock.clone()).unwrap();
            let pkey = store.register_provider(&Principal::Admin, "alpha").unwrap();
            let owner = store.authenticate(&pkey).unwrap();
            let ekey = store
                .register_entity(&owner, "sensor1", EntityKind::Publisher, serde_json::json!({"a": 1}))
                .unwrap();
            let skey = store
                .register_entity(&owner, "app1", EntityKind::Subscriber, serde_json::json!({}))
                .unwrap();
            let sub = store.authenticate(&skey).unwrap();
            let f = store.create_follow(&sub, "sensor1", "#").unwrap();
            store.approve_follow(&owner, &f, Some(60)).unwrap();
            keys.extend([pkey, ekey, skey]);
        }
        let mut all_bytes = String::new();
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            all_bytes.push_str(&std::fs::read_to_string(entry.unwrap().path()).unwrap());
        }
        for key in &keys {
            assert!(!all_bytes.contains(key.as_str()));
        }
        assert!(!all_bytes.contains(ADMIN));

        let reopened = AuthStore::open(config, clock).unwrap();
        assert_eq!(reopened.authenticate(&keys[0]), Some(Principal::Provider { id: "alpha".into() }));
        assert!(reopened.entity("sensor1").is_some());
        assert_eq!(reopened.permissions().len(), 1);
    }
}
