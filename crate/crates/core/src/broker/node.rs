use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use super::cluster::PeerSet;
use super::config::NodeConfig;
use super::message::{Binding, Message, MetadataEvent, NodeStats, QueueInfo, ShovelSpec};
use super::protocol::{Request, Response};
use super::queue::QueueState;
use super::shovel::ShovelHandle;
use super::BrokerError;
use crate::auth::backend::AuthBackend;
use crate::auth::{Action, Principal, Resource, ARCHIVE_QUEUE};
use crate::clock::{Millis, SharedClock};
use crate::router::RoutingMode;
use crate::topic::{validate_routing_key, RoutingPattern};

#[derive(Debug, Clone)]
struct BindingEntry {
    queue: String,
    pattern: RoutingPattern,
    expires_at: Option<Millis>,
}

#[derive(Debug, Default)]
struct ExchangeState {
    bindings: RwLock<Vec<BindingEntry>>,
}

impl ExchangeState {
    fn targets(&self, routing_key: &str, now: Millis) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for b in self.bindings.read().iter() {
            if b.expires_at.is_some_and(|t| t <= now) {
                continue;
            }
            if b.pattern.matches(routing_key) && !out.contains(&b.queue) {
                out.push(b.queue.clone());
            }
        }
        out
    }

    fn find(&self, queue: &str, pattern: &str) -> Option<BindingEntry> {
        self.bindings
            .read()
            .iter()
            .find(|b| b.queue == queue && b.pattern.as_str() == pattern)
            .cloned()
    }
}

/// Broker state for one node, independent of the transport.
#[derive(Debug)]
pub struct BrokerNode {
    config: NodeConfig,
    auth: Arc<dyn AuthBackend>,
    clock: SharedClock,
    exchanges: RwLock<HashMap<String, Arc<ExchangeState>>>,
    queues: RwLock<HashMap<String, Arc<QueueState>>>,
    archive: Arc<QueueState>,
    shovels: Mutex<BTreeMap<String, ShovelHandle>>,
    peers: PeerSet,
    shovel_seq: AtomicU64,
    published: AtomicU64,
    enqueued: AtomicU64,
    auth_checks: AtomicU64,
}

fn required_access(request: &Request) -> Option<(Resource, Action)> {
    use Request::*;
    let admin = Some((Resource::Admin, Action::Administer));
    match request {
        Auth { .. } | Ping => None,
        DeclareExchange { name } => Some((Resource::Exchange { name: name.clone() }, Action::Declare)),
        DeleteExchange { name } => Some((Resource::Exchange { name: name.clone() }, Action::Delete)),
        DeclareQueue { name, .. } => Some((Resource::Queue { name: name.clone() }, Action::Declare)),
        DeleteQueue { name } => Some((Resource::Queue { name: name.clone() }, Action::Delete)),
        Bind(b) => Some((
            Resource::Binding {
                exchange: b.exchange.clone(),
                queue: b.queue.clone(),
                pattern: b.pattern.clone(),
            },
            Action::Bind,
        )),
        Unbind { exchange, queue, pattern } => Some((
            Resource::Binding {
                exchange: exchange.clone(),
                queue: queue.clone(),
                pattern: pattern.clone(),
            },
            Action::Unbind,
        )),
        Publish { message, .. } => Some((
            Resource::Exchange { name: message.exchange.clone() },
            Action::Publish,
        )),
        PublishBatch { exchange, .. } => {
            Some((Resource::Exchange { name: exchange.clone() }, Action::Publish))
        }
        Consume { queue, .. } if queue == ARCHIVE_QUEUE => admin,
        Consume { queue, .. } => Some((Resource::Queue { name: queue.clone() }, Action::Consume)),
        CreateShovel(_) | DeleteShovel { .. } | ListShovels | Replicate(_) | Enqueue { .. } | Stats
        | ListExchanges | QueueInfo { .. } => admin,
    }
}

fn check_name(kind: &str, name: &str) -> Result<(), BrokerError> {
    if name.is_empty() || name.len() > 255 {
        return Err(BrokerError::InvalidArgument(format!("{kind} name must be 1-255 bytes")));
    }
    Ok(())
}

impl BrokerNode {
    pub fn new(config: NodeConfig, auth: Arc<dyn AuthBackend>, clock: SharedClock) -> Self {
        let peers = if config.mode == RoutingMode::Clustered {
            PeerSet::new(&config.peers, &config.system_key, config.replicate_timeout())
        } else {
            PeerSet::new(&[], &config.system_key, config.replicate_timeout())
        };
        let archive = Arc::new(QueueState::new(
            ARCHIVE_QUEUE,
            config.node_id.clone(),
            config.archive_depth_limit,
        ));
        Self {
            config,
            auth,
            clock,
            exchanges: RwLock::new(HashMap::new()),
            queues: RwLock::new(HashMap::new()),
            archive,
            shovels: Mutex::new(BTreeMap::new()),
            peers,
            shovel_seq: AtomicU64::new(0),
            published: AtomicU64::new(0),
            enqueued: AtomicU64::new(0),
            auth_checks: AtomicU64::new(0),
        }
    }

    pub fn node_id(&self) -> &str {
        &self.config.node_id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub async fn authenticate(&self, api_key: &str) -> Option<Principal> {
        self.auth.authenticate(api_key).await
    }

    /// Runs one request on behalf of `principal`, turning errors into
    /// [`Response::Error`].
    pub async fn execute(&self, principal: &Principal, request: Request) -> Response {
        match self.handle(principal, request).await {
            Ok(r) => r,
            Err(e) => Response::Error(e),
        }
    }

    async fn handle(&self, principal: &Principal, request: Request) -> Result<Response, BrokerError> {
        if let Request::Auth { .. } = request {
            return Err(BrokerError::Protocol("already authenticated".into()));
        }
        if let Some((resource, action)) = required_access(&request) {
            self.auth_checks.fetch_add(1, Ordering::Relaxed);
            if !self.auth.check(principal, &resource, action).await.is_allow() {
                return Err(BrokerError::AccessDenied(format!(
                    "{} may not {action:?} {resource:?}",
                    principal.id()
                )));
            }
        }
        let admin = *principal == Principal::Admin;
        match request {
            Request::Auth { .. } => unreachable!(),
            Request::Ping => Ok(Response::Ok),
            Request::DeclareExchange { name } => self.declare_exchange(name).await,
            Request::DeleteExchange { name } => self.delete_exchange(name).await,
            Request::DeclareQueue { name, depth_limit } => self.declare_queue(name, depth_limit).await,
            Request::DeleteQueue { name } => self.delete_queue(name).await,
            Request::Bind(b) => self.bind(b).await,
            Request::Unbind { exchange, queue, pattern } => self.unbind(exchange, queue, pattern).await,
            Request::Publish { message, archive } => {
                self.publish(message, archive || !admin).await
            }
            Request::PublishBatch { exchange, messages } => {
                self.publish_batch(&exchange, messages, !admin).await
            }
            Request::Consume { queue, max } => self.consume(&queue, max).await,
            Request::CreateShovel(spec) => self.create_shovel(spec),
            Request::DeleteShovel { shovel_id } => {
                self.delete_shovel(&shovel_id).await;
                Ok(Response::Ok)
            }
            Request::ListShovels => Ok(Response::Shovels(
                self.shovels.lock().values().map(|s| s.status()).collect(),
            )),
            Request::Replicate(event) => self.apply(&event).map(|_| Response::Ok),
            Request::Enqueue { queues, message } => {
                self.enqueue_local(&queues, &message);
                Ok(Response::Ok)
            }
            Request::Stats => Ok(Response::Stats(self.stats())),
            Request::ListExchanges => {
                let mut names: Vec<String> = self.exchanges.read().keys().cloned().collect();
                names.sort();
                Ok(Response::Names(names))
            }
            Request::QueueInfo { name } => self.queue_info(&name).map(Response::Queue),
        }
    }

    fn clustered(&self) -> bool {
        self.config.mode == RoutingMode::Clustered && !self.peers.is_empty()
    }

    fn queue(&self, name: &str) -> Option<Arc<QueueState>> {
        if name == ARCHIVE_QUEUE {
            return Some(self.archive.clone());
        }
        self.queues.read().get(name).cloned()
    }

    fn exchange(&self, name: &str) -> Result<Arc<ExchangeState>, BrokerError> {
        self.exchanges
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::NotFound(format!("exchange {name}")))
    }

    /// Applies a metadata change to local state only. Returns whether
    /// anything changed.
    fn apply(&self, event: &MetadataEvent) -> Result<bool, BrokerError> {
        match event {
            MetadataEvent::ExchangeDeclared { name } => {
                let mut ex = self.exchanges.write();
                if ex.contains_key(name) {
                    return Ok(false);
                }
                ex.insert(name.clone(), Arc::new(ExchangeState::default()));
                Ok(true)
            }
            MetadataEvent::ExchangeDeleted { name } => Ok(self.exchanges.write().remove(name).is_some()),
            MetadataEvent::QueueDeclared { name, home_node, depth_limit } => {
                if name == ARCHIVE_QUEUE {
                    return Err(BrokerError::Conflict("archive queue is reserved".into()));
                }
                let mut qs = self.queues.write();
                if let Some(q) = qs.get(name) {
                    if q.depth_limit == (*depth_limit).max(1) {
                        return Ok(false);
                    }
                    return Err(BrokerError::Conflict(format!(
                        "queue {name} exists with depth limit {}",
                        q.depth_limit
                    )));
                }
                qs.insert(
                    name.clone(),
                    Arc::new(QueueState::new(name.clone(), home_node.clone(), *depth_limit)),
                );
                Ok(true)
            }
            MetadataEvent::QueueDeleted { name } => {
                let removed = self.queues.write().remove(name).is_some();
                if removed {
                    for ex in self.exchanges.read().values() {
                        ex.bindings.write().retain(|b| &b.queue != name);
                    }
                }
                Ok(removed)
            }
            MetadataEvent::BindingAdded(b) => {
                let pattern = RoutingPattern::parse(&b.pattern)
                    .map_err(|e| BrokerError::InvalidArgument(e.to_string()))?;
                let ex = self.exchange(&b.exchange)?;
                if self.queue(&b.queue).is_none() {
                    return Err(BrokerError::NotFound(format!("queue {}", b.queue)));
                }
                let mut bindings = ex.bindings.write();
                if let Some(existing) = bindings
                    .iter_mut()
                    .find(|e| e.queue == b.queue && e.pattern == pattern)
                {
                    let changed = existing.expires_at != b.expires_at;
                    existing.expires_at = b.expires_at;
                    return Ok(changed);
                }
                bindings.push(BindingEntry {
                    queue: b.queue.clone(),
                    pattern,
                    expires_at: b.expires_at,
                });
                Ok(true)
            }
            MetadataEvent::BindingRemoved { exchange, queue, pattern } => {
                let Some(ex) = self.exchanges.read().get(exchange).cloned() else {
                    return Ok(false);
                };
                let mut bindings = ex.bindings.write();
                let before = bindings.len();
                bindings.retain(|b| !(&b.queue == queue && b.pattern.as_str() == pattern));
                Ok(bindings.len() != before)
            }
        }
    }

    /// Applies locally, then synchronously replicates to every peer. If any
    /// peer fails, peers that accepted and the local node are rolled back.
    async fn commit(&self, event: MetadataEvent, undo: Option<MetadataEvent>) -> Result<(), BrokerError> {
        if !self.apply(&event)? || !self.clustered() {
            return Ok(());
        }
        let results = self.peers.broadcast(&Request::Replicate(event)).await;
        let failed: Vec<String> = results
            .iter()
            .filter_map(|(id, r)| r.as_ref().err().map(|e| format!("{id}: {e}")))
            .collect();
        if failed.is_empty() {
            return Ok(());
        }
        if let Some(undo) = undo {
            let accepted: Vec<&str> = results
                .iter()
                .filter(|(_, r)| r.is_ok())
                .map(|(id, _)| id.as_str())
                .collect();
            for peer in accepted {
                let _ = self.peers.call(peer, Request::Replicate(undo.clone())).await;
            }
            let _ = self.apply(&undo);
        }
        Err(BrokerError::PeerTimeout(failed.join("; ")))
    }

    async fn declare_exchange(&self, name: String) -> Result<Response, BrokerError> {
        check_name("exchange", &name)?;
        let event = MetadataEvent::ExchangeDeclared { name };
        let undo = event.inverse();
        self.commit(event, undo).await.map(|_| Response::Ok)
    }

    async fn delete_exchange(&self, name: String) -> Result<Response, BrokerError> {
        self.commit(MetadataEvent::ExchangeDeleted { name }, None)
            .await
            .map(|_| Response::Ok)
    }

    async fn declare_queue(&self, name: String, depth_limit: u64) -> Result<Response, BrokerError> {
        check_name("queue", &name)?;
        let depth_limit = if depth_limit == 0 {
            self.config.default_depth_limit
        } else {
            depth_limit
        };
        let event = MetadataEvent::QueueDeclared {
            name,
            home_node: self.config.node_id.clone(),
            depth_limit,
        };
        let undo = event.inverse();
        self.commit(event, undo).await.map(|_| Response::Ok)
    }

    async fn delete_queue(&self, name: String) -> Result<Response, BrokerError> {
        if name == ARCHIVE_QUEUE {
            return Err(BrokerError::InvalidArgument("archive queue is reserved".into()));
        }
        self.commit(MetadataEvent::QueueDeleted { name }, None)
            .await
            .map(|_| Response::Ok)
    }

    async fn bind(&self, binding: Binding) -> Result<Response, BrokerError> {
        let event = MetadataEvent::BindingAdded(binding);
        let undo = event.inverse();
        self.commit(event, undo).await.map(|_| Response::Ok)
    }

    async fn unbind(&self, exchange: String, queue: String, pattern: String) -> Result<Response, BrokerError> {
        let ex = self.exchange(&exchange)?;
        if self.queue(&queue).is_none() {
            return Err(BrokerError::NotFound(format!("queue {queue}")));
        }
        let undo = ex.find(&queue, &pattern).map(|b| {
            MetadataEvent::BindingAdded(Binding {
                exchange: exchange.clone(),
                queue: queue.clone(),
                pattern: pattern.clone(),
                expires_at: b.expires_at,
            })
        });
        self.commit(MetadataEvent::BindingRemoved { exchange, queue, pattern }, undo)
            .await
            .map(|_| Response::Ok)
    }

    fn check_message(&self, message: &Message) -> Result<(), BrokerError> {
        if message.payload.len() > self.config.max_payload {
            return Err(BrokerError::PayloadTooLarge(format!(
                "{} bytes exceeds {}",
                message.payload.len(),
                self.config.max_payload
            )));
        }
        validate_routing_key(&message.routing_key).map_err(|e| BrokerError::InvalidArgument(e.to_string()))
    }

    async fn publish(&self, message: Message, archive: bool) -> Result<Response, BrokerError> {
        self.check_message(&message)?;
        let ex = self.exchange(&message.exchange)?;
        self.published.fetch_add(1, Ordering::Relaxed);
        let targets = ex.targets(&message.routing_key, self.clock.now_ms());
        if archive {
            self.archive.push(message.clone());
        }
        self.route(targets, message).await.map(|_| Response::Ok)
    }

    /// Routes relayed messages through `exchange`. The original exchange
    /// recorded on each message is preserved.
    async fn publish_batch(
        &self,
        exchange: &str,
        messages: Vec<Message>,
        archive: bool,
    ) -> Result<Response, BrokerError> {
        let ex = self.exchange(exchange)?;
        for m in &messages {
            self.check_message(m)?;
        }
        let now = self.clock.now_ms();
        let mut first_err = None;
        for m in messages {
            let targets = ex.targets(&m.routing_key, now);
            if archive {
                self.archive.push(m.clone());
            }
            if let Err(e) = self.route(targets, m).await {
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(Response::Ok), Err)
    }

    async fn route(&self, targets: Vec<String>, message: Message) -> Result<(), BrokerError> {
        let mut remote: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for name in targets {
            let Some(q) = self.queue(&name) else { continue };
            if q.home_node == self.config.node_id {
                q.push(message.clone());
                self.enqueued.fetch_add(1, Ordering::Relaxed);
            } else {
                remote.entry(q.home_node.clone()).or_default().push(name);
            }
        }
        let mut result = Ok(());
        for (home, queues) in remote {
            let request = Request::Enqueue { queues, message: message.clone() };
            if let Err(e) = self.peers.call(&home, request).await {
                if result.is_ok() {
                    result = Err(e);
                }
            }
        }
        result
    }

    fn enqueue_local(&self, queues: &[String], message: &Message) {
        for name in queues {
            if let Some(q) = self.queue(name) {
                if name != ARCHIVE_QUEUE && q.home_node == self.config.node_id {
                    q.push(message.clone());
                    self.enqueued.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }

    async fn consume(&self, queue: &str, max: u32) -> Result<Response, BrokerError> {
        let q = self
            .queue(queue)
            .ok_or_else(|| BrokerError::NotFound(format!("queue {queue}")))?;
        if q.home_node != self.config.node_id {
            return self
                .peers
                .call(&q.home_node, Request::Consume { queue: queue.into(), max })
                .await;
        }
        Ok(Response::Messages(q.pop_batch(max as usize)))
    }

    fn create_shovel(&self, spec: ShovelSpec) -> Result<Response, BrokerError> {
        let queue = self
            .queue(&spec.source_queue)
            .filter(|q| q.home_node == self.config.node_id && q.name != ARCHIVE_QUEUE)
            .ok_or_else(|| BrokerError::NotFound(format!("queue {}", spec.source_queue)))?;
        if spec.dest_node == self.config.node_id {
            return Err(BrokerError::InvalidArgument("shovel destination is this node".into()));
        }
        let mut shovels = self.shovels.lock();
        if shovels
            .values()
            .any(|s| s.spec.source_queue == spec.source_queue && s.spec.dest_exchange == spec.dest_exchange)
        {
            return Err(BrokerError::Conflict(format!(
                "shovel {} -> {} exists",
                spec.source_queue, spec.dest_exchange
            )));
        }
        let seq = self.shovel_seq.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("shovel-{}-{seq}", self.config.node_id);
        let handle = ShovelHandle::spawn(
            id.clone(),
            self.config.node_id.clone(),
            spec,
            queue,
            self.config.system_key.clone(),
            self.config.shovel.clone(),
        );
        shovels.insert(id.clone(), handle);
        Ok(Response::ShovelId(id))
    }

    async fn delete_shovel(&self, id: &str) {
        let handle = self.shovels.lock().remove(id);
        if let Some(h) = handle {
            h.stop().await;
        }
    }

    fn queue_info(&self, name: &str) -> Result<QueueInfo, BrokerError> {
        let q = self
            .queue(name)
            .ok_or_else(|| BrokerError::NotFound(format!("queue {name}")))?;
        Ok(q.info())
    }

    pub fn stats(&self) -> NodeStats {
        let queues = self.queues.read();
        NodeStats {
            node_id: self.config.node_id.clone(),
            published: self.published.load(Ordering::Relaxed),
            enqueued: self.enqueued.load(Ordering::Relaxed),
            dropped: queues.values().map(|q| q.dropped()).sum::<u64>() + self.archive.dropped(),
            exchanges: self.exchanges.read().len() as u64,
            queues: queues.len() as u64,
            archive_depth: self.archive.depth(),
            auth_checks: self.auth_checks.load(Ordering::Relaxed),
        }
    }

    /// Stops every shovel; in-flight batches go back to their queues.
    pub async fn shutdown(&self) {
        let handles: Vec<ShovelHandle> = std::mem::take(&mut *self.shovels.lock()).into_values().collect();
        for h in handles {
            h.stop().await;
        }
    }
}
