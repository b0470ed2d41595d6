//! Broker-side effects of gateway requests, shared by the HTTP handlers and
//! the unbind daemon.

use std::sync::Arc;

use super::pool::{ChannelPools, PoolSettings};
use super::GatewayError;
use crate::auth::{
    Action, AuthStore, BindingKey, BindingRecord, EntityKind, EntityRecord, Principal, RelayKey,
    RelayRecord, Resource,
};
use crate::broker::protocol::{Request, Response};
use crate::broker::{Binding, BrokerError, Message, ShovelSpec};
use crate::router::{FederationRouter, NodeDescriptor, RoutingMode};

pub fn staging_queue(exchange: &str, dest_node: &str) -> String {
    format!("vm.staging.{exchange}.{dest_node}")
}

pub fn mirror_exchange(exchange: &str) -> String {
    format!("vm.mirror.{exchange}")
}

#[derive(Debug)]
pub struct Fabric {
    store: Arc<AuthStore>,
    router: Arc<FederationRouter>,
    pools: ChannelPools,
}

impl Fabric {
    pub fn new(
        store: Arc<AuthStore>,
        router: Arc<FederationRouter>,
        system_key: &str,
        settings: PoolSettings,
    ) -> Self {
        Self {
            store,
            router,
            pools: ChannelPools::new(system_key, settings),
        }
    }

    pub fn store(&self) -> &Arc<AuthStore> {
        &self.store
    }

    pub fn router(&self) -> &Arc<FederationRouter> {
        &self.router
    }

    pub fn pools(&self) -> &ChannelPools {
        &self.pools
    }

    pub fn node_for(&self, routing_id: &str) -> Result<NodeDescriptor, GatewayError> {
        Ok(self.router.resolve_node(routing_id)?)
    }

    fn node_by_id(&self, node_id: &str) -> Result<NodeDescriptor, GatewayError> {
        self.router
            .node(node_id)
            .ok_or_else(|| GatewayError::Unavailable(format!("node {node_id} left the topology")))
    }

    pub async fn call(
        &self,
        node: &NodeDescriptor,
        acting: Option<&Principal>,
        request: Request,
    ) -> Result<Response, GatewayError> {
        let pool = self.pools.pool(&node.node_id, &node.address.to_string());
        Ok(pool.call(acting, request).await?)
    }

    async fn call_ok(&self, node: &NodeDescriptor, request: Request) -> Result<(), GatewayError> {
        self.call(node, None, request).await.map(|_| ())
    }

    /// Declares the broker resource backing a freshly registered entity.
    pub async fn provision(&self, owner: &Principal, entity: &EntityRecord) -> Result<NodeDescriptor, GatewayError> {
        let node = self.node_for(&entity.owner)?;
        let request = match entity.kind {
            EntityKind::Publisher => Request::DeclareExchange { name: entity.entity_id.clone() },
            EntityKind::Subscriber => Request::DeclareQueue {
                name: entity.entity_id.clone(),
                depth_limit: 0,
            },
        };
        self.call(&node, Some(owner), request).await?;
        Ok(node)
    }

    pub async fn publish(
        &self,
        publisher: &Principal,
        routing_key: &str,
        payload: Vec<u8>,
    ) -> Result<(), GatewayError> {
        let node = self.node_for(publisher.routing_id())?;
        let message = Message::new(
            publisher.id(),
            routing_key,
            payload,
            self.store.now(),
            publisher.id(),
        );
        self.call(&node, Some(publisher), Request::Publish { message, archive: true })
            .await
            .map(|_| ())
    }

    pub async fn subscribe(&self, subscriber: &Principal, max: u32) -> Result<Vec<Message>, GatewayError> {
        let node = self.node_for(subscriber.routing_id())?;
        let request = Request::Consume {
            queue: subscriber.id().to_string(),
            max,
        };
        match self.call(&node, Some(subscriber), request).await? {
            Response::Messages(m) => Ok(m),
            other => Err(GatewayError::Internal(format!("unexpected broker reply {other:?}"))),
        }
    }

    /// Binds `publisher_id`'s exchange to the subscriber's queue, building a
    /// relay chain when the two live on different nodes.
    pub async fn bind(
        &self,
        subscriber: &Principal,
        publisher_id: &str,
        pattern: &str,
    ) -> Result<BindingRecord, GatewayError> {
        let Principal::Entity { id: sub_id, owner: sub_owner, kind: EntityKind::Subscriber } = subscriber else {
            return Err(GatewayError::Forbidden("subscriber credential required".into()));
        };
        let publisher = self
            .store
            .entity(publisher_id)
            .ok_or_else(|| GatewayError::NotFound(format!("entity {publisher_id}")))?;
        let resource = Resource::Binding {
            exchange: publisher_id.to_string(),
            queue: sub_id.clone(),
            pattern: pattern.to_string(),
        };
        if !self.store.check_permission(subscriber, &resource, Action::Bind).is_allow() {
            return Err(GatewayError::Forbidden(format!(
                "no approved follow of {publisher_id} covers {pattern:?}"
            )));
        }
        let expires_at = self.store.covering_permission(sub_id, publisher_id, pattern);
        let key = BindingKey {
            subscriber_id: sub_id.clone(),
            exchange: publisher_id.to_string(),
            pattern: pattern.to_string(),
        };

        let (pub_node, sub_node) = match self.router.mode() {
            RoutingMode::Clustered => {
                let any = self.node_for(sub_owner)?;
                (any.clone(), any)
            }
            _ => (self.node_for(&publisher.owner)?, self.node_for(sub_owner)?),
        };

        if pub_node.node_id == sub_node.node_id {
            let binding = Binding {
                exchange: publisher_id.to_string(),
                queue: sub_id.clone(),
                pattern: pattern.to_string(),
                expires_at,
            };
            self.call(&sub_node, Some(subscriber), Request::Bind(binding)).await?;
            let record = BindingRecord {
                key,
                publisher_node: pub_node.node_id.clone(),
                subscriber_node: sub_node.node_id.clone(),
                relay: None,
                created_at: self.store.now(),
            };
            self.store.put_binding(record.clone())?;
            return Ok(record);
        }

        let relay_key = RelayKey {
            exchange: publisher_id.to_string(),
            dest_node: sub_node.node_id.clone(),
        };
        let lock = self.store.relay_lock(&relay_key);
        let _guard = lock.lock().await;

        let mut relay = match self.store.relay(&relay_key) {
            Some(r) => r,
            None => self.build_relay(&relay_key, &pub_node, &sub_node).await?,
        };
        self.call_ok(
            &sub_node,
            Request::Bind(Binding {
                exchange: relay.mirror_exchange.clone(),
                queue: sub_id.clone(),
                pattern: pattern.to_string(),
                expires_at,
            }),
        )
        .await?;
        if !relay.dependents.contains(&key) {
            if relay.pattern_refs.get(pattern).copied().unwrap_or(0) == 0 {
                self.call_ok(
                    &pub_node,
                    Request::Bind(Binding {
                        exchange: publisher_id.to_string(),
                        queue: relay.staging_queue.clone(),
                        pattern: pattern.to_string(),
                        expires_at: None,
                    }),
                )
                .await?;
            }
            *relay.pattern_refs.entry(pattern.to_string()).or_insert(0) += 1;
            relay.dependents.insert(key.clone());
        }
        self.store.put_relay(relay)?;
        let record = BindingRecord {
            key,
            publisher_node: pub_node.node_id.clone(),
            subscriber_node: sub_node.node_id.clone(),
            relay: Some(relay_key),
            created_at: self.store.now(),
        };
        self.store.put_binding(record.clone())?;
        Ok(record)
    }

    async fn build_relay(
        &self,
        key: &RelayKey,
        pub_node: &NodeDescriptor,
        sub_node: &NodeDescriptor,
    ) -> Result<RelayRecord, GatewayError> {
        let staging = staging_queue(&key.exchange, &key.dest_node);
        let mirror = mirror_exchange(&key.exchange);
        self.call_ok(pub_node, Request::DeclareQueue { name: staging.clone(), depth_limit: 0 })
            .await?;
        self.call_ok(sub_node, Request::DeclareExchange { name: mirror.clone() })
            .await?;
        let spec = ShovelSpec {
            source_queue: staging.clone(),
            dest_node: sub_node.node_id.clone(),
            dest_address: sub_node.address.to_string(),
            dest_exchange: mirror.clone(),
        };
        let shovel_id = match self.call(pub_node, None, Request::CreateShovel(spec)).await? {
            Response::ShovelId(id) => id,
            other => return Err(GatewayError::Internal(format!("unexpected broker reply {other:?}"))),
        };
        let record = RelayRecord {
            key: key.clone(),
            source_node: pub_node.node_id.clone(),
            staging_queue: staging,
            mirror_exchange: mirror,
            shovel_id,
            pattern_refs: Default::default(),
            dependents: Default::default(),
        };
        self.store.put_relay(record.clone())?;
        Ok(record)
    }

    /// Removes a binding and, when it was the last user, its relay chain.
    /// Returns false if no such binding was tracked.
    pub async fn unbind(&self, key: &BindingKey) -> Result<bool, GatewayError> {
        let Some(record) = self.store.binding(key) else {
            return Ok(false);
        };
        let Some(relay_key) = record.relay.clone() else {
            let node = match self.router.mode() {
                RoutingMode::Clustered => self.node_for(&key.subscriber_id)?,
                _ => self.node_by_id(&record.subscriber_node)?,
            };
            self.call_ok(
                &node,
                Request::Unbind {
                    exchange: key.exchange.clone(),
                    queue: key.subscriber_id.clone(),
                    pattern: key.pattern.clone(),
                },
            )
            .await?;
            self.store.remove_binding(key)?;
            return Ok(true);
        };

        let lock = self.store.relay_lock(&relay_key);
        let _guard = lock.lock().await;
        let pub_node = self.node_by_id(&record.publisher_node)?;
        let sub_node = self.node_by_id(&record.subscriber_node)?;
        if let Some(mut relay) = self.store.relay(&relay_key) {
            self.call_ok(
                &sub_node,
                Request::Unbind {
                    exchange: relay.mirror_exchange.clone(),
                    queue: key.subscriber_id.clone(),
                    pattern: key.pattern.clone(),
                },
            )
            .await?;
            if relay.dependents.remove(key) {
                let refs = relay.pattern_refs.entry(key.pattern.clone()).or_insert(1);
                *refs = refs.saturating_sub(1);
                if *refs == 0 {
                    relay.pattern_refs.remove(&key.pattern);
                    self.call_ok(
                        &pub_node,
                        Request::Unbind {
                            exchange: key.exchange.clone(),
                            queue: relay.staging_queue.clone(),
                            pattern: key.pattern.clone(),
                        },
                    )
                    .await?;
                }
            }
            if relay.dependents.is_empty() {
                self.call_ok(&pub_node, Request::DeleteShovel { shovel_id: relay.shovel_id.clone() })
                    .await?;
                self.call_ok(&pub_node, Request::DeleteQueue { name: relay.staging_queue.clone() })
                    .await?;
                self.call_ok(&sub_node, Request::DeleteExchange { name: relay.mirror_exchange.clone() })
                    .await?;
                self.store.remove_relay(&relay_key)?;
            } else {
                self.store.put_relay(relay)?;
            }
        }
        self.store.remove_binding(key)?;
        Ok(true)
    }

    /// Admin-level call used by utility services.
    pub async fn admin_call(&self, node: &NodeDescriptor, request: Request) -> Result<Response, BrokerError> {
        let pool = self.pools.pool(&node.node_id, &node.address.to_string());
        match pool.call(None, request).await {
            Ok(r) => Ok(r),
            Err(super::pool::PoolError::Broker(e)) => Err(e),
            Err(e) => Err(BrokerError::Unavailable(e.to_string())),
        }
    }
}
