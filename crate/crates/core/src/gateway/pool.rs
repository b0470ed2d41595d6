//! Per-node pool of authenticated broker channels.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use tokio::sync::{OwnedSemaphorePermit, Semaphore};

use crate::auth::Principal;
use crate::broker::protocol::{Request, Response};
use crate::broker::{BrokerClient, BrokerError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSettings {
    pub max_per_node: usize,
    pub acquire_timeout: Duration,
    /// When false every lease opens a fresh channel and closes it on release.
    pub enabled: bool,
}

impl Default for PoolSettings {
    fn default() -> Self {
        Self {
            max_per_node: 16,
            acquire_timeout: Duration::from_secs(5),
            enabled: true,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PoolError {
    #[error("pool exhausted for {0}")]
    Exhausted(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolCounters {
    pub created: u64,
    pub reused: u64,
    pub discarded: u64,
    pub free: usize,
}

#[derive(Debug)]
pub struct ChannelPool {
    node_id: String,
    address: String,
    api_key: String,
    settings: PoolSettings,
    permits: Arc<Semaphore>,
    free: Mutex<Vec<BrokerClient>>,
    created: AtomicU64,
    reused: AtomicU64,
    discarded: AtomicU64,
}

/// A leased channel. Dropping it returns a healthy channel to the pool;
/// a channel dropped mid-call is discarded.
#[derive(Debug)]
pub struct Lease<'a> {
    pool: &'a ChannelPool,
    client: Option<BrokerClient>,
    in_call: bool,
    _permit: OwnedSemaphorePermit,
}

impl ChannelPool {
    pub fn new(node_id: &str, address: &str, api_key: &str, settings: PoolSettings) -> Self {
        Self {
            node_id: node_id.to_string(),
            address: address.to_string(),
            api_key: api_key.to_string(),
            permits: Arc::new(Semaphore::new(settings.max_per_node.max(1))),
            settings,
            free: Mutex::new(Vec::new()),
            created: AtomicU64::new(0),
            reused: AtomicU64::new(0),
            discarded: AtomicU64::new(0),
        }
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub async fn acquire(&self) -> Result<Lease<'_>, PoolError> {
        let permit = tokio::time::timeout(self.settings.acquire_timeout, self.permits.clone().acquire_owned())
            .await
            .map_err(|_| PoolError::Exhausted(self.node_id.clone()))?
            .expect("pool semaphore is never closed");
        let pooled = if self.settings.enabled {
            self.free.lock().pop()
        } else {
            None
        };
        let client = match pooled {
            Some(c) => {
                self.reused.fetch_add(1, Ordering::Relaxed);
                c
            }
            None => {
                let c = BrokerClient::connect(&self.address, &self.api_key).await?;
                self.created.fetch_add(1, Ordering::Relaxed);
                c
            }
        };
        Ok(Lease {
            pool: self,
            client: Some(client),
            in_call: false,
            _permit: permit,
        })
    }

    fn release(&self, client: BrokerClient, healthy: bool) {
        if healthy && self.settings.enabled && !client.is_broken() {
            self.free.lock().push(client);
        } else {
            self.discarded.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Leases a channel for a single request.
    pub async fn call(&self, acting: Option<&Principal>, request: Request) -> Result<Response, PoolError> {
        let mut lease = self.acquire().await?;
        Ok(lease.call(acting, request).await?)
    }

    pub fn counters(&self) -> PoolCounters {
        PoolCounters {
            created: self.created.load(Ordering::Relaxed),
            reused: self.reused.load(Ordering::Relaxed),
            discarded: self.discarded.load(Ordering::Relaxed),
            free: self.free.lock().len(),
        }
    }
}

impl Lease<'_> {
    pub async fn call(&mut self, acting: Option<&Principal>, request: Request) -> Result<Response, BrokerError> {
        let client = self.client.as_mut().expect("lease holds a channel until drop");
        self.in_call = true;
        let result = client.call(acting, request).await;
        self.in_call = false;
        result
    }

    pub fn is_broken(&self) -> bool {
        self.client.as_ref().is_none_or(|c| c.is_broken())
    }
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        if let Some(c) = self.client.take() {
            self.pool.release(c, !self.in_call);
        }
    }
}

/// One [`ChannelPool`] per broker node, created on first use.
#[derive(Debug)]
pub struct ChannelPools {
    api_key: String,
    settings: PoolSettings,
    pools: RwLock<HashMap<String, Arc<ChannelPool>>>,
}

impl ChannelPools {
    pub fn new(api_key: impl Into<String>, settings: PoolSettings) -> Self {
        Self {
            api_key: api_key.into(),
            settings,
            pools: RwLock::new(HashMap::new()),
        }
    }

    pub fn settings(&self) -> &PoolSettings {
        &self.settings
    }

    pub fn pool(&self, node_id: &str, address: &str) -> Arc<ChannelPool> {
        if let Some(p) = self.pools.read().get(node_id) {
            if p.address() == address {
                return p.clone();
            }
        }
        let pool = Arc::new(ChannelPool::new(node_id, address, &self.api_key, self.settings.clone()));
        self.pools.write().insert(node_id.to_string(), pool.clone());
        pool
    }

    /// Counters summed over every node.
    pub fn counters(&self) -> PoolCounters {
        self.pools
            .read()
            .values()
            .map(|p| p.counters())
            .fold(PoolCounters::default(), |a, c| PoolCounters {
                created: a.created + c.created,
                reused: a.reused + c.reused,
                discarded: a.discarded + c.discarded,
                free: a.free + c.free,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::AuthStore;
    use crate::broker::{BrokerNode, BrokerServer, NodeConfig, ServerHandle};
    use crate::clock::ManualClock;
    use crate::router::RoutingMode;

    async fn node() -> ServerHandle {
        let clock = Arc::new(ManualClock::new(0));
        let store = Arc::new(AuthStore::in_memory("k", clock.clone()));
        let node = BrokerNode::new(NodeConfig::new("n1", RoutingMode::Single, "k"), store, clock);
        BrokerServer::start(Arc::new(node)).await.unwrap()
    }

    fn settings(max: usize) -> PoolSettings {
        PoolSettings {
            max_per_node: max,
            acquire_timeout: Duration::from_millis(100),
            enabled: true,
        }
    }

    #[tokio::test]
    async fn release_then_acquire_reuses() {
        let h = node().await;
        let pool = ChannelPool::new("n1", &h.address(), "k", settings(4));
        drop(pool.acquire().await.unwrap());
        drop(pool.acquire().await.unwrap());
        let c = pool.counters();
        assert_eq!((c.created, c.reused), (1, 1));
        h.shutdown().await;
    }

    #[tokio::test]
    async fn exhausted_pool_times_out() {
        let h = node().await;
        let pool = ChannelPool::new("n1", &h.address(), "k", settings(2));
        let a = pool.acquire().await.unwrap();
        let b = pool.acquire().await.unwrap();
        assert!(matches!(pool.acquire().await, Err(PoolError::Exhausted(_))));
        drop(a);
        assert!(pool.acquire().await.is_ok());
        drop(b);
        h.shutdown().await;
    }

    #[tokio::test]
    async fn broken_channel_is_not_pooled() {
        let h = node().await;
        let addr = h.address();
        let pool = ChannelPool::new("n1", &addr, "k", settings(2));
        let mut lease = pool.acquire().await.unwrap();
        h.shutdown().await;
        assert!(lease.call(None, Request::Ping).await.is_err());
        assert!(lease.is_broken());
        drop(lease);
        assert_eq!(pool.counters().free, 0);
        assert_eq!(pool.counters().discarded, 1);
    }

    #[tokio::test]
    async fn disabled_pool_opens_per_lease() {
        let h = node().await;
        let mut s = settings(2);
        s.enabled = false;
        let pool = ChannelPool::new("n1", &h.address(), "k", s);
        for _ in 0..3 {
            pool.call(None, Request::Ping).await.unwrap();
        }
        assert_eq!(pool.counters().created, 3);
        h.shutdown().await;
    }
}
