//! In-process deployment: N broker nodes on ephemeral ports, G gateway
//! replicas sharing one auth store, and the utility daemons.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;

use crate::auth::{AuthConfig, AuthStore};
use crate::broker::{BrokerNode, BrokerServer, NodeConfig, PeerConfig, ServerHandle};
use crate::clock::{self, SharedClock};
use crate::gateway::{Fabric, Gateway, GatewayHandle, PoolSettings};
use crate::router::{FederationRouter, NodeAddress, NodeRegistry, RoutingMode};
use crate::utility::{self, Archiver, DaemonHandle, UnbindDaemon};

#[derive(Debug, Clone)]
pub struct DeploymentConfig {
    pub mode: RoutingMode,
    pub nodes: usize,
    pub gateways: usize,
    pub admin_key: String,
    pub key_iterations: u32,
    pub pool: PoolSettings,
    /// Template for every node; id, port, mode and peers are filled in.
    pub node: NodeConfig,
    pub archive_dir: Option<PathBuf>,
    /// Start the periodic daemons. Ticks can always be driven by hand.
    pub run_daemons: bool,
    pub archive_period: Duration,
    pub unbind_period: Duration,
    pub clock: Option<SharedClock>,
}

impl DeploymentConfig {
    pub fn new(mode: RoutingMode, nodes: usize) -> Self {
        Self {
            mode,
            nodes,
            gateways: 1,
            admin_key: "vermillion-admin".into(),
            key_iterations: crate::auth::keys::DEFAULT_ITERATIONS,
            pool: PoolSettings::default(),
            node: NodeConfig::default(),
            archive_dir: None,
            run_daemons: false,
            archive_period: utility::DEFAULT_ARCHIVE_PERIOD,
            unbind_period: utility::DEFAULT_UNBIND_PERIOD,
            clock: None,
        }
    }
}

#[derive(Debug)]
pub struct Deployment {
    pub config: DeploymentConfig,
    pub clock: SharedClock,
    pub store: Arc<AuthStore>,
    pub registry: NodeRegistry,
    /// Fabric used by the daemons and by tests needing admin access.
    pub fabric: Arc<Fabric>,
    pub archiver: Option<Arc<Archiver>>,
    pub unbind: Arc<UnbindDaemon>,
    nodes: Vec<Option<ServerHandle>>,
    gateways: Vec<GatewayHandle>,
    daemons: Vec<DaemonHandle>,
}

pub fn node_id(index: usize) -> String {
    format!("rabbit{}", index + 1)
}

impl Deployment {
    pub async fn start(config: DeploymentConfig) -> std::io::Result<Self> {
        let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidInput, m);
        if config.nodes == 0 || config.gateways == 0 {
            return Err(invalid("need at least one node and one gateway".into()));
        }
        let clock = config.clock.clone().unwrap_or_else(clock::system);
        let mut auth = AuthConfig::new(config.admin_key.clone());
        auth.key_iterations = config.key_iterations;
        let store = Arc::new(AuthStore::open(auth, clock.clone()).map_err(|e| invalid(e.to_string()))?);

        let mut listeners = Vec::new();
        for _ in 0..config.nodes {
            listeners.push(TcpListener::bind((config.node.host.as_str(), 0)).await?);
        }
        let addresses: Vec<String> = listeners
            .iter()
            .map(|l| l.local_addr().map(|a| a.to_string()))
            .collect::<Result<_, _>>()?;

        let mut registry = NodeRegistry::new();
        let mut nodes = Vec::new();
        for (i, listener) in listeners.into_iter().enumerate() {
            let id = node_id(i);
            let port = listener.local_addr()?.port();
            registry
                .register(id.clone(), NodeAddress::new(config.node.host.clone(), port))
                .map_err(|e| invalid(e.to_string()))?;
            let mut nc = config.node.clone();
            nc.node_id = id.clone();
            nc.port = port;
            nc.mode = config.mode;
            nc.system_key = config.admin_key.clone();
            nc.peers = if config.mode == RoutingMode::Clustered {
                (0..config.nodes)
                    .filter(|&j| j != i)
                    .map(|j| PeerConfig { node_id: node_id(j), address: addresses[j].clone() })
                    .collect()
            } else {
                Vec::new()
            };
            let node = BrokerNode::new(nc, store.clone(), clock.clone());
            nodes.push(Some(BrokerServer::serve(listener, Arc::new(node))));
        }

        let make_fabric = || -> std::io::Result<Arc<Fabric>> {
            let router = FederationRouter::new(config.mode, registry.clone()).map_err(|e| invalid(e.to_string()))?;
            Ok(Gateway::new_fabric(store.clone(), Arc::new(router), &config.admin_key, config.pool.clone()))
        };
        let mut gateways = Vec::new();
        for _ in 0..config.gateways {
            gateways.push(Gateway::start(make_fabric()?, "127.0.0.1:0").await?);
        }

        let fabric = make_fabric()?;
        let archiver = config
            .archive_dir
            .clone()
            .map(|dir| Arc::new(Archiver::new(fabric.clone(), dir, clock.clone())));
        let unbind = Arc::new(UnbindDaemon::new(fabric.clone()));
        let mut daemons = Vec::new();
        if config.run_daemons {
            if let Some(a) = &archiver {
                let a = a.clone();
                daemons.push(utility::spawn_periodic(config.archive_period, move || {
                    let a = a.clone();
                    async move {
                        a.tick().await;
                    }
                }));
            }
            let u = unbind.clone();
            let c = clock.clone();
            daemons.push(utility::spawn_periodic(config.unbind_period, move || {
                let u = u.clone();
                let now = c.now_ms();
                async move {
                    u.tick(now).await;
                }
            }));
        }

        Ok(Self {
            config,
            clock,
            store,
            registry,
            fabric,
            archiver,
            unbind,
            nodes,
            gateways,
            daemons,
        })
    }

    pub fn gateway_url(&self, index: usize) -> String {
        self.gateways[index % self.gateways.len()].base_url()
    }

    pub fn gateway_urls(&self) -> Vec<String> {
        self.gateways.iter().map(|g| g.base_url()).collect()
    }

    pub fn gateway(&self, index: usize) -> &GatewayHandle {
        &self.gateways[index]
    }

    pub fn node(&self, index: usize) -> Option<&ServerHandle> {
        self.nodes.get(index).and_then(|n| n.as_ref())
    }

    pub fn node_address(&self, index: usize) -> String {
        self.registry.nodes()[index].address.to_string()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Stops one broker node, simulating a crash.
    pub async fn stop_node(&mut self, index: usize) {
        if let Some(h) = self.nodes.get_mut(index).and_then(|n| n.take()) {
            h.shutdown().await;
        }
    }

    pub async fn shutdown(mut self) {
        for d in self.daemons.drain(..) {
            d.stop().await;
        }
        for g in self.gateways.drain(..) {
            g.shutdown().await;
        }
        for n in self.nodes.drain(..).flatten() {
            n.shutdown().await;
        }
    }
}
