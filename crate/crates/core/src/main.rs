use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use vermillion::auth::backend::{AuthBackend, CachedBackend, HttpAuthBackend};
use vermillion::auth::{AuthConfig, AuthStore};
use vermillion::broker::{BrokerNode, BrokerServer, NodeConfig};
use vermillion::clock;
use vermillion::deploy::{Deployment, DeploymentConfig};
use vermillion::gateway::{Gateway, PoolSettings};
use vermillion::loadgen::{self, LoadProfile, ThroughputReport};
use vermillion::router::topology::TopologyFile;
use vermillion::router::{FederationRouter, RoutingMode};
use vermillion::utility::{self, Archiver, UnbindDaemon};

#[derive(Parser)]
#[command(name = "vermillion", version, about = "Federated IoT pub/sub middleware")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one broker node.
    Broker(BrokerArgs),
    /// Run a gateway with the auth store and utility daemons.
    Gateway(GatewayArgs),
    /// Run a whole deployment in one process.
    Up(UpArgs),
    /// Load harness.
    Loadgen {
        #[command(subcommand)]
        command: LoadCommand,
    },
}

#[derive(Args)]
struct BrokerArgs {
    /// Node configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `auth_url` from the config file.
    #[arg(long)]
    auth_url: Option<String>,
}

#[derive(Args)]
struct PoolArgs {
    /// Channels per broker node.
    #[arg(long, default_value_t = 16)]
    pool_size: usize,
    /// Open a fresh broker channel per operation.
    #[arg(long)]
    no_pool: bool,
    #[arg(long, default_value_t = 5000)]
    pool_timeout_ms: u64,
}

impl PoolArgs {
    fn settings(&self) -> PoolSettings {
        PoolSettings {
            max_per_node: self.pool_size,
            acquire_timeout: Duration::from_millis(self.pool_timeout_ms),
            enabled: !self.no_pool,
        }
    }
}

#[derive(Args)]
struct GatewayArgs {
    /// Topology file listing broker nodes.
    #[arg(long)]
    topology: PathBuf,
    /// Overrides the topology file's mode.
    #[arg(long, env = "VERMILLION_MODE")]
    mode: Option<RoutingMode>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    #[arg(long, env = "VERMILLION_ADMIN_KEY")]
    admin_key: String,
    /// Auth store snapshot directory; in memory when absent.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Enables the archiver.
    #[arg(long)]
    archive_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    archive_period_ms: u64,
    #[arg(long, default_value_t = 5000)]
    unbind_period_ms: u64,
    #[command(flatten)]
    pool: PoolArgs,
}

#[derive(Args)]
struct UpArgs {
    #[arg(long, default_value = "federated")]
    mode: RoutingMode,
    #[arg(long, default_value_t = 2)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    gateways: usize,
    #[arg(long, env = "VERMILLION_ADMIN_KEY", default_value = "vermillion-admin")]
    admin_key: String,
    #[arg(long)]
    archive_dir: Option<PathBuf>,
    #[command(flatten)]
    pool: PoolArgs,
}

#[derive(Args, Clone)]
struct ProfileArgs {
    #[arg(long, default_value_t = 10)]
    producers: usize,
    #[arg(long, default_value_t = 100)]
    messages: usize,
    #[arg(long, default_value_t = 0)]
    consumers: usize,
    #[arg(long, default_value_t = loadgen::SMALL_PAYLOAD)]
    payload: usize,
    #[arg(long, default_value = "federated")]
    mode: RoutingMode,
    #[arg(long, default_value_t = 1)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    gateways: usize,
    #[arg(long, default_value_t = 5000)]
    warmup_ms: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    max_consumer_factor: usize,
    #[arg(long, default_value_t = 100)]
    subscribe_batch: u32,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write a tab-separated summary table here.
    #[arg(long)]
    table: Option<PathBuf>,
}

impl ProfileArgs {
    fn profile(&self) -> LoadProfile {
        LoadProfile {
            producers: self.producers,
            messages_per_producer: self.messages,
            consumers: self.consumers,
            payload_bytes: self.payload,
            mode: self.mode,
            node_count: self.nodes,
            gateways: self.gateways,
            warmup: Duration::from_millis(self.warmup_ms),
            seed: self.seed,
            max_consumer_factor: self.max_consumer_factor,
            subscribe_batch: self.subscribe_batch,
        }
    }
}

#[derive(Subcommand)]
enum LoadCommand {
    /// One run against a fresh in-process deployment.
    Run(ProfileArgs),
    /// Paired federated and clustered runs.
    Compare {
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, default_value_t = 5)]
        pairs: usize,
    },
    /// One run per payload size.
    Sweep {
        #[command(flatten)]
        profile: ProfileArgs,
        /// Comma-separated payload sizes in bytes.
        #[arg(long, value_delimiter = ',', default_values_t = [loadgen::SMALL_PAYLOAD, loadgen::LARGE_PAYLOAD])]
        sizes: Vec<usize>,
    },
}

type AnyError = Box<dyn std::error::Error + Send + Sync>;

#[tokio::main]
async fn main() -> Result<(), AnyError> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Broker(a) => broker(a).await,
        Command::Gateway(a) => gateway(a).await,
        Command::Up(a) => up(a).await,
        Command::Loadgen { command } => load(command).await,
    }
}

async fn broker(a: BrokerArgs) -> Result<(), AnyError> {
    let mut config = NodeConfig::load(&a.config)?;
    if a.auth_url.is_some() {
        config.auth_url = a.auth_url;
    }
    let clock = clock::system();
    let auth: Arc<dyn AuthBackend> = match &config.auth_url {
        Some(url) => Arc::new(CachedBackend::new(
            HttpAuthBackend::new(url.clone(), config.system_key.clone()),
            config.auth_cache_ttl(),
        )),
        None => {
            tracing::warn!("no auth_url, only the system key is accepted");
            Arc::new(AuthStore::in_memory(config.system_key.clone(), clock.clone()))
        }
    };
    let handle = BrokerServer::start(Arc::new(BrokerNode::new(config, auth, clock))).await?;
    println!("broker {} listening on {}", handle.node.node_id(), handle.address());
    tokio::signal::ctrl_c().await?;
    handle.shutdown().await;
    Ok(())
}

async fn gateway(a: GatewayArgs) -> Result<(), AnyError> {
    let topology = TopologyFile::load(&a.topology)?;
    let mode = a.mode.or(topology.mode).unwrap_or(RoutingMode::Federated);
    let router = Arc::new(FederationRouter::new(mode, topology.registry()?)?);
    let clock = clock::system();
    let mut auth = AuthConfig::new(a.admin_key.clone());
    auth.data_dir = a.data_dir;
    let store = Arc::new(AuthStore::open(auth, clock.clone())?);

    let fabric = Gateway::new_fabric(store.clone(), router, &a.admin_key, a.pool.settings());
    let handle = Gateway::start(fabric.clone(), &a.listen).await?;
    println!("gateway ({mode}) listening on {}", handle.base_url());

    let mut daemons = Vec::new();
    if let Some(dir) = a.archive_dir {
        let archiver = Arc::new(Archiver::new(fabric.clone(), dir, clock.clone()));
        daemons.push(utility::spawn_periodic(Duration::from_millis(a.archive_period_ms), move || {
            let archiver = archiver.clone();
            async move {
                archiver.tick().await;
            }
        }));
    }
    let unbind = Arc::new(UnbindDaemon::new(fabric));
    daemons.push(utility::spawn_periodic(Duration::from_millis(a.unbind_period_ms), move || {
        let unbind = unbind.clone();
        let now = clock.now_ms();
        async move {
            unbind.tick(now).await;
        }
    }));

    tokio::signal::ctrl_c().await?;
    for d in daemons {
        d.stop().await;
    }
    handle.shutdown().await;
    Ok(())
}

async fn up(a: UpArgs) -> Result<(), AnyError> {
    let mut config = DeploymentConfig::new(a.mode, a.nodes);
    config.gateways = a.gateways;
    config.admin_key = a.admin_key;
    config.pool = a.pool.settings();
    config.archive_dir = a.archive_dir;
    config.run_daemons = true;
    let d = Deployment::start(config).await?;
    for i in 0..d.node_count() {
        println!("node {} at {}", vermillion::deploy::node_id(i), d.node_address(i));
    }
    for url in d.gateway_urls() {
        println!("gateway at {url}");
    }
    println!("{}", TopologyFile::from_registry(a.mode, &d.registry).to_toml());
    tokio::signal::ctrl_c().await?;
    d.shutdown().await;
    Ok(())
}

fn write_outputs(args: &ProfileArgs, json: String, reports: &[ThroughputReport]) -> Result<(), AnyError> {
    if let Some(path) = &args.json {
        std::fs::write(path, json)?;
    }
    let table = loadgen::table(reports);
    if let Some(path) = &args.table {
        std::fs::write(path, &table)?;
    }
    print!("{table}");
    Ok(())
}

async fn load(command: LoadCommand) -> Result<(), AnyError> {
    match command {
        LoadCommand::Run(args) => {
            let report = loadgen::run_load(&args.profile()).await?;
            print!("{}", report.to_text());
            write_outputs(&args, report.to_json(), std::slice::from_ref(&report))
        }
        LoadCommand::Compare { profile, pairs } => {
            let cmp = loadgen::compare_modes(&profile.profile(), pairs).await?;
            print!("{}", cmp.to_text());
            let reports: Vec<ThroughputReport> =
                cmp.pairs.iter().flat_map(|p| [p.federated.clone(), p.clustered.clone()]).collect();
            write_outputs(&profile, serde_json::to_string_pretty(&cmp)?, &reports)
        }
        LoadCommand::Sweep { profile, sizes } => {
            let reports = loadgen::payload_sweep(&profile.profile(), &sizes).await?;
            for r in &reports {
                print!("{}", r.to_text());
            }
            write_outputs(&profile, serde_json::to_string_pretty(&reports)?, &reports)
        }
    }
}
