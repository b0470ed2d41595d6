use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use super::client::ApiClient;
use super::profile::LoadProfile;
use super::report::{percentile, ConcurrencySample, NodeOccupancy, ThroughputReport};
use crate::broker::protocol::{Request, Response};
use crate::deploy::{Deployment, DeploymentConfig};
use crate::gateway::Fabric;
use crate::router::{compute_bucket, NodeRegistry, RoutingMode};

/// Key-hash work factor for throwaway benchmark deployments.
pub const BENCH_KEY_ITERATIONS: u32 = 1_000;

const SAMPLE_EVERY: Duration = Duration::from_millis(100);
const DRAIN_TIMEOUT: Duration = Duration::from_secs(30);
const IDLE_POLL: Duration = Duration::from_millis(10);

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where load is sent.
#[derive(Debug, Clone)]
pub struct Target {
    pub gateways: Vec<String>,
    pub admin_key: String,
    pub mode: RoutingMode,
    pub registry: NodeRegistry,
    /// Admin access to the nodes, for per-node counters.
    pub fabric: Option<Arc<Fabric>>,
}

impl Target {
    pub fn of(deployment: &Deployment) -> Self {
        Self {
            gateways: deployment.gateway_urls(),
            admin_key: deployment.config.admin_key.clone(),
            mode: deployment.config.mode,
            registry: deployment.registry.clone(),
            fabric: Some(deployment.fabric.clone()),
        }
    }
}

#[derive(Debug, Clone)]
struct Producer {
    provider: String,
    publisher: String,
    key: String,
}

#[derive(Debug, Clone)]
struct Consumer {
    key: String,
}

/// Starts a fresh in-process deployment for the profile, runs it and tears
/// the deployment down.
pub async fn run_load(profile: &LoadProfile) -> Result<ThroughputReport, LoadError> {
    profile.validate().map_err(LoadError::Invalid)?;
    let mut config = DeploymentConfig::new(profile.mode, profile.node_count);
    config.gateways = profile.gateways;
    config.key_iterations = BENCH_KEY_ITERATIONS;
    let deployment = Deployment::start(config).await?;
    let result = run_against(&Target::of(&deployment), profile).await;
    deployment.shutdown().await;
    result
}

fn http_client(profile: &LoadProfile) -> reqwest::Client {
    reqwest::Client::builder()
        .pool_max_idle_per_host(profile.producers + profile.consumers + 4)
        .build()
        .expect("http client")
}

fn provider_name(index: usize, tag: &str) -> String {
    let letter = (b'a' + (index % 26) as u8) as char;
    format!("{letter}{tag}p{index}")
}

async fn expect(reply: Result<super::client::Reply, reqwest::Error>, what: &str) -> Result<serde_json::Value, LoadError> {
    match reply {
        Ok(r) if r.ok() => Ok(r.body),
        Ok(r) => Err(LoadError::Setup(format!("{what}: HTTP {} {}", r.status, r.body))),
        Err(e) => Err(LoadError::Setup(format!("{what}: {e}"))),
    }
}

async fn setup(
    target: &Target,
    profile: &LoadProfile,
    http: &reqwest::Client,
    tag: &str,
) -> Result<(Vec<Producer>, Vec<Consumer>), LoadError> {
    let gw = |i: usize| ApiClient::with_client(target.gateways[i % target.gateways.len()].clone(), http.clone());
    let mut producers = Vec::new();
    let mut provider_keys = Vec::new();
    for i in 0..profile.producers {
        let api = gw(i);
        let provider = provider_name(i, tag);
        let body = expect(api.register_provider(&target.admin_key, &provider).await, "register provider").await?;
        let pkey = body["apikey"].as_str().unwrap_or_default().to_string();
        let publisher = format!("{provider}-pub");
        let item = json!({ "type": "loadgen", "producer": i });
        let body = expect(api.register_entity(&pkey, &publisher, "publisher", item).await, "register publisher").await?;
        producers.push(Producer {
            provider,
            publisher,
            key: body["apikey"].as_str().unwrap_or_default().to_string(),
        });
        provider_keys.push(pkey);
    }
    let mut consumers = Vec::new();
    for j in 0..profile.consumers {
        let api = gw(j);
        let owner = j % profile.producers;
        let p = &producers[owner];
        let subscriber = format!("{}-sub{j}", p.provider);
        let body = expect(
            api.register_entity(&provider_keys[owner], &subscriber, "subscriber", json!({ "type": "loadgen-sink" }))
                .await,
            "register subscriber",
        )
        .await?;
        let skey = body["apikey"].as_str().unwrap_or_default().to_string();
        let body = expect(api.follow(&skey, &p.publisher, "#").await, "follow").await?;
        let follow_id = body["follow_id"].as_str().unwrap_or_default().to_string();
        expect(api.share(&provider_keys[owner], &follow_id, None).await, "share").await?;
        expect(api.bind(&skey, &p.publisher, "#").await, "bind").await?;
        consumers.push(Consumer { key: skey });
    }
    Ok((producers, consumers))
}

/// Publish body whose `payload` serialises to exactly `size` bytes when
/// `size` exceeds the fixed fields.
pub fn publish_body(producer: usize, seq: usize, size: usize) -> Bytes {
    let base = format!(r#"{{"seq":{seq},"producer":{producer},"pad":""}}"#);
    let pad = "x".repeat(size.saturating_sub(base.len()));
    let payload = format!(r#"{{"seq":{seq},"producer":{producer},"pad":"{pad}"}}"#);
    Bytes::from(format!(r#"{{"routing_key":"data.p{producer}","payload":{payload}}}"#))
}

async fn node_published(target: &Target) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    let Some(fabric) = &target.fabric else {
        return out;
    };
    for node in target.registry.nodes() {
        if let Ok(Response::Stats(s)) = fabric.admin_call(node, Request::Stats).await {
            out.insert(node.node_id.clone(), s.published);
        }
    }
    out
}

struct Sample {
    started: Duration,
    latency: Duration,
    status: Option<u16>,
}

/// Registers the workload through the gateway, then runs producers and
/// consumers concurrently and measures publish throughput.
pub async fn run_against(target: &Target, profile: &LoadProfile) -> Result<ThroughputReport, LoadError> {
    profile.validate().map_err(LoadError::Invalid)?;
    if target.gateways.is_empty() {
        return Err(LoadError::Invalid("no gateway to target".into()));
    }
    let mut rng = StdRng::seed_from_u64(profile.seed);
    let tag: String = (0..4).map(|_| char::from(b'a' + rng.gen_range(0..26u8))).collect();
    let http = http_client(profile);
    let (producers, consumers) = setup(target, profile, &http, &tag).await?;
    let before = node_published(target).await;

    let start = Instant::now();
    let active = Arc::new(AtomicUsize::new(producers.len()));
    let publishing_done = Arc::new(AtomicBool::new(false));
    let received = Arc::new(AtomicU64::new(0));

    let sampler = {
        let active = active.clone();
        let done = publishing_done.clone();
        tokio::spawn(async move {
            let mut samples = Vec::new();
            while !done.load(Ordering::Relaxed) {
                samples.push(ConcurrencySample {
                    at_ms: start.elapsed().as_millis() as u64,
                    active_producers: active.load(Ordering::Relaxed),
                });
                tokio::time::sleep(SAMPLE_EVERY).await;
            }
            samples.push(ConcurrencySample {
                at_ms: start.elapsed().as_millis() as u64,
                active_producers: 0,
            });
            samples
        })
    };

    let mut consumer_tasks = Vec::new();
    for (j, c) in consumers.iter().enumerate() {
        let api = ApiClient::with_client(target.gateways[j % target.gateways.len()].clone(), http.clone());
        let key = c.key.clone();
        let done = publishing_done.clone();
        let received = received.clone();
        let batch = profile.subscribe_batch;
        consumer_tasks.push(tokio::spawn(async move {
            let mut idle_after_done = 0;
            loop {
                let finished = done.load(Ordering::Relaxed);
                let n = match api.subscribe(&key, batch).await {
                    Ok(r) if r.ok() => r.body["messages"].as_array().map_or(0, |m| m.len()),
                    _ => 0,
                };
                received.fetch_add(n as u64, Ordering::Relaxed);
                if n == 0 {
                    if finished {
                        idle_after_done += 1;
                        if idle_after_done >= 3 {
                            break;
                        }
                    }
                    tokio::time::sleep(IDLE_POLL).await;
                } else {
                    idle_after_done = 0;
                }
            }
        }));
    }

    let mut producer_tasks = Vec::new();
    for (i, p) in producers.iter().enumerate() {
        let api = ApiClient::with_client(target.gateways[i % target.gateways.len()].clone(), http.clone());
        let key = p.key.clone();
        let active = active.clone();
        let m = profile.messages_per_producer;
        let size = profile.payload_bytes;
        producer_tasks.push(tokio::spawn(async move {
            let mut samples = Vec::with_capacity(m);
            for seq in 0..m {
                let body = publish_body(i, seq, size);
                let t0 = Instant::now();
                let status = api.publish_raw(&key, body).await.ok().map(|r| r.status);
                samples.push(Sample {
                    started: t0 - start,
                    latency: t0.elapsed(),
                    status,
                });
            }
            active.fetch_sub(1, Ordering::Relaxed);
            samples
        }));
    }

    let mut samples = Vec::new();
    for t in producer_tasks {
        samples.extend(t.await.map_err(|e| LoadError::Setup(format!("producer task: {e}")))?);
    }
    let wall = start.elapsed();
    publishing_done.store(true, Ordering::Relaxed);
    let concurrency = sampler.await.unwrap_or_default();
    let drain = futures::future::join_all(consumer_tasks);
    if tokio::time::timeout(DRAIN_TIMEOUT, drain).await.is_err() {
        tracing::warn!("consumers still draining at timeout");
    }
    let after = node_published(target).await;

    let mut ok = 0u64;
    let mut failed = 0u64;
    let mut failures_by_status = BTreeMap::new();
    for s in &samples {
        match s.status {
            Some(code) if (200..300).contains(&code) => ok += 1,
            other => {
                failed += 1;
                let label = other.map_or("transport".to_string(), |c| c.to_string());
                *failures_by_status.entry(label).or_insert(0) += 1;
            }
        }
    }

    let succeeded = |s: &&Sample| s.status.is_some_and(|c| (200..300).contains(&c));
    let warmup_skipped = wall <= profile.warmup || !samples.iter().filter(succeeded).any(|s| s.started >= profile.warmup);
    let window_start = if warmup_skipped { Duration::ZERO } else { profile.warmup };
    let measured: Vec<&Sample> = samples
        .iter()
        .filter(succeeded)
        .filter(|s| s.started >= window_start)
        .collect();
    let measured_seconds = (wall - window_start).as_secs_f64();
    let mean_rps = if measured_seconds > 0.0 {
        measured.len() as f64 / measured_seconds
    } else {
        0.0
    };
    let mut latencies: Vec<f64> = measured.iter().map(|s| s.latency.as_secs_f64() * 1e3).collect();
    latencies.sort_by(f64::total_cmp);

    let bucket_occupancy = target
        .registry
        .nodes()
        .iter()
        .map(|n| {
            let predicted = match target.mode {
                RoutingMode::Clustered => None,
                RoutingMode::Single => Some(producers.len()),
                RoutingMode::Federated => Some(
                    producers
                        .iter()
                        .filter(|p| compute_bucket(p.provider.as_bytes(), target.registry.len()).ok() == Some(n.bucket))
                        .count(),
                ),
            };
            let published = after
                .get(&n.node_id)
                .map(|a| a.saturating_sub(before.get(&n.node_id).copied().unwrap_or(0)));
            NodeOccupancy {
                node_id: n.node_id.clone(),
                bucket: n.bucket,
                predicted_producers: predicted,
                published,
            }
        })
        .collect();

    Ok(ThroughputReport {
        mode: target.mode,
        profile: profile.clone(),
        wall_seconds: wall.as_secs_f64(),
        measured_seconds,
        warmup_skipped,
        requests_ok: ok,
        requests_failed: failed,
        failures_by_status,
        mean_rps,
        median_latency_ms: percentile(&latencies, 0.5),
        p99_latency_ms: percentile(&latencies, 0.99),
        messages_received: received.load(Ordering::Relaxed),
        bucket_occupancy,
        concurrency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_hits_requested_payload_size() {
        let body = publish_body(3, 17, 220);
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["payload"].to_string().len(), 220);
        assert_eq!(v["payload"]["seq"], 17);
        let big = publish_body(0, 0, 10 * 1024);
        let v: serde_json::Value = serde_json::from_slice(&big).unwrap();
        assert_eq!(v["payload"].to_string().len(), 10 * 1024);
    }

    #[test]
    fn provider_names_cycle_the_alphabet() {
        let firsts: Vec<char> = (0..27).map(|i| provider_name(i, "t").chars().next().unwrap()).collect();
        assert_eq!(firsts[0], 'a');
        assert_eq!(firsts[25], 'z');
        assert_eq!(firsts[26], 'a');
    }
}
