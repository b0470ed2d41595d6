//! Pull-based relay from a local queue to an exchange on another node.

use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tokio::task::JoinHandle;

use super::client::BrokerClient;
use super::config::ShovelConfig;
use super::message::{ShovelSpec, ShovelStatus};
use super::protocol::Request;
use super::queue::QueueState;
use super::BrokerError;

#[derive(Debug, Default)]
struct Shared {
    active: AtomicBool,
    stop: AtomicBool,
    relayed: AtomicU64,
    failures: AtomicU32,
}

#[derive(Debug)]
pub(crate) struct ShovelHandle {
    pub id: String,
    pub source_node: String,
    pub spec: ShovelSpec,
    shared: Arc<Shared>,
    task: JoinHandle<()>,
}

impl ShovelHandle {
    pub fn spawn(
        id: String,
        source_node: String,
        spec: ShovelSpec,
        queue: Arc<QueueState>,
        system_key: String,
        config: ShovelConfig,
    ) -> Self {
        let shared = Arc::new(Shared::default());
        shared.active.store(true, Ordering::SeqCst);
        let task = tokio::spawn(relay(
            id.clone(),
            spec.clone(),
            queue,
            system_key,
            config,
            shared.clone(),
        ));
        Self {
            id,
            source_node,
            spec,
            shared,
            task,
        }
    }

    pub fn status(&self) -> ShovelStatus {
        ShovelStatus {
            shovel_id: self.id.clone(),
            source_node: self.source_node.clone(),
            source_queue: self.spec.source_queue.clone(),
            dest_node: self.spec.dest_node.clone(),
            dest_exchange: self.spec.dest_exchange.clone(),
            active: self.shared.active.load(Ordering::SeqCst),
            relayed: self.shared.relayed.load(Ordering::SeqCst),
            consecutive_failures: self.shared.failures.load(Ordering::SeqCst),
        }
    }

    /// Stops the relay; an in-flight batch is returned to the source queue.
    pub async fn stop(self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let abort = self.task.abort_handle();
        if tokio::time::timeout(Duration::from_secs(5), self.task).await.is_err() {
            abort.abort();
        }
    }
}

fn backoff(config: &ShovelConfig, failures: u32) -> Duration {
    let exp = config
        .backoff_base_ms
        .saturating_mul(1u64 << failures.saturating_sub(1).min(16));
    Duration::from_millis(exp.min(config.backoff_max_ms))
}

async fn relay(
    id: String,
    spec: ShovelSpec,
    queue: Arc<QueueState>,
    system_key: String,
    config: ShovelConfig,
    shared: Arc<Shared>,
) {
    let mut client: Option<BrokerClient> = None;
    let mut pending = Vec::new();
    let idle = Duration::from_millis(config.idle_sleep_ms);
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        if pending.is_empty() {
            pending = queue.pop_batch(config.batch_size.max(1));
            if pending.is_empty() {
                tokio::time::sleep(idle).await;
                continue;
            }
        }
        let result: Result<(), BrokerError> = async {
            if client.is_none() {
                client = Some(BrokerClient::connect(&spec.dest_address, &system_key).await?);
            }
            let c = client.as_mut().expect("connected above");
            c.call(
                None,
                Request::PublishBatch {
                    exchange: spec.dest_exchange.clone(),
                    messages: pending.clone(),
                },
            )
            .await
            .map(|_| ())
        }
        .await;
        match result {
            Ok(()) => {
                shared.relayed.fetch_add(pending.len() as u64, Ordering::SeqCst);
                shared.failures.store(0, Ordering::SeqCst);
                pending.clear();
            }
            Err(e) => {
                if client.as_ref().is_some_and(|c| c.is_broken()) || e.is_transport() {
                    client = None;
                }
                let failures = shared.failures.fetch_add(1, Ordering::SeqCst) + 1;
                tracing::warn!(shovel = %id, failures, error = %e, "relay attempt failed");
                if failures >= config.max_failures {
                    shared.active.store(false, Ordering::SeqCst);
                    tracing::error!(shovel = %id, "shovel marked inactive");
                    break;
                }
                tokio::time::sleep(backoff(&config, failures)).await;
            }
        }
    }
    if !pending.is_empty() {
        queue.requeue_front(pending);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_bounded() {
        let c = ShovelConfig::default();
        assert_eq!(backoff(&c, 1), Duration::from_millis(10));
        assert_eq!(backoff(&c, 2), Duration::from_millis(20));
        assert_eq!(backoff(&c, 4), Duration::from_millis(80));
        assert_eq!(backoff(&c, 30), Duration::from_millis(1000));
    }
}
