//! Background daemons: the archiver draining each node's archive queue into
//! an append-only log, and the unbind daemon revoking expired access.

pub mod archiver;
pub mod unbind;

use std::future::Future;
use std::time::Duration;

use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use archiver::{ArchiveRecord, Archiver};
pub use unbind::UnbindDaemon;

pub const DEFAULT_ARCHIVE_PERIOD: Duration = Duration::from_secs(1);
pub const DEFAULT_UNBIND_PERIOD: Duration = Duration::from_secs(5);

/// A periodic task started with [`spawn_periodic`].
#[derive(Debug)]
pub struct DaemonHandle {
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl DaemonHandle {
    pub async fn stop(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

/// Runs `tick` every `period` until stopped. A tick in progress finishes
/// before the daemon exits.
pub fn spawn_periodic<F, Fut>(period: Duration, mut tick: F) -> DaemonHandle
where
    F: FnMut() -> Fut + Send + 'static,
    Fut: Future<Output = ()> + Send,
{
    let (stop, mut rx) = watch::channel(false);
    let task = tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = rx.changed() => break,
                _ = interval.tick() => tick().await,
            }
        }
    });
    DaemonHandle { stop, task }
}
