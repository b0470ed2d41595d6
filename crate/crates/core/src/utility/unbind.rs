use std::sync::Arc;

use crate::clock::Millis;
use crate::gateway::Fabric;
use crate::topic::RoutingPattern;

/// Tears down bindings whose permission expired, then drops the permission.
#[derive(Debug)]
pub struct UnbindDaemon {
    fabric: Arc<Fabric>,
    tick_lock: tokio::sync::Mutex<()>,
}

impl UnbindDaemon {
    pub fn new(fabric: Arc<Fabric>) -> Self {
        Self {
            fabric,
            tick_lock: tokio::sync::Mutex::new(()),
        }
    }

    /// Returns how many permission records were revoked. A permission whose
    /// bindings could not all be removed is kept for the next tick.
    pub async fn tick(&self, now: Millis) -> u64 {
        let _serial = self.tick_lock.lock().await;
        let store = self.fabric.store();
        let mut revoked = 0;
        for perm in store.expired_permissions(now) {
            let mut clean = true;
            for binding in store.bindings_between(&perm.subscriber_id, &perm.target_entity) {
                let Ok(pattern) = RoutingPattern::parse(&binding.key.pattern) else {
                    continue;
                };
                let still_covered = store
                    .covering_permission(&binding.key.subscriber_id, &binding.key.exchange, &binding.key.pattern)
                    .is_some();
                if !perm.routing_pattern.covers(&pattern) || still_covered {
                    continue;
                }
                if let Err(e) = self.fabric.unbind(&binding.key).await {
                    tracing::warn!(subscriber = %perm.subscriber_id, error = %e, "unbind failed, will retry");
                    clean = false;
                }
            }
            if clean {
                match store.revoke_permission(&perm) {
                    Ok(true) => revoked += 1,
                    Ok(false) => {}
                    Err(e) => tracing::error!(error = %e, "revoke failed"),
                }
            }
        }
        tracing::info!(revoked, "unbind tick");
        revoked
    }
}
