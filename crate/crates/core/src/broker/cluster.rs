//! Peer links for clustered mode.

use std::time::Duration;

use futures::future::join_all;
use parking_lot::Mutex;

use super::client::BrokerClient;
use super::config::PeerConfig;
use super::protocol::{Request, Response};
use super::BrokerError;

#[derive(Debug)]
struct PeerLink {
    node_id: String,
    address: String,
    idle: Mutex<Vec<BrokerClient>>,
}

/// Connections to every other member of the cluster, authenticated with the
/// system credential.
#[derive(Debug)]
pub(crate) struct PeerSet {
    system_key: String,
    timeout: Duration,
    links: Vec<PeerLink>,
}

impl PeerSet {
    pub fn new(peers: &[PeerConfig], system_key: &str, timeout: Duration) -> Self {
        Self {
            system_key: system_key.to_string(),
            timeout,
            links: peers
                .iter()
                .map(|p| PeerLink {
                    node_id: p.node_id.clone(),
                    address: p.address.clone(),
                    idle: Mutex::new(Vec::new()),
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Calls one peer. Transport failures and timeouts become `PeerTimeout`;
    /// errors reported by the peer itself pass through.
    pub async fn call(&self, node_id: &str, request: Request) -> Result<Response, BrokerError> {
        let link = self
            .links
            .iter()
            .find(|l| l.node_id == node_id)
            .ok_or_else(|| BrokerError::NotFound(format!("peer {node_id}")))?;
        let timeout = |what: &str| BrokerError::PeerTimeout(format!("{node_id}: {what}"));

        let pooled = link.idle.lock().pop();
        let mut client = match pooled {
            Some(c) => c,
            None => tokio::time::timeout(self.timeout, BrokerClient::connect(&link.address, &self.system_key))
                .await
                .map_err(|_| timeout("connect timed out"))?
                .map_err(|e| timeout(&e.to_string()))?,
        };
        let response = tokio::time::timeout(self.timeout, client.call(None, request))
            .await
            .map_err(|_| timeout("no acknowledgement"))?;
        match response {
            Ok(r) => {
                link.idle.lock().push(client);
                Ok(r)
            }
            Err(e) if e.is_transport() => Err(timeout(&e.to_string())),
            Err(e) => {
                if !client.is_broken() {
                    link.idle.lock().push(client);
                }
                Err(e)
            }
        }
    }

    /// Sends `request` to every peer concurrently.
    pub async fn broadcast(&self, request: &Request) -> Vec<(String, Result<Response, BrokerError>)> {
        join_all(self.links.iter().map(|l| async move {
            (l.node_id.clone(), self.call(&l.node_id, request.clone()).await)
        }))
        .await
    }
}
