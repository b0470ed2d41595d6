//! Stateless HTTP gateway in front of the broker fleet.
//!
//! Handlers authenticate the `apikey` header against the shared
//! [`AuthStore`], pick a broker node with the [`FederationRouter`] and run
//! broker operations over pooled channels. Apart from the pools, all state
//! lives in the store, so any number of replicas can serve the same fleet.

mod api;
pub mod catalogue;
pub mod fabric;
pub mod pool;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::http::StatusCode;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use fabric::Fabric;
pub use pool::{ChannelPool, ChannelPools, PoolCounters, PoolError, PoolSettings};

use crate::auth::{AuthError, AuthStore};
use crate::broker::BrokerError;
use crate::router::{FederationRouter, RouterError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    PayloadTooLarge(String),
    #[error("{0}")]
    PoolExhausted(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    Internal(String),
}

impl GatewayError {
    pub fn status(&self) -> StatusCode {
        match self {
            GatewayError::BadRequest(_) => StatusCode::BAD_REQUEST,
            GatewayError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            GatewayError::Forbidden(_) => StatusCode::FORBIDDEN,
            GatewayError::NotFound(_) => StatusCode::NOT_FOUND,
            GatewayError::Conflict(_) => StatusCode::CONFLICT,
            GatewayError::PayloadTooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            GatewayError::PoolExhausted(_) => StatusCode::TOO_MANY_REQUESTS,
            GatewayError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            GatewayError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<AuthError> for GatewayError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::Unauthenticated => GatewayError::Unauthorized("invalid apikey".into()),
            AuthError::AccessDenied(m) => GatewayError::Forbidden(m),
            AuthError::Conflict(m) => GatewayError::Conflict(m),
            AuthError::NotFound(m) => GatewayError::NotFound(m),
            AuthError::InvalidArgument(m) => GatewayError::BadRequest(m),
            AuthError::Storage(m) => GatewayError::Internal(m),
        }
    }
}

impl From<BrokerError> for GatewayError {
    fn from(e: BrokerError) -> Self {
        match e {
            BrokerError::NotFound(m) => GatewayError::NotFound(m),
            BrokerError::Conflict(m) => GatewayError::Conflict(m),
            BrokerError::AccessDenied(m) => GatewayError::Forbidden(m),
            BrokerError::PayloadTooLarge(m) => GatewayError::PayloadTooLarge(m),
            BrokerError::InvalidArgument(m) => GatewayError::BadRequest(m),
            BrokerError::PeerTimeout(m) | BrokerError::Unavailable(m) | BrokerError::Protocol(m) => {
                GatewayError::Unavailable(m)
            }
            BrokerError::Unauthenticated(m) | BrokerError::Internal(m) => GatewayError::Internal(m),
        }
    }
}

impl From<PoolError> for GatewayError {
    fn from(e: PoolError) -> Self {
        match e {
            PoolError::Exhausted(m) => GatewayError::PoolExhausted(format!("pool exhausted for {m}")),
            PoolError::Broker(b) => b.into(),
        }
    }
}

impl From<RouterError> for GatewayError {
    fn from(e: RouterError) -> Self {
        match e {
            RouterError::NodeUnavailable(m) => GatewayError::Unavailable(format!("node {m} is down")),
            RouterError::InvalidArgument(m) => GatewayError::BadRequest(m),
            other => GatewayError::Internal(other.to_string()),
        }
    }
}

/// A running gateway replica.
#[derive(Debug)]
pub struct GatewayHandle {
    pub addr: SocketAddr,
    pub fabric: Arc<Fabric>,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl GatewayHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

pub struct Gateway;

impl Gateway {
    pub fn new_fabric(
        store: Arc<AuthStore>,
        router: Arc<FederationRouter>,
        system_key: &str,
        pool: PoolSettings,
    ) -> Arc<Fabric> {
        Arc::new(Fabric::new(store, router, system_key, pool))
    }

    pub fn app(fabric: Arc<Fabric>) -> axum::Router {
        api::routes(fabric.clone()).merge(crate::auth::backend::routes(fabric.store().clone()))
    }

    pub async fn start(fabric: Arc<Fabric>, listen: &str) -> std::io::Result<GatewayHandle> {
        let listener = TcpListener::bind(listen).await?;
        let addr = listener.local_addr()?;
        let (stop, mut stop_rx) = watch::channel(false);
        let app = Self::app(fabric.clone());
        let task = tokio::spawn(async move {
            let shutdown = async move {
                let _ = stop_rx.changed().await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                tracing::error!(error = %e, "gateway stopped");
            }
        });
        tracing::info!(%addr, "gateway listening");
        Ok(GatewayHandle { addr, fabric, stop, task })
    }
}
