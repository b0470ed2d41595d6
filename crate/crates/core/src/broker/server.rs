use std::net::SocketAddr;
use std::sync::Arc;

use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio_util::codec::Framed;

use super::client::codec;
use super::node::BrokerNode;
use super::protocol::{self, Request, Response};
use super::BrokerError;
use crate::auth::Principal;

/// TCP front end for a [`BrokerNode`].
pub struct BrokerServer;

/// A running node. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
#[derive(Debug)]
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub node: Arc<BrokerNode>,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl BrokerServer {
    /// Binds `host:port` from the node configuration and starts serving.
    pub async fn start(node: Arc<BrokerNode>) -> std::io::Result<ServerHandle> {
        let listener =
            TcpListener::bind((node.config().host.as_str(), node.config().port)).await?;
        Ok(Self::serve(listener, node))
    }

    pub fn serve(listener: TcpListener, node: Arc<BrokerNode>) -> ServerHandle {
        let addr = listener.local_addr().expect("bound listener has an address");
        let (stop, stop_rx) = watch::channel(false);
        let task = tokio::spawn(accept_loop(listener, node.clone(), stop_rx));
        tracing::info!(node = node.node_id(), %addr, "broker listening");
        ServerHandle { addr, node, stop, task }
    }
}

impl ServerHandle {
    pub fn address(&self) -> String {
        self.addr.to_string()
    }

    /// Stops accepting, closes open connections and halts shovels.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
        self.node.shutdown().await;
    }
}

async fn accept_loop(listener: TcpListener, node: Arc<BrokerNode>, mut stop: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => {
                    let _ = stream.set_nodelay(true);
                    tokio::spawn(connection(stream, node.clone(), stop.clone()));
                }
                Err(e) => tracing::warn!(error = %e, "accept failed"),
            }
        }
    }
}

async fn connection(stream: TcpStream, node: Arc<BrokerNode>, mut stop: watch::Receiver<bool>) {
    let mut framed = Framed::new(stream, codec());
    let mut principal: Option<Principal> = None;
    loop {
        let body = tokio::select! {
            _ = stop.changed() => return,
            next = framed.next() => match next {
                Some(Ok(body)) => body,
                _ => return,
            }
        };
        let response = match protocol::decode_request(body.freeze()) {
            Err(e) => Response::Error(e),
            Ok(frame) => match (&principal, frame.request) {
                (None, Request::Auth { api_key }) => match node.authenticate(&api_key).await {
                    Some(p) => {
                        principal = Some(p);
                        Response::Ok
                    }
                    None => Response::Error(BrokerError::Unauthenticated("invalid api key".into())),
                },
                (None, _) => Response::Error(BrokerError::Unauthenticated(
                    "first frame must be AUTH".into(),
                )),
                (Some(conn), request) => match frame.acting {
                    Some(_) if *conn != Principal::Admin => Response::Error(BrokerError::AccessDenied(
                        "only admin connections may act for another principal".into(),
                    )),
                    Some(acting) => node.execute(&acting, request).await,
                    None => node.execute(conn, request).await,
                },
            },
        };
        let fatal = principal.is_none();
        if framed.send(protocol::encode_response(&response).freeze()).await.is_err() || fatal {
            return;
        }
    }
}
