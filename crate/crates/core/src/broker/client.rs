use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_util::codec::{Framed, LengthDelimitedCodec};

use super::message::{Binding, Message, NodeStats, QueueInfo, ShovelSpec, ShovelStatus};
use super::protocol::{self, Request, RequestFrame, Response, MAX_FRAME};
use super::BrokerError;
use crate::auth::Principal;

pub(crate) fn codec() -> LengthDelimitedCodec {
    LengthDelimitedCodec::builder()
        .max_frame_length(MAX_FRAME)
        .new_codec()
}

/// One authenticated connection ("channel") to a broker node. Calls are
/// strictly request/response; a transport failure marks the channel broken.
#[derive(Debug)]
pub struct BrokerClient {
    framed: Framed<TcpStream, LengthDelimitedCodec>,
    broken: bool,
    address: String,
}

impl BrokerClient {
    pub async fn connect(address: &str, api_key: &str) -> Result<Self, BrokerError> {
        let stream = TcpStream::connect(address)
            .await
            .map_err(|e| BrokerError::Unavailable(format!("{address}: {e}")))?;
        stream.set_nodelay(true)?;
        let mut client = Self {
            framed: Framed::new(stream, codec()),
            broken: false,
            address: address.to_string(),
        };
        client
            .call(None, Request::Auth { api_key: api_key.to_string() })
            .await?;
        Ok(client)
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn is_broken(&self) -> bool {
        self.broken
    }

    /// Sends a request and returns the raw response, errors included.
    pub async fn call_raw(
        &mut self,
        acting: Option<&Principal>,
        request: Request,
    ) -> Result<Response, BrokerError> {
        if self.broken {
            return Err(BrokerError::Unavailable(format!("{}: channel broken", self.address)));
        }
        let frame = RequestFrame {
            acting: acting.cloned(),
            request,
        };
        let result = async {
            self.framed.send(protocol::encode_request(&frame).freeze()).await?;
            match self.framed.next().await {
                Some(Ok(body)) => protocol::decode_response(body.freeze()),
                Some(Err(e)) => Err(BrokerError::from(e)),
                None => Err(BrokerError::Unavailable(format!("{}: connection closed", self.address))),
            }
        }
        .await;
        if let Err(e) = &result {
            if e.is_transport() {
                self.broken = true;
            }
        }
        result
    }

    pub async fn call(
        &mut self,
        acting: Option<&Principal>,
        request: Request,
    ) -> Result<Response, BrokerError> {
        match self.call_raw(acting, request).await? {
            Response::Error(e) => Err(e),
            other => Ok(other),
        }
    }

    async fn expect_ok(&mut self, acting: Option<&Principal>, request: Request) -> Result<(), BrokerError> {
        match self.call(acting, request).await? {
            Response::Ok => Ok(()),
            other => Err(unexpected(other)),
        }
    }

    pub async fn declare_exchange(&mut self, acting: Option<&Principal>, name: &str) -> Result<(), BrokerError> {
        self.expect_ok(acting, Request::DeclareExchange { name: name.into() }).await
    }

    pub async fn declare_queue(
        &mut self,
        acting: Option<&Principal>,
        name: &str,
        depth_limit: u64,
    ) -> Result<(), BrokerError> {
        self.expect_ok(acting, Request::DeclareQueue { name: name.into(), depth_limit })
            .await
    }

    pub async fn delete_exchange(&mut self, acting: Option<&Principal>, name: &str) -> Result<(), BrokerError> {
        self.expect_ok(acting, Request::DeleteExchange { name: name.into() }).await
    }

    pub async fn delete_queue(&mut self, acting: Option<&Principal>, name: &str) -> Result<(), BrokerError> {
        self.expect_ok(acting, Request::DeleteQueue { name: name.into() }).await
    }

    pub async fn bind(&mut self, acting: Option<&Principal>, binding: Binding) -> Result<(), BrokerError> {
        self.expect_ok(acting, Request::Bind(binding)).await
    }

    pub async fn unbind(
        &mut self,
        acting: Option<&Principal>,
        exchange: &str,
        queue: &str,
        pattern: &str,
    ) -> Result<(), BrokerError> {
        self.expect_ok(
            acting,
            Request::Unbind {
                exchange: exchange.into(),
                queue: queue.into(),
                pattern: pattern.into(),
            },
        )
        .await
    }

    pub async fn publish(&mut self, acting: Option<&Principal>, message: Message) -> Result<(), BrokerError> {
        self.expect_ok(acting, Request::Publish { message, archive: true }).await
    }

    pub async fn consume(
        &mut self,
        acting: Option<&Principal>,
        queue: &str,
        max: u32,
    ) -> Result<Vec<Message>, BrokerError> {
        match self.call(acting, Request::Consume { queue: queue.into(), max }).await? {
            Response::Messages(m) => Ok(m),
            other => Err(unexpected(other)),
        }
    }

    pub async fn create_shovel(&mut self, spec: ShovelSpec) -> Result<String, BrokerError> {
        match self.call(None, Request::CreateShovel(spec)).await? {
            Response::ShovelId(id) => Ok(id),
            other => Err(unexpected(other)),
        }
    }

    pub async fn delete_shovel(&mut self, shovel_id: &str) -> Result<(), BrokerError> {
        self.expect_ok(None, Request::DeleteShovel { shovel_id: shovel_id.into() })
            .await
    }

    pub async fn list_shovels(&mut self) -> Result<Vec<ShovelStatus>, BrokerError> {
        match self.call(None, Request::ListShovels).await? {
            Response::Shovels(s) => Ok(s),
            other => Err(unexpected(other)),
        }
    }

    pub async fn stats(&mut self) -> Result<NodeStats, BrokerError> {
        match self.call(None, Request::Stats).await? {
            Response::Stats(s) => Ok(s),
            other => Err(unexpected(other)),
        }
    }

    pub async fn list_exchanges(&mut self) -> Result<Vec<String>, BrokerError> {
        match self.call(None, Request::ListExchanges).await? {
            Response::Names(n) => Ok(n),
            other => Err(unexpected(other)),
        }
    }

    pub async fn queue_info(&mut self, name: &str) -> Result<QueueInfo, BrokerError> {
        match self.call(None, Request::QueueInfo { name: name.into() }).await? {
            Response::Queue(q) => Ok(q),
            other => Err(unexpected(other)),
        }
    }

    pub async fn ping(&mut self) -> Result<(), BrokerError> {
        self.expect_ok(None, Request::Ping).await
    }
}

fn unexpected(response: Response) -> BrokerError {
    BrokerError::Protocol(format!("unexpected response {response:?}"))
}
