//! Framed binary protocol spoken between clients and broker nodes.
//!
//! Every frame is a 4-byte big-endian length followed by the body. A request
//! body is `version:u8 | acting:principal | verb:u8 | fields…`; a response
//! body is `status:u8 | …` where status 0 carries a typed result and status 1
//! an error code and message. The first request on a connection must be
//! `AUTH`. Strings and byte arrays are `len:u32` prefixed, integers are
//! big-endian, options are a `0|1` tag byte, lists are `count:u32` prefixed.
//!
//! | verb | name            | fields                                        |
//! |------|-----------------|-----------------------------------------------|
//! | 0x01 | AUTH            | api_key                                       |
//! | 0x02 | DECLARE_EXCHANGE| name                                          |
//! | 0x03 | DECLARE_QUEUE   | name, depth_limit:u64                         |
//! | 0x04 | DELETE_EXCHANGE | name                                          |
//! | 0x05 | DELETE_QUEUE    | name                                          |
//! | 0x06 | BIND            | exchange, queue, pattern, expires_at:opt u64  |
//! | 0x07 | UNBIND          | exchange, queue, pattern                      |
//! | 0x08 | PUBLISH         | message, archive:u8                           |
//! | 0x09 | PUBLISH_BATCH   | exchange, messages                            |
//! | 0x0A | CONSUME         | queue, max:u32                                |
//! | 0x0B | CREATE_SHOVEL   | source_queue, dest_node, dest_address, dest_exchange |
//! | 0x0C | DELETE_SHOVEL   | shovel_id                                     |
//! | 0x0D | LIST_SHOVELS    |                                               |
//! | 0x0E | REPLICATE       | metadata event                                |
//! | 0x0F | ENQUEUE         | queues, message                               |
//! | 0x10 | STATS           |                                               |
//! | 0x11 | LIST_EXCHANGES  |                                               |
//! | 0x12 | QUEUE_INFO      | name                                          |
//! | 0x13 | PING            |                                               |

use bytes::{Buf, BufMut, Bytes, BytesMut};

use super::message::{
    Binding, Message, MetadataEvent, NodeStats, QueueInfo, ShovelSpec, ShovelStatus,
};
use super::BrokerError;
use crate::auth::{EntityKind, Principal};

pub const PROTOCOL_VERSION: u8 = 1;
/// Upper bound on one frame; batches of large payloads stay below this.
pub const MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Auth { api_key: String },
    DeclareExchange { name: String },
    DeclareQueue { name: String, depth_limit: u64 },
    DeleteExchange { name: String },
    DeleteQueue { name: String },
    Bind(Binding),
    Unbind { exchange: String, queue: String, pattern: String },
    Publish { message: Message, archive: bool },
    PublishBatch { exchange: String, messages: Vec<Message> },
    Consume { queue: String, max: u32 },
    CreateShovel(ShovelSpec),
    DeleteShovel { shovel_id: String },
    ListShovels,
    Replicate(MetadataEvent),
    Enqueue { queues: Vec<String>, message: Message },
    Stats,
    ListExchanges,
    QueueInfo { name: String },
    Ping,
}

impl Request {
    pub fn verb(&self) -> u8 {
        match self {
            Request::Auth { .. } => 0x01,
            Request::DeclareExchange { .. } => 0x02,
            Request::DeclareQueue { .. } => 0x03,
            Request::DeleteExchange { .. } => 0x04,
            Request::DeleteQueue { .. } => 0x05,
            Request::Bind(_) => 0x06,
            Request::Unbind { .. } => 0x07,
            Request::Publish { .. } => 0x08,
            Request::PublishBatch { .. } => 0x09,
            Request::Consume { .. } => 0x0A,
            Request::CreateShovel(_) => 0x0B,
            Request::DeleteShovel { .. } => 0x0C,
            Request::ListShovels => 0x0D,
            Request::Replicate(_) => 0x0E,
            Request::Enqueue { .. } => 0x0F,
            Request::Stats => 0x10,
            Request::ListExchanges => 0x11,
            Request::QueueInfo { .. } => 0x12,
            Request::Ping => 0x13,
        }
    }
}

/// A request plus the principal the caller acts for. Only admin
/// connections may act on behalf of someone else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestFrame {
    pub acting: Option<Principal>,
    pub request: Request,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ok,
    Messages(Vec<Message>),
    ShovelId(String),
    Shovels(Vec<ShovelStatus>),
    Stats(NodeStats),
    Names(Vec<String>),
    Queue(QueueInfo),
    Error(BrokerError),
}

// ---- primitive writers ---------------------------------------------------

fn put_str(buf: &mut BytesMut, s: &str) {
    put_bytes(buf, s.as_bytes());
}

fn put_bytes(buf: &mut BytesMut, b: &[u8]) {
    buf.put_u32(b.len() as u32);
    buf.put_slice(b);
}

fn put_opt_u64(buf: &mut BytesMut, v: Option<u64>) {
    match v {
        Some(v) => {
            buf.put_u8(1);
            buf.put_u64(v);
        }
        None => buf.put_u8(0),
    }
}

fn put_strs(buf: &mut BytesMut, items: &[String]) {
    buf.put_u32(items.len() as u32);
    for s in items {
        put_str(buf, s);
    }
}

fn put_message(buf: &mut BytesMut, m: &Message) {
    put_str(buf, &m.exchange);
    put_str(buf, &m.routing_key);
    put_bytes(buf, &m.payload);
    buf.put_u64(m.timestamp);
    put_str(buf, &m.publisher_id);
}

fn put_messages(buf: &mut BytesMut, messages: &[Message]) {
    buf.put_u32(messages.len() as u32);
    for m in messages {
        put_message(buf, m);
    }
}

fn put_binding(buf: &mut BytesMut, b: &Binding) {
    put_str(buf, &b.exchange);
    put_str(buf, &b.queue);
    put_str(buf, &b.pattern);
    put_opt_u64(buf, b.expires_at);
}

fn put_principal(buf: &mut BytesMut, p: Option<&Principal>) {
    match p {
        None => buf.put_u8(0),
        Some(Principal::Admin) => buf.put_u8(1),
        Some(Principal::Provider { id }) => {
            buf.put_u8(2);
            put_str(buf, id);
        }
        Some(Principal::Entity { id, owner, kind }) => {
            buf.put_u8(3);
            put_str(buf, id);
            put_str(buf, owner);
            buf.put_u8(match kind {
                EntityKind::Publisher => 0,
                EntityKind::Subscriber => 1,
            });
        }
    }
}

fn put_event(buf: &mut BytesMut, e: &MetadataEvent) {
    match e {
        MetadataEvent::ExchangeDeclared { name } => {
            buf.put_u8(1);
            put_str(buf, name);
        }
        MetadataEvent::ExchangeDeleted { name } => {
            buf.put_u8(2);
            put_str(buf, name);
        }
        MetadataEvent::QueueDeclared { name, home_node, depth_limit } => {
            buf.put_u8(3);
            put_str(buf, name);
            put_str(buf, home_node);
            buf.put_u64(*depth_limit);
        }
        MetadataEvent::QueueDeleted { name } => {
            buf.put_u8(4);
            put_str(buf, name);
        }
        MetadataEvent::BindingAdded(b) => {
            buf.put_u8(5);
            put_binding(buf, b);
        }
        MetadataEvent::BindingRemoved { exchange, queue, pattern } => {
            buf.put_u8(6);
            put_str(buf, exchange);
            put_str(buf, queue);
            put_str(buf, pattern);
        }
    }
}

// ---- primitive readers ---------------------------------------------------

struct Reader {
    buf: Bytes,
}

fn short(what: &str) -> BrokerError {
    BrokerError::Protocol(format!("truncated frame reading {what}"))
}

impl Reader {
    fn u8(&mut self) -> Result<u8, BrokerError> {
        if self.buf.remaining() < 1 {
            return Err(short("u8"));
        }
        Ok(self.buf.get_u8())
    }

    fn u32(&mut self) -> Result<u32, BrokerError> {
        if self.buf.remaining() < 4 {
            return Err(short("u32"));
        }
        Ok(self.buf.get_u32())
    }

    fn u64(&mut self) -> Result<u64, BrokerError> {
        if self.buf.remaining() < 8 {
            return Err(short("u64"));
        }
        Ok(self.buf.get_u64())
    }

    fn bytes(&mut self) -> Result<Bytes, BrokerError> {
        let len = self.u32()? as usize;
        if self.buf.remaining() < len {
            return Err(short("bytes"));
        }
        Ok(self.buf.split_to(len))
    }

    fn string(&mut self) -> Result<String, BrokerError> {
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec()).map_err(|_| BrokerError::Protocol("invalid utf-8".into()))
    }

    fn opt_u64(&mut self) -> Result<Option<u64>, BrokerError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.u64()?)),
            t => Err(BrokerError::Protocol(format!("bad option tag {t}"))),
        }
    }

    fn count(&mut self) -> Result<usize, BrokerError> {
        let n = self.u32()? as usize;
        // each element needs at least 4 bytes
        if n > self.buf.remaining() / 4 + 1 {
            return Err(short("list"));
        }
        Ok(n)
    }

    fn strings(&mut self) -> Result<Vec<String>, BrokerError> {
        let n = self.count()?;
        (0..n).map(|_| self.string()).collect()
    }

    fn message(&mut self) -> Result<Message, BrokerError> {
        Ok(Message {
            exchange: self.string()?,
            routing_key: self.string()?,
            payload: self.bytes()?,
            timestamp: self.u64()?,
            publisher_id: self.string()?,
        })
    }

    fn messages(&mut self) -> Result<Vec<Message>, BrokerError> {
        let n = self.count()?;
        (0..n).map(|_| self.message()).collect()
    }

    fn binding(&mut self) -> Result<Binding, BrokerError> {
        Ok(Binding {
            exchange: self.string()?,
            queue: self.string()?,
            pattern: self.string()?,
            expires_at: self.opt_u64()?,
        })
    }

    fn principal(&mut self) -> Result<Option<Principal>, BrokerError> {
        Ok(match self.u8()? {
            0 => None,
            1 => Some(Principal::Admin),
            2 => Some(Principal::Provider { id: self.string()? }),
            3 => {
                let id = self.string()?;
                let owner = self.string()?;
                let kind = match self.u8()? {
                    0 => EntityKind::Publisher,
                    1 => EntityKind::Subscriber,
                    k => return Err(BrokerError::Protocol(format!("bad entity kind {k}"))),
                };
                Some(Principal::Entity { id, owner, kind })
            }
            t => return Err(BrokerError::Protocol(format!("bad principal tag {t}"))),
        })
    }

    fn event(&mut self) -> Result<MetadataEvent, BrokerError> {
        Ok(match self.u8()? {
            1 => MetadataEvent::ExchangeDeclared { name: self.string()? },
            2 => MetadataEvent::ExchangeDeleted { name: self.string()? },
            3 => MetadataEvent::QueueDeclared {
                name: self.string()?,
                home_node: self.string()?,
                depth_limit: self.u64()?,
            },
            4 => MetadataEvent::QueueDeleted { name: self.string()? },
            5 => MetadataEvent::BindingAdded(self.binding()?),
            6 => MetadataEvent::BindingRemoved {
                exchange: self.string()?,
                queue: self.string()?,
                pattern: self.string()?,
            },
            t => return Err(BrokerError::Protocol(format!("bad event tag {t}"))),
        })
    }

    fn finish(self) -> Result<(), BrokerError> {
        if self.buf.has_remaining() {
            return Err(BrokerError::Protocol(format!(
                "{} trailing bytes",
                self.buf.remaining()
            )));
        }
        Ok(())
    }
}

// ---- frames --------------------------------------------------------------

pub fn encode_request(frame: &RequestFrame) -> BytesMut {
    let mut buf = BytesMut::with_capacity(64);
    buf.put_u8(PROTOCOL_VERSION);
    put_principal(&mut buf, frame.acting.as_ref());
    let request = &frame.request;
    buf.put_u8(request.verb());
    match request {
        Request::Auth { api_key } => put_str(&mut buf, api_key),
        Request::DeclareExchange { name }
        | Request::DeleteExchange { name }
        | Request::DeleteQueue { name }
        | Request::QueueInfo { name } => put_str(&mut buf, name),
        Request::DeclareQueue { name, depth_limit } => {
            put_str(&mut buf, name);
            buf.put_u64(*depth_limit);
        }
        Request::Bind(b) => put_binding(&mut buf, b),
        Request::Unbind { exchange, queue, pattern } => {
            put_str(&mut buf, exchange);
            put_str(&mut buf, queue);
            put_str(&mut buf, pattern);
        }
        Request::Publish { message, archive } => {
            buf.reserve(message.payload.len() + 64);
            put_message(&mut buf, message);
            buf.put_u8(u8::from(*archive));
        }
        Request::PublishBatch { exchange, messages } => {
            put_str(&mut buf, exchange);
            put_messages(&mut buf, messages);
        }
        Request::Consume { queue, max } => {
            put_str(&mut buf, queue);
            buf.put_u32(*max);
        }
        Request::CreateShovel(s) => {
            put_str(&mut buf, &s.source_queue);
            put_str(&mut buf, &s.dest_node);
            put_str(&mut buf, &s.dest_address);
            put_str(&mut buf, &s.dest_exchange);
        }
        Request::DeleteShovel { shovel_id } => put_str(&mut buf, shovel_id),
        Request::Replicate(e) => put_event(&mut buf, e),
        Request::Enqueue { queues, message } => {
            put_strs(&mut buf, queues);
            put_message(&mut buf, message);
        }
        Request::ListShovels | Request::Stats | Request::ListExchanges | Request::Ping => {}
    }
    buf
}

pub fn decode_request(body: Bytes) -> Result<RequestFrame, BrokerError> {
    let mut r = Reader { buf: body };
    let version = r.u8()?;
    if version != PROTOCOL_VERSION {
        return Err(BrokerError::Protocol(format!("unsupported version {version}")));
    }
    let acting = r.principal()?;
    let request = match r.u8()? {
        0x01 => Request::Auth { api_key: r.string()? },
        0x02 => Request::DeclareExchange { name: r.string()? },
        0x03 => Request::DeclareQueue {
            name: r.string()?,
            depth_limit: r.u64()?,
        },
        0x04 => Request::DeleteExchange { name: r.string()? },
        0x05 => Request::DeleteQueue { name: r.string()? },
        0x06 => Request::Bind(r.binding()?),
        0x07 => Request::Unbind {
            exchange: r.string()?,
            queue: r.string()?,
            pattern: r.string()?,
        },
        0x08 => Request::Publish {
            message: r.message()?,
            archive: r.u8()? != 0,
        },
        0x09 => Request::PublishBatch {
            exchange: r.string()?,
            messages: r.messages()?,
        },
        0x0A => Request::Consume {
            queue: r.string()?,
            max: r.u32()?,
        },
        0x0B => Request::CreateShovel(ShovelSpec {
            source_queue: r.string()?,
            dest_node: r.string()?,
            dest_address: r.string()?,
            dest_exchange: r.string()?,
        }),
        0x0C => Request::DeleteShovel { shovel_id: r.string()? },
        0x0D => Request::ListShovels,
        0x0E => Request::Replicate(r.event()?),
        0x0F => Request::Enqueue {
            queues: r.strings()?,
            message: r.message()?,
        },
        0x10 => Request::Stats,
        0x11 => Request::ListExchanges,
        0x12 => Request::QueueInfo { name: r.string()? },
        0x13 => Request::Ping,
        verb => return Err(BrokerError::Protocol(format!("unknown verb 0x{verb:02x}"))),
    };
    r.finish()?;
    Ok(RequestFrame { acting, request })
}

pub fn encode_response(response: &Response) -> BytesMut {
    let mut buf = BytesMut::with_capacity(32);
    match response {
        Response::Error(e) => {
            buf.put_u8(1);
            buf.put_u8(e.code());
            put_str(&mut buf, &e.detail());
            return buf;
        }
        _ => buf.put_u8(0),
    }
    match response {
        Response::Ok => buf.put_u8(0),
        Response::Messages(messages) => {
            buf.put_u8(1);
            buf.reserve(messages.iter().map(|m| m.payload.len() + 48).sum());
            put_messages(&mut buf, messages);
        }
        Response::ShovelId(id) => {
            buf.put_u8(2);
            put_str(&mut buf, id);
        }
        Response::Shovels(list) => {
            buf.put_u8(3);
            buf.put_u32(list.len() as u32);
            for s in list {
                put_str(&mut buf, &s.shovel_id);
                put_str(&mut buf, &s.source_node);
                put_str(&mut buf, &s.source_queue);
                put_str(&mut buf, &s.dest_node);
                put_str(&mut buf, &s.dest_exchange);
                buf.put_u8(u8::from(s.active));
                buf.put_u64(s.relayed);
                buf.put_u32(s.consecutive_failures);
            }
        }
        Response::Stats(s) => {
            buf.put_u8(4);
            put_str(&mut buf, &s.node_id);
            for v in [
                s.published,
                s.enqueued,
                s.dropped,
                s.exchanges,
                s.queues,
                s.archive_depth,
                s.auth_checks,
            ] {
                buf.put_u64(v);
            }
        }
        Response::Names(names) => {
            buf.put_u8(5);
            put_strs(&mut buf, names);
        }
        Response::Queue(q) => {
            buf.put_u8(6);
            put_str(&mut buf, &q.name);
            put_str(&mut buf, &q.home_node);
            buf.put_u64(q.depth);
            buf.put_u64(q.depth_limit);
            buf.put_u64(q.dropped);
        }
        Response::Error(_) => unreachable!(),
    }
    buf
}

pub fn decode_response(body: Bytes) -> Result<Response, BrokerError> {
    let mut r = Reader { buf: body };
    if r.u8()? == 1 {
        let code = r.u8()?;
        let detail = r.string()?;
        return Ok(Response::Error(BrokerError::from_code(code, detail)));
    }
    let response = match r.u8()? {
        0 => Response::Ok,
        1 => Response::Messages(r.messages()?),
        2 => Response::ShovelId(r.string()?),
        3 => {
            let n = r.count()?;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                list.push(ShovelStatus {
                    shovel_id: r.string()?,
                    source_node: r.string()?,
                    source_queue: r.string()?,
                    dest_node: r.string()?,
                    dest_exchange: r.string()?,
                    active: r.u8()? != 0,
                    relayed: r.u64()?,
                    consecutive_failures: r.u32()?,
                });
            }
            Response::Shovels(list)
        }
        4 => Response::Stats(NodeStats {
            node_id: r.string()?,
            published: r.u64()?,
            enqueued: r.u64()?,
            dropped: r.u64()?,
            exchanges: r.u64()?,
            queues: r.u64()?,
            archive_depth: r.u64()?,
            auth_checks: r.u64()?,
        }),
        5 => Response::Names(r.strings()?),
        6 => Response::Queue(QueueInfo {
            name: r.string()?,
            home_node: r.string()?,
            depth: r.u64()?,
            depth_limit: r.u64()?,
            dropped: r.u64()?,
        }),
        kind => return Err(BrokerError::Protocol(format!("unknown response kind {kind}"))),
    };
    r.finish()?;
    Ok(response)
}
