use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::{json, Value};

use super::catalogue::{self, CatalogueQuery};
use super::{Fabric, GatewayError};
use crate::auth::backend::APIKEY_HEADER;
use crate::auth::{Action, BindingKey, EntityKind, FollowStatus, Principal, Resource};
use crate::broker::Message;

type ApiResult = Result<Response, GatewayError>;

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

pub fn routes(fabric: Arc<Fabric>) -> Router {
    Router::new()
        .route("/admin/register-provider", post(register_provider))
        .route("/owner/register-entity", post(register_entity))
        .route("/entity/publish", post(publish))
        .route("/entity/subscribe", get(subscribe))
        .route("/cat", get(cat))
        .route("/entity/follow", post(follow))
        .route("/entity/follow-status", get(follow_status))
        .route("/entity/follow-requests", get(follow_requests))
        .route("/entity/share", post(share))
        .route("/entity/reject-follow", post(reject_follow))
        .route("/entity/bind", post(bind))
        .route("/entity/unbind", post(unbind))
        .with_state(fabric)
}

fn authenticate(fabric: &Fabric, headers: &HeaderMap) -> Result<Principal, GatewayError> {
    let key = headers
        .get(APIKEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| GatewayError::Unauthorized("missing apikey header".into()))?;
    fabric
        .store()
        .authenticate(key)
        .ok_or_else(|| GatewayError::Unauthorized("invalid apikey".into()))
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, GatewayError> {
    serde_json::from_slice(body).map_err(|e| GatewayError::BadRequest(format!("malformed body: {e}")))
}

fn ok(status: StatusCode, body: Value) -> ApiResult {
    Ok((status, Json(body)).into_response())
}

fn subscriber(principal: &Principal) -> Result<&str, GatewayError> {
    match principal {
        Principal::Entity { id, kind: EntityKind::Subscriber, .. } => Ok(id),
        _ => Err(GatewayError::Forbidden("subscriber credential required".into())),
    }
}

#[derive(Deserialize)]
struct RegisterProvider {
    provider_id: String,
}

async fn register_provider(State(f): State<Arc<Fabric>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let req: RegisterProvider = parse(&body)?;
    let apikey = f.store().register_provider(&caller, &req.provider_id)?;
    ok(StatusCode::CREATED, json!({ "provider_id": req.provider_id, "apikey": apikey }))
}

#[derive(Deserialize)]
struct RegisterEntity {
    entity_id: String,
    kind: EntityKind,
    #[serde(default)]
    catalogue_item: Option<Value>,
}

async fn register_entity(State(f): State<Arc<Fabric>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let req: RegisterEntity = parse(&body)?;
    let item = req.catalogue_item.unwrap_or_else(|| json!({}));
    if !item.is_object() {
        return Err(GatewayError::BadRequest("catalogue_item must be an object".into()));
    }
    let apikey = f.store().register_entity(&caller, &req.entity_id, req.kind, item)?;
    let record = f
        .store()
        .entity(&req.entity_id)
        .ok_or_else(|| GatewayError::Internal("entity vanished after registration".into()))?;
    let node = f.provision(&caller, &record).await?;
    ok(
        StatusCode::CREATED,
        json!({ "entity_id": req.entity_id, "apikey": apikey, "node_id": node.node_id }),
    )
}

#[derive(Deserialize)]
struct Publish {
    routing_key: String,
    payload: Box<RawValue>,
}

async fn publish(State(f): State<Arc<Fabric>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let req: Publish = parse(&body)?;
    f.publish(&caller, &req.routing_key, req.payload.get().as_bytes().to_vec())
        .await?;
    ok(StatusCode::OK, json!({ "status": "published" }))
}

#[derive(Deserialize)]
struct SubscribeParams {
    max: Option<u32>,
}

#[derive(Serialize)]
struct Delivered<'a> {
    exchange: &'a str,
    routing_key: &'a str,
    publisher_id: &'a str,
    timestamp: u64,
    payload: Box<RawValue>,
}

fn delivered(m: &Message) -> Delivered<'_> {
    let text = String::from_utf8_lossy(&m.payload).into_owned();
    let payload = RawValue::from_string(text.clone()).unwrap_or_else(|_| {
        RawValue::from_string(Value::String(text).to_string()).expect("a JSON string is valid JSON")
    });
    Delivered {
        exchange: &m.exchange,
        routing_key: &m.routing_key,
        publisher_id: &m.publisher_id,
        timestamp: m.timestamp,
        payload,
    }
}

async fn subscribe(
    State(f): State<Arc<Fabric>>,
    headers: HeaderMap,
    Query(params): Query<SubscribeParams>,
) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    subscriber(&caller)?;
    let messages = f.subscribe(&caller, params.max.unwrap_or(100).min(10_000)).await?;
    let out: Vec<Delivered> = messages.iter().map(delivered).collect();
    Ok(Json(json!({ "messages": out })).into_response())
}

async fn cat(State(f): State<Arc<Fabric>>, Query(params): Query<HashMap<String, String>>) -> ApiResult {
    let query = CatalogueQuery::from_params(params).map_err(GatewayError::BadRequest)?;
    let items = catalogue::search(&f.store().entities(), &query);
    ok(StatusCode::OK, json!({ "items": items }))
}

#[derive(Deserialize)]
struct Follow {
    entity_id: String,
    #[serde(default = "all_pattern")]
    pattern: String,
}

fn all_pattern() -> String {
    "#".into()
}

async fn follow(State(f): State<Arc<Fabric>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let req: Follow = parse(&body)?;
    let follow_id = f.store().create_follow(&caller, &req.entity_id, &req.pattern)?;
    ok(
        StatusCode::CREATED,
        json!({ "follow_id": follow_id, "status": FollowStatus::Pending }),
    )
}

#[derive(Deserialize)]
struct FollowId {
    follow_id: String,
}

async fn follow_status(
    State(f): State<Arc<Fabric>>,
    headers: HeaderMap,
    Query(q): Query<FollowId>,
) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let status = f.store().follow_status(&caller, &q.follow_id)?;
    ok(StatusCode::OK, json!({ "follow_id": q.follow_id, "status": status }))
}

async fn follow_requests(State(f): State<Arc<Fabric>>, headers: HeaderMap) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let requests = f.store().list_follow_requests(&caller)?;
    ok(StatusCode::OK, json!({ "requests": requests }))
}

#[derive(Deserialize)]
struct Share {
    follow_id: String,
    validity_seconds: Option<u64>,
}

async fn share(State(f): State<Arc<Fabric>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let req: Share = parse(&body)?;
    let permission = f.store().approve_follow(&caller, &req.follow_id, req.validity_seconds)?;
    ok(
        StatusCode::OK,
        json!({
            "follow_id": req.follow_id,
            "status": FollowStatus::Approved,
            "expires_at": permission.expires_at,
        }),
    )
}

async fn reject_follow(State(f): State<Arc<Fabric>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let req: FollowId = parse(&body)?;
    f.store().reject_follow(&caller, &req.follow_id)?;
    ok(
        StatusCode::OK,
        json!({ "follow_id": req.follow_id, "status": FollowStatus::Rejected }),
    )
}

#[derive(Deserialize)]
struct BindRequest {
    entity_id: String,
    #[serde(default = "all_pattern")]
    pattern: String,
}

async fn bind(State(f): State<Arc<Fabric>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let req: BindRequest = parse(&body)?;
    subscriber(&caller)?;
    crate::topic::RoutingPattern::parse(&req.pattern).map_err(|e| GatewayError::BadRequest(e.to_string()))?;
    let record = f.bind(&caller, &req.entity_id, &req.pattern).await?;
    ok(
        StatusCode::OK,
        json!({
            "entity_id": req.entity_id,
            "pattern": req.pattern,
            "publisher_node": record.publisher_node,
            "subscriber_node": record.subscriber_node,
            "relayed": record.relay.is_some(),
        }),
    )
}

async fn unbind(State(f): State<Arc<Fabric>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&f, &headers)?;
    let req: BindRequest = parse(&body)?;
    let sub_id = subscriber(&caller)?.to_string();
    let resource = Resource::Binding {
        exchange: req.entity_id.clone(),
        queue: sub_id.clone(),
        pattern: req.pattern.clone(),
    };
    if !f.store().check_permission(&caller, &resource, Action::Unbind).is_allow() {
        return Err(GatewayError::Forbidden("not your binding".into()));
    }
    let key = BindingKey {
        subscriber_id: sub_id,
        exchange: req.entity_id.clone(),
        pattern: req.pattern.clone(),
    };
    let removed = f.unbind(&key).await?;
    ok(
        StatusCode::OK,
        json!({ "entity_id": req.entity_id, "pattern": req.pattern, "removed": removed }),
    )
}
