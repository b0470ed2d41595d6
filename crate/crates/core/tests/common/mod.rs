#![allow(dead_code)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use vermillion::clock::{ManualClock, SharedClock};
use vermillion::deploy::{Deployment, DeploymentConfig};
use vermillion::loadgen::{ApiClient, Reply};
use vermillion::router::RoutingMode;

pub const ADMIN: &str = "test-admin-key";

pub fn config(mode: RoutingMode, nodes: usize) -> DeploymentConfig {
    let mut c = DeploymentConfig::new(mode, nodes);
    c.admin_key = ADMIN.into();
    c.key_iterations = 100;
    c
}

pub async fn deploy(mode: RoutingMode, nodes: usize) -> (Deployment, ApiClient) {
    let d = Deployment::start(config(mode, nodes)).await.unwrap();
    let api = ApiClient::new(d.gateway_url(0));
    (d, api)
}

pub async fn deploy_with_clock(mode: RoutingMode, nodes: usize, start_ms: u64) -> (Deployment, ApiClient, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(start_ms));
    let mut c = config(mode, nodes);
    c.clock = Some(clock.clone() as SharedClock);
    let d = Deployment::start(c).await.unwrap();
    let api = ApiClient::new(d.gateway_url(0));
    (d, api, clock)
}

pub fn must(r: Reply, status: u16) -> Value {
    assert_eq!(r.status, status, "unexpected reply {:?}", r.body);
    r.body
}

pub async fn provider(api: &ApiClient, id: &str) -> String {
    must(api.register_provider(ADMIN, id).await.unwrap(), 201)["apikey"]
        .as_str()
        .unwrap()
        .to_string()
}

pub async fn entity(api: &ApiClient, owner_key: &str, id: &str, kind: &str) -> String {
    must(api.register_entity(owner_key, id, kind, json!({ "type": kind })).await.unwrap(), 201)["apikey"]
        .as_str()
        .unwrap()
        .to_string()
}

/// follow + share, returning the follow id.
pub async fn grant(api: &ApiClient, sub_key: &str, owner_key: &str, publisher: &str, pattern: &str, validity: Option<u64>) -> String {
    let follow_id = must(api.follow(sub_key, publisher, pattern).await.unwrap(), 201)["follow_id"]
        .as_str()
        .unwrap()
        .to_string();
    must(api.share(owner_key, &follow_id, validity).await.unwrap(), 200);
    follow_id
}

pub async fn publish_seq(api: &ApiClient, key: &str, routing_key: &str, seqs: impl IntoIterator<Item = u64>) {
    for s in seqs {
        must(api.publish(key, routing_key, &json!({ "seq": s })).await.unwrap(), 200);
    }
}

/// Drains the subscriber queue once and returns the `seq` fields.
pub async fn drain(api: &ApiClient, key: &str) -> Vec<u64> {
    let body = must(api.subscribe(key, 10_000).await.unwrap(), 200);
    body["messages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["payload"]["seq"].as_u64().unwrap())
        .collect()
}

/// Polls until `want` messages have arrived or the deadline passes.
pub async fn collect(api: &ApiClient, key: &str, want: usize, deadline: Duration) -> Vec<u64> {
    let until = Instant::now() + deadline;
    let mut got = Vec::new();
    while got.len() < want && Instant::now() < until {
        let batch = drain(api, key).await;
        if batch.is_empty() {
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        got.extend(batch);
    }
    got
}

/// One observable step of the reference workflow, with random material
/// (keys, follow ids) left out so runs can be compared.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub step: &'static str,
    pub status: u16,
    pub detail: Value,
}

/// Register, publish before approval, follow, list, share, bind, subscribe,
/// plus a rejected follow. Request `i` goes to `apis[i % apis.len()]`.
pub async fn reference_workflow(apis: &[ApiClient]) -> Vec<Outcome> {
    let mut turn = 0usize;
    let mut next = || {
        turn += 1;
        &apis[(turn - 1) % apis.len()]
    };
    let mut out = Vec::new();
    let mut record = |step: &'static str, r: &Reply, detail: Value| {
        out.push(Outcome { step, status: r.status, detail });
    };

    let r = next().register_provider(ADMIN, "pune").await.unwrap();
    let pkey = r.str("apikey");
    record("register provider", &r, json!(r.body["provider_id"]));
    let r = next()
        .register_entity(&pkey, "pune-flood-1", "publisher", json!({ "type": "flood", "location": { "lat": 18.52, "lon": 73.85 } }))
        .await
        .unwrap();
    let pubkey = r.str("apikey");
    record("register publisher", &r, json!(r.body["entity_id"]));
    let r = next().register_entity(&pkey, "pune-app", "subscriber", json!({ "type": "app" })).await.unwrap();
    let subkey = r.str("apikey");
    record("register subscriber", &r, json!(r.body["entity_id"]));
    let r = next().register_entity(&pkey, "pune-app2", "subscriber", json!({ "type": "app" })).await.unwrap();
    let sub2key = r.str("apikey");
    record("register second subscriber", &r, json!(r.body["entity_id"]));

    for s in 0..3 {
        let r = next().publish(&pubkey, "flood.level", &json!({ "seq": s })).await.unwrap();
        record("publish before approval", &r, Value::Null);
    }
    let r = next().publish("not-a-key", "flood.level", &json!({ "seq": 99 })).await.unwrap();
    record("publish with bad key", &r, Value::Null);

    let r = next().follow(&subkey, "pune-flood-1", "#").await.unwrap();
    let follow_id = r.str("follow_id");
    record("follow", &r, json!(r.body["status"]));
    let r = next().follow_status(&subkey, &follow_id).await.unwrap();
    record("follow status pending", &r, json!(r.body["status"]));
    let r = next().bind(&subkey, "pune-flood-1", "#").await.unwrap();
    record("bind before share", &r, Value::Null);
    let r = next().follow_requests(&pkey).await.unwrap();
    let rows: Vec<Value> = r.body["requests"]
        .as_array()
        .map(|a| a.iter().map(|v| json!([v["subscriber_id"], v["entity_id"], v["pattern"]])).collect())
        .unwrap_or_default();
    record("follow requests", &r, json!(rows));
    let r = next().share(&pkey, &follow_id, None).await.unwrap();
    record("share", &r, json!(r.body["status"]));
    let r = next().follow_status(&subkey, &follow_id).await.unwrap();
    record("follow status approved", &r, json!(r.body["status"]));
    let r = next().bind(&subkey, "pune-flood-1", "#").await.unwrap();
    record("bind", &r, Value::Null);

    for s in 3..8 {
        let r = next().publish(&pubkey, "flood.level", &json!({ "seq": s })).await.unwrap();
        record("publish after bind", &r, Value::Null);
    }
    let r = next().subscribe(&subkey, 100).await.unwrap();
    let seqs: Vec<Value> = r.body["messages"]
        .as_array()
        .map(|a| a.iter().map(|m| m["payload"]["seq"].clone()).collect())
        .unwrap_or_default();
    record("subscribe", &r, json!(seqs));
    let r = next().subscribe(&subkey, 100).await.unwrap();
    record("subscribe again", &r, json!(r.body["messages"].as_array().map_or(0, |a| a.len())));

    let r = next().follow(&sub2key, "pune-flood-1", "#").await.unwrap();
    let follow2 = r.str("follow_id");
    record("second follow", &r, json!(r.body["status"]));
    let r = next().reject_follow(&pkey, &follow2).await.unwrap();
    record("reject", &r, json!(r.body["status"]));
    let r = next().follow_status(&sub2key, &follow2).await.unwrap();
    record("follow status rejected", &r, json!(r.body["status"]));
    let r = next().bind(&sub2key, "pune-flood-1", "#").await.unwrap();
    record("bind after reject", &r, Value::Null);
    let r = next().share(&pkey, &follow2, None).await.unwrap();
    record("share after reject", &r, Value::Null);

    let r = next().catalogue(&[("provider", "pune".into()), ("type", "flood".into())]).await.unwrap();
    let ids: Vec<Value> = r.body["items"]
        .as_array()
        .map(|a| a.iter().map(|i| i["entity_id"].clone()).collect())
        .unwrap_or_default();
    record("catalogue", &r, json!(ids));
    out
}

/// The outcomes the reference workflow must produce.
pub fn expected_workflow() -> Vec<(&'static str, u16, Value)> {
    let mut v = vec![
        ("register provider", 201, json!("pune")),
        ("register publisher", 201, json!("pune-flood-1")),
        ("register subscriber", 201, json!("pune-app")),
        ("register second subscriber", 201, json!("pune-app2")),
    ];
    v.extend(std::iter::repeat(("publish before approval", 200, Value::Null)).take(3));
    v.extend([
        ("publish with bad key", 401, Value::Null),
        ("follow", 201, json!("PENDING")),
        ("follow status pending", 200, json!("PENDING")),
        ("bind before share", 403, Value::Null),
        ("follow requests", 200, json!([["pune-app", "pune-flood-1", "#"]])),
        ("share", 200, json!("APPROVED")),
        ("follow status approved", 200, json!("APPROVED")),
        ("bind", 200, Value::Null),
    ]);
    v.extend(std::iter::repeat(("publish after bind", 200, Value::Null)).take(5));
    v.extend([
        ("subscribe", 200, json!([3, 4, 5, 6, 7])),
        ("subscribe again", 200, json!(0)),
        ("second follow", 201, json!("PENDING")),
        ("reject", 200, json!("REJECTED")),
        ("follow status rejected", 200, json!("REJECTED")),
        ("bind after reject", 403, Value::Null),
        ("share after reject", 409, Value::Null),
        ("catalogue", 200, json!(["pune-flood-1"])),
    ]);
    v
}

pub fn matches_expected(outcomes: &[Outcome]) -> Result<(), String> {
    let expected = expected_workflow();
    if outcomes.len() != expected.len() {
        return Err(format!("{} steps, expected {}", outcomes.len(), expected.len()));
    }
    for (o, (step, status, detail)) in outcomes.iter().zip(expected) {
        if o.step != step || o.status != status || o.detail != detail {
            return Err(format!("step {:?}: got {} {}, expected {} {}", o.step, o.status, o.detail, status, detail));
        }
    }
    Ok(())
}
