//! Thin client for the gateway REST API.

use serde_json::{json, Value};

use crate::auth::backend::APIKEY_HEADER;

/// Status code plus decoded JSON body (`Value::Null` if the body was empty).
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

impl Reply {
    pub fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn str(&self, field: &str) -> String {
        self.body[field].as_str().unwrap_or_default().to_string()
    }
}

#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    http: reqwest::Client,
}

impl ApiClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let http = reqwest::Client::builder()
            .pool_max_idle_per_host(64)
            .build()
            .expect("default http client");
        Self::with_client(base_url, http)
    }

    pub fn with_client(base_url: impl Into<String>, http: reqwest::Client) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send(&self, req: reqwest::RequestBuilder, key: Option<&str>) -> Result<Reply, reqwest::Error> {
        let req = match key {
            Some(k) => req.header(APIKEY_HEADER, k),
            None => req,
        };
        let resp = req.send().await?;
        let status = resp.status().as_u16();
        let bytes = resp.bytes().await?;
        let body = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        Ok(Reply { status, body })
    }

    pub async fn post(&self, path: &str, key: Option<&str>, body: &Value) -> Result<Reply, reqwest::Error> {
        self.send(self.http.post(format!("{}{path}", self.base)).json(body), key)
            .await
    }

    pub async fn get(&self, path: &str, key: Option<&str>, query: &[(&str, String)]) -> Result<Reply, reqwest::Error> {
        self.send(self.http.get(format!("{}{path}", self.base)).query(query), key)
            .await
    }

    pub async fn register_provider(&self, admin_key: &str, provider_id: &str) -> Result<Reply, reqwest::Error> {
        self.post("/admin/register-provider", Some(admin_key), &json!({ "provider_id": provider_id }))
            .await
    }

    pub async fn register_entity(
        &self,
        owner_key: &str,
        entity_id: &str,
        kind: &str,
        catalogue_item: Value,
    ) -> Result<Reply, reqwest::Error> {
        self.post(
            "/owner/register-entity",
            Some(owner_key),
            &json!({ "entity_id": entity_id, "kind": kind, "catalogue_item": catalogue_item }),
        )
        .await
    }

    pub async fn publish(&self, key: &str, routing_key: &str, payload: &Value) -> Result<Reply, reqwest::Error> {
        self.post(
            "/entity/publish",
            Some(key),
            &json!({ "routing_key": routing_key, "payload": payload }),
        )
        .await
    }

    /// Publishes an already-serialised body; avoids re-encoding large payloads.
    pub async fn publish_raw(&self, key: &str, body: bytes::Bytes) -> Result<Reply, reqwest::Error> {
        let req = self
            .http
            .post(format!("{}/entity/publish", self.base))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        self.send(req, Some(key)).await
    }

    pub async fn subscribe(&self, key: &str, max: u32) -> Result<Reply, reqwest::Error> {
        self.get("/entity/subscribe", Some(key), &[("max", max.to_string())])
            .await
    }

    pub async fn catalogue(&self, query: &[(&str, String)]) -> Result<Reply, reqwest::Error> {
        self.get("/cat", None, query).await
    }

    pub async fn follow(&self, key: &str, entity_id: &str, pattern: &str) -> Result<Reply, reqwest::Error> {
        self.post(
            "/entity/follow",
            Some(key),
            &json!({ "entity_id": entity_id, "pattern": pattern }),
        )
        .await
    }

    pub async fn follow_status(&self, key: &str, follow_id: &str) -> Result<Reply, reqwest::Error> {
        self.get("/entity/follow-status", Some(key), &[("follow_id", follow_id.to_string())])
            .await
    }

    pub async fn follow_requests(&self, key: &str) -> Result<Reply, reqwest::Error> {
        self.get("/entity/follow-requests", Some(key), &[]).await
    }

    pub async fn share(&self, key: &str, follow_id: &str, validity_seconds: Option<u64>) -> Result<Reply, reqwest::Error> {
        let mut body = json!({ "follow_id": follow_id });
        if let Some(v) = validity_seconds {
            body["validity_seconds"] = json!(v);
        }
        self.post("/entity/share", Some(key), &body).await
    }

    pub async fn reject_follow(&self, key: &str, follow_id: &str) -> Result<Reply, reqwest::Error> {
        self.post("/entity/reject-follow", Some(key), &json!({ "follow_id": follow_id }))
            .await
    }

    pub async fn bind(&self, key: &str, entity_id: &str, pattern: &str) -> Result<Reply, reqwest::Error> {
        self.post(
            "/entity/bind",
            Some(key),
            &json!({ "entity_id": entity_id, "pattern": pattern }),
        )
        .await
    }

    pub async fn unbind(&self, key: &str, entity_id: &str, pattern: &str) -> Result<Reply, reqwest::Error> {
        self.post(
            "/entity/unbind",
            Some(key),
            &json!({ "entity_id": entity_id, "pattern": pattern }),
        )
        .await
    }
}
