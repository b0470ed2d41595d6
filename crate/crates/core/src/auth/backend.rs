//! Authorisation backend consulted by broker nodes.
//!
//! Nodes talk to the Auth DB through [`AuthBackend`]: in-process via the
//! store itself, or over HTTP to a gateway exposing [`routes`]. Decisions are
//! cached for a short TTL by [`CachedBackend`].

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::keys;
use super::{Action, AuthStore, Decision, Principal, Resource};

pub const DEFAULT_CACHE_TTL: Duration = Duration::from_secs(5);
pub const APIKEY_HEADER: &str = "apikey";

#[async_trait]
pub trait AuthBackend: Send + Sync + std::fmt::Debug {
    async fn authenticate(&self, api_key: &str) -> Option<Principal>;
    async fn check(&self, principal: &Principal, resource: &Resource, action: Action) -> Decision;
}

#[async_trait]
impl AuthBackend for AuthStore {
    async fn authenticate(&self, api_key: &str) -> Option<Principal> {
        AuthStore::authenticate(self, api_key)
    }

    async fn check(&self, principal: &Principal, resource: &Resource, action: Action) -> Decision {
        self.check_permission(principal, resource, action)
    }
}

type CheckKey = (Principal, Resource, Action);

/// TTL cache in front of another backend.
#[derive(Debug)]
pub struct CachedBackend<B> {
    inner: B,
    ttl: Duration,
    identities: Mutex<HashMap<[u8; 32], (Option<Principal>, Instant)>>,
    decisions: Mutex<HashMap<CheckKey, (Decision, Instant)>>,
}

impl<B: AuthBackend> CachedBackend<B> {
    pub fn new(inner: B, ttl: Duration) -> Self {
        Self {
            inner,
            ttl,
            identities: Mutex::default(),
            decisions: Mutex::default(),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

#[async_trait]
impl<B: AuthBackend> AuthBackend for CachedBackend<B> {
    async fn authenticate(&self, api_key: &str) -> Option<Principal> {
        let fp = keys::fingerprint(api_key);
        if let Some((p, at)) = self.identities.lock().get(&fp) {
            if at.elapsed() < self.ttl {
                return p.clone();
            }
        }
        let principal = self.inner.authenticate(api_key).await;
        // negative answers are not cached: a key may be registered a moment later
        if principal.is_some() {
            self.identities
                .lock()
                .insert(fp, (principal.clone(), Instant::now()));
        }
        principal
    }

    async fn check(&self, principal: &Principal, resource: &Resource, action: Action) -> Decision {
        let key = (principal.clone(), resource.clone(), action);
        if let Some((d, at)) = self.decisions.lock().get(&key) {
            if at.elapsed() < self.ttl {
                return *d;
            }
        }
        let decision = self.inner.check(principal, resource, action).await;
        self.decisions.lock().insert(key, (decision, Instant::now()));
        decision
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UserQuery {
    pub apikey: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UserAnswer {
    pub principal: Option<Principal>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResourceQuery {
    pub principal: Principal,
    pub resource: Resource,
    pub action: Action,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResourceAnswer {
    pub decision: Decision,
}

/// `POST /auth/user` and `POST /auth/resource`, admin credential required.
pub fn routes(store: Arc<AuthStore>) -> Router {
    Router::new()
        .route("/auth/user", post(user))
        .route("/auth/resource", post(resource))
        .with_state(store)
}

fn require_admin(store: &AuthStore, headers: &HeaderMap) -> Result<(), StatusCode> {
    let key = headers
        .get(APIKEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or(StatusCode::UNAUTHORIZED)?;
    match store.authenticate(key) {
        Some(Principal::Admin) => Ok(()),
        Some(_) => Err(StatusCode::FORBIDDEN),
        None => Err(StatusCode::UNAUTHORIZED),
    }
}

async fn user(
    State(store): State<Arc<AuthStore>>,
    headers: HeaderMap,
    Json(q): Json<UserQuery>,
) -> Result<Json<UserAnswer>, StatusCode> {
    require_admin(&store, &headers)?;
    Ok(Json(UserAnswer {
        principal: AuthStore::authenticate(&store, &q.apikey),
    }))
}

async fn resource(
    State(store): State<Arc<AuthStore>>,
    headers: HeaderMap,
    Json(q): Json<ResourceQuery>,
) -> Result<Json<ResourceAnswer>, StatusCode> {
    require_admin(&store, &headers)?;
    Ok(Json(ResourceAnswer {
        decision: AuthStore::check_permission(&store, &q.principal, &q.resource, q.action),
    }))
}

/// Remote backend reached over HTTP. Transport failures deny.
#[derive(Debug, Clone)]
pub struct HttpAuthBackend {
    base_url: String,
    admin_key: String,
    client: reqwest::Client,
}

impl HttpAuthBackend {
    pub fn new(base_url: impl Into<String>, admin_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            admin_key: admin_key.into(),
            client: reqwest::Client::new(),
        }
    }

    async fn post<Q: Serialize, A: for<'de> Deserialize<'de>>(&self, path: &str, body: &Q) -> Option<A> {
        let response = self
            .client
            .post(format!("{}{path}", self.base_url))
            .header(APIKEY_HEADER, &self.admin_key)
            .json(body)
            .send()
            .await
            .map_err(|e| tracing::warn!(error = %e, "auth backend unreachable"))
            .ok()?;
        if !response.status().is_success() {
            tracing::warn!(status = %response.status(), path, "auth backend refused");
            return None;
        }
        response.json().await.ok()
    }
}

#[async_trait]
impl AuthBackend for HttpAuthBackend {
    async fn authenticate(&self, api_key: &str) -> Option<Principal> {
        let answer: UserAnswer = self
            .post("/auth/user", &UserQuery { apikey: api_key.to_string() })
            .await?;
        answer.principal
    }

    async fn check(&self, principal: &Principal, resource: &Resource, action: Action) -> Decision {
        let query = ResourceQuery {
            principal: principal.clone(),
            resource: resource.clone(),
            action,
        };
        self.post::<_, ResourceAnswer>("/auth/resource", &query)
            .await
            .map(|a| a.decision)
            .unwrap_or(Decision::Deny)
    }
}
