//! HTTP/JSON front end. Bodies go both ways as canonical JSON; every failure
//! is `{"error": code, "detail": ...}`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::Router;
use icp_core::canonical;
use icp_core::federation::TrustBundle;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use tokio::sync::oneshot;

use crate::api::{IssueResponse, RecordsQuery, ReloadResponse, ReplayRequest, RevokeRequest};
use crate::error::ServiceError;
use crate::plane::ControlPlane;

type Shared = State<Arc<ControlPlane>>;

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match canonical::to_string(value) {
        Ok(body) => (status, [(header::CONTENT_TYPE, "application/json")], body).into_response(),
        Err(e) => error_response(&ServiceError::Storage(e.to_string())),
    }
}

fn error_response(e: &ServiceError) -> Response {
    let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    if status.is_server_error() {
        tracing::error!(error = %e, "request failed");
    }
    json_response(status, &e.body())
}

fn reply<T: Serialize>(result: Result<T, ServiceError>) -> Response {
    match result {
        Ok(v) => json_response(StatusCode::OK, &v),
        Err(e) => error_response(&e),
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::MalformedRequest(e.to_string()))
}

/// Plane calls may fsync the audit log, so they run off the async workers.
async fn blocking<T, F>(plane: Arc<ControlPlane>, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&ControlPlane) -> Result<T, ServiceError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&plane)).await {
        Ok(result) => reply(result),
        Err(e) => error_response(&ServiceError::Storage(format!("worker failed: {e}"))),
    }
}

fn empty() -> serde_json::Value {
    json!({})
}

async fn decide(State(p): Shared, body: Bytes) -> Response {
    blocking(p, move |p| p.decide(parse(&body)?)).await
}

async fn simulate(State(p): Shared, body: Bytes) -> Response {
    blocking(p, move |p| p.simulate(parse(&body)?)).await
}

async fn issue(State(p): Shared, body: Bytes) -> Response {
    blocking(p, move |p| Ok(IssueResponse { token: p.issue(parse(&body)?)? })).await
}

async fn revoke(State(p): Shared, body: Bytes) -> Response {
    blocking(p, move |p| {
        let req: RevokeRequest = parse(&body)?;
        p.revoke(&req.txn, req.exp).map(|_| empty())
    })
    .await
}

async fn trust_bundle(State(p): Shared) -> Response {
    reply(Ok(p.trust_bundle()))
}

async fn import_bundle(State(p): Shared, body: Bytes) -> Response {
    blocking(p, move |p| {
        let text = std::str::from_utf8(&body).map_err(|e| ServiceError::MalformedRequest(e.to_string()))?;
        p.import_bundle(TrustBundle::from_json(text)?).map(|_| empty())
    })
    .await
}

async fn remove_bundle(State(p): Shared, Path(domain): Path<String>) -> Response {
    blocking(p, move |p| p.remove_federation(&domain).map(|_| empty())).await
}

async fn policies(State(p): Shared) -> Response {
    reply(Ok(p.policies()))
}

async fn reload(State(p): Shared) -> Response {
    blocking(p, |p| p.reload_policies().map(|version| ReloadResponse { version })).await
}

async fn records(State(p): Shared, q: Result<Query<RecordsQuery>, QueryRejection>) -> Response {
    match q {
        Ok(Query(q)) => blocking(p, move |p| Ok(p.audit_records(q.from_seq, q.to_seq))).await,
        Err(e) => error_response(&ServiceError::MalformedRequest(e.body_text())),
    }
}

async fn verify(State(p): Shared) -> Response {
    blocking(p, |p| p.audit_verify()).await
}

async fn replay(State(p): Shared, body: Bytes) -> Response {
    blocking(p, move |p| {
        let req: ReplayRequest = if body.is_empty() { ReplayRequest::default() } else { parse(&body)? };
        p.audit_replay(req)
    })
    .await
}

async fn not_found() -> Response {
    json_response(StatusCode::NOT_FOUND, &json!({"error": "not_found", "detail": "no such endpoint"}))
}

pub fn router(plane: Arc<ControlPlane>) -> Router {
    Router::new()
        .route("/v1/decide", post(decide))
        .route("/v1/simulate", post(simulate))
        .route("/v1/tokens", post(issue))
        .route("/v1/tokens/revoke", post(revoke))
        .route("/v1/trust-bundle", get(trust_bundle))
        .route("/v1/federation/bundles", put(import_bundle))
        .route("/v1/federation/bundles/{domain}", delete(remove_bundle))
        .route("/v1/policies", get(policies))
        .route("/v1/policies/reload", post(reload))
        .route("/v1/audit/records", get(records))
        .route("/v1/audit/verify", post(verify))
        .route("/v1/audit/replay", post(replay))
        .fallback(not_found)
        .with_state(plane)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// A daemon running on its own runtime thread. Dropping it shuts the server
/// down.
pub struct DaemonHandle {
    addr: SocketAddr,
    plane: Arc<ControlPlane>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl DaemonHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn plane(&self) -> &Arc<ControlPlane> {
        &self.plane
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free one) and serves `plane` in the
/// background, for embedding a daemon in tests and scenario runs.
pub fn spawn(plane: Arc<ControlPlane>, addr: SocketAddr) -> std::io::Result<DaemonHandle> {
    spawn_with(plane, addr, |r| r)
}

/// [`spawn`] with a hook to wrap the router, e.g. in extra middleware.
pub fn spawn_with(
    plane: Arc<ControlPlane>,
    addr: SocketAddr,
    wrap: impl FnOnce(Router) -> Router,
) -> std::io::Result<DaemonHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let app = wrap(router(plane.clone()));
    let thread = std::thread::Builder::new()
        .name(format!("icpd-{addr}"))
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                serve(listener, app, async {
                    let _ = stopped.await;
                })
                .await
            })
        })?;
    Ok(DaemonHandle {
        addr,
        plane,
        stop: Some(stop),
        thread: Some(thread),
    })
}
