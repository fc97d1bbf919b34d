//! HTTP front ends for the federation engine and the replica location
//! service, and the lifecycle shared by both.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use gridfed_core::remote::ReplicaLocator;
use gridfed_core::rls::SharedReplicaMapping;
use gridfed_core::wire::{
    encode_error, encode_table, from_json, to_json, AckResponse, HealthResponse, LookupResponse, PublishRequest,
    QueryRequest, RefreshResponse, RegisterRequest, RegisterResponse,
};
use gridfed_core::{Error, Result};
use tokio::sync::oneshot;

use crate::engine::{Engine, RefreshTimer, Registration, SpecSource};

pub const DEFAULT_DRAIN_TIMEOUT: Duration = Duration::from_secs(10);

fn json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn ok(body: String) -> Response {
    json(StatusCode::OK, body)
}

fn fail(e: &Error) -> Response {
    json(StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::BAD_REQUEST), encode_error(e))
}

fn respond(r: Result<String>) -> Response {
    match r {
        Ok(body) => ok(body),
        Err(e) => fail(&e),
    }
}

fn decode<'a, T: serde::Deserialize<'a>>(body: &'a str) -> Result<T> {
    from_json(body).map_err(|e| Error::BadRequest(e.to_string()))
}

async fn blocking<F>(f: F) -> Response
where
    F: FnOnce() -> Result<String> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => respond(r),
        Err(e) => fail(&Error::Io(format!("handler failed: {e}"))),
    }
}

async fn query(State(engine): State<Arc<Engine>>, body: String) -> Response {
    if engine.is_shutting_down() {
        return fail(&Error::Shutdown);
    }
    let req: QueryRequest = match decode(&body) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    blocking(move || engine.query(&req.sql, req.no_forward).map(|t| encode_table(&t))).await
}

async fn register(State(engine): State<Arc<Engine>>, body: String) -> Response {
    if engine.is_shutting_down() {
        return fail(&Error::Shutdown);
    }
    let req: RegisterRequest = match decode(&body) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let spec = match (req.spec_url, req.spec_inline) {
        (Some(u), None) => SpecSource::Url(u),
        (None, Some(s)) => SpecSource::Inline(s),
        _ => return fail(&Error::BadRequest("exactly one of spec_url and spec_inline is required".into())),
    };
    let reg = Registration {
        spec,
        driver: req.driver,
        url: req.url,
        username: req.username.unwrap_or_default(),
        password: req.password.unwrap_or_default(),
    };
    blocking(move || engine.register(&reg).map(|source_id| to_json(&RegisterResponse { source_id }))).await
}

async fn refresh(State(engine): State<Arc<Engine>>) -> Response {
    if engine.is_shutting_down() {
        return fail(&Error::Shutdown);
    }
    blocking(move || Ok(to_json(&RefreshResponse { changed: engine.refresh().changed_ids() }))).await
}

async fn schema(State(engine): State<Arc<Engine>>) -> Response {
    ok(to_json(&engine.snapshot().schema()))
}

async fn health() -> Response {
    ok(to_json(&HealthResponse { ok: true }))
}

pub fn federation_router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/register", post(register))
        .route("/refresh", post(refresh))
        .route("/schema", get(schema))
        .route("/health", get(health))
        .with_state(engine)
}

async fn rls_publish(State(rls): State<Arc<SharedReplicaMapping>>, body: String) -> Response {
    respond(decode::<PublishRequest>(&body).and_then(|r| rls.publish(&r.server, &r.tables)).map(|ack| to_json(&AckResponse { ack })))
}

async fn rls_unpublish(State(rls): State<Arc<SharedReplicaMapping>>, body: String) -> Response {
    respond(decode::<PublishRequest>(&body).and_then(|r| rls.unpublish(&r.server, &r.tables)).map(|ack| to_json(&AckResponse { ack })))
}

async fn rls_lookup(State(rls): State<Arc<SharedReplicaMapping>>, Query(params): Query<HashMap<String, String>>) -> Response {
    let Some(table) = params.get("table") else {
        return fail(&Error::BadRequest("missing `table` parameter".into()));
    };
    respond(rls.lookup(table).map(|servers| to_json(&LookupResponse { servers })))
}

pub fn rls_router(mapping: Arc<SharedReplicaMapping>) -> Router {
    Router::new()
        .route("/rls/publish", post(rls_publish))
        .route("/rls/unpublish", post(rls_unpublish))
        .route("/rls/lookup", get(rls_lookup))
        .route("/health", get(health))
        .with_state(mapping)
}

/// A running HTTP service on its own runtime thread.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for in-flight requests up to
    /// the drain timeout.
    pub fn shutdown(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Binds `addr`; port 0 picks a free port.
pub fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => Error::AddressInUse(addr.to_string()),
        _ => Error::Io(format!("{addr}: {e}")),
    })
}

pub fn serve(router: Router, addr: &str, drain: Duration) -> Result<ServerHandle> {
    serve_on(bind(addr)?, router, drain)
}

/// Serves `router` on a bound listener from a dedicated runtime thread.
pub fn serve_on(listener: TcpListener, router: Router, drain: Duration) -> Result<ServerHandle> {
    listener.set_nonblocking(true).map_err(|e| Error::Io(e.to_string()))?;
    let local = listener.local_addr().map_err(|e| Error::Io(e.to_string()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with runtime");
            let (sig_tx, sig_rx) = oneshot::channel::<()>();
            let server = axum::serve(listener, router).with_graceful_shutdown(async {
                let _ = sig_rx.await;
            });
            let mut task = tokio::spawn(async move {
                let _ = server.await;
            });
            tokio::select! {
                _ = &mut task => {}
                _ = rx => {
                    let _ = sig_tx.send(());
                    let _ = tokio::time::timeout(drain, &mut task).await;
                }
            }
        });
        runtime.shutdown_timeout(Duration::from_millis(100));
    });
    Ok(ServerHandle { addr: local, stop: Some(tx), thread: Some(thread) })
}

/// A federation server: HTTP service plus schema refresh timer.
pub struct FederationServer {
    pub engine: Arc<Engine>,
    http: Option<ServerHandle>,
    timer: Option<RefreshTimer>,
}

impl FederationServer {
    /// Serves `engine` on `listener` and starts the refresh timer when
    /// `refresh` is set.
    pub fn start(engine: Arc<Engine>, listener: TcpListener, refresh: bool) -> Result<Self> {
        let http = serve_on(listener, federation_router(engine.clone()), DEFAULT_DRAIN_TIMEOUT)?;
        let timer = refresh.then(|| RefreshTimer::start(engine.clone(), engine.config().refresh_interval));
        Ok(FederationServer { engine, http: Some(http), timer })
    }

    pub fn url(&self) -> String {
        self.http.as_ref().expect("running").url()
    }

    pub fn addr(&self) -> SocketAddr {
        self.http.as_ref().expect("running").addr()
    }

    /// New requests are answered with `Shutdown`; in-flight ones finish.
    pub fn shutdown(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.engine.begin_shutdown();
        if let Some(t) = self.timer.take() {
            t.stop();
        }
        if let Some(h) = self.http.take() {
            h.shutdown();
        }
    }
}

impl Drop for FederationServer {
    fn drop(&mut self) {
        self.halt();
    }
}
