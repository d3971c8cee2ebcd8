//! HTTP front end. Handlers hand the engine call to the blocking pool so a
//! slow backend never stalls the async workers.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use streamdesk_core::clickqa::FrameOverlay;
use thiserror::Error;
use tokio::net::TcpListener;

use crate::api::{
    ClickRequest, CopyRequest, ErrorBody, FlushReply, FramesRequest, Health, MemoryQuery, ProductRequest,
    PurifyRequest, SessionRequest,
};
use crate::engine::{Engine, EngineError, ErrorClass};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source} (is another process using the port? pick another with --port)")]
    Bind { addr: String, source: std::io::Error },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub struct ApiError(EngineError);

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.class() {
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::Invalid => StatusCode::BAD_REQUEST,
            ErrorClass::Unprocessable => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorClass::Upstream => StatusCode::BAD_GATEWAY,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            error: self.0.code().to_string(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(engine: &Arc<Engine>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = Arc::clone(engine);
    match tokio::task::spawn_blocking(move || f(&engine)).await {
        Ok(r) => r.map(Json).map_err(ApiError),
        Err(e) => Err(ApiError(EngineError::Worker(format!("handler panicked: {e}")))),
    }
}

async fn healthz(State(engine): State<Arc<Engine>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        backend: engine.config().backend.kind,
    })
}

async fn create_product(State(e): State<Arc<Engine>>, Json(req): Json<ProductRequest>) -> impl IntoResponse {
    blocking(&e, move |e| e.create_product(&req))
        .await
        .map(|body| (StatusCode::CREATED, body))
}

async fn get_product(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(&e, move |e| e.get_product(&id)).await
}

async fn copy(State(e): State<Arc<Engine>>, Json(req): Json<CopyRequest>) -> impl IntoResponse {
    blocking(&e, move |e| e.copy(&req)).await
}

async fn purify(State(e): State<Arc<Engine>>, Json(req): Json<PurifyRequest>) -> impl IntoResponse {
    blocking(&e, move |e| Ok(e.purify_text(&req.text))).await
}

async fn create_session(State(e): State<Arc<Engine>>, Json(req): Json<SessionRequest>) -> impl IntoResponse {
    blocking(&e, move |e| e.create_session(&req))
        .await
        .map(|body| (StatusCode::CREATED, body))
}

async fn ingest_frames(
    State(e): State<Arc<Engine>>,
    Path(id): Path<String>,
    Json(req): Json<FramesRequest>,
) -> impl IntoResponse {
    blocking(&e, move |e| e.ingest_frames(&id, &req))
        .await
        .map(|body| (StatusCode::ACCEPTED, body))
}

#[derive(Serialize)]
struct Stored {
    frame_id: u64,
}

async fn put_overlay(
    State(e): State<Arc<Engine>>,
    Path(id): Path<String>,
    Json(overlay): Json<FrameOverlay>,
) -> impl IntoResponse {
    let frame_id = overlay.frame_id;
    blocking(&e, move |e| e.put_overlay(&id, overlay))
        .await
        .map(|_| (StatusCode::CREATED, Json(Stored { frame_id })))
}

async fn latest_overlay(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(&e, move |e| e.get_overlay(&id, None)).await
}

async fn overlay_at(State(e): State<Arc<Engine>>, Path((id, frame)): Path<(String, u64)>) -> impl IntoResponse {
    blocking(&e, move |e| e.get_overlay(&id, Some(frame))).await
}

async fn click(
    State(e): State<Arc<Engine>>,
    Path(id): Path<String>,
    Json(req): Json<ClickRequest>,
) -> impl IntoResponse {
    blocking(&e, move |e| e.click(&id, &req).map(|o| o.reply)).await
}

async fn memory(
    State(e): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(q): Query<MemoryQuery>,
) -> impl IntoResponse {
    blocking(&e, move |e| e.memory(&id, &q)).await
}

async fn flush(State(e): State<Arc<Engine>>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(&e, move |e| e.flush(&id).map(|entries| FlushReply { entries })).await
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        %method,
        %path,
        status = resp.status().as_u16(),
        elapsed_ms = started.elapsed().as_secs_f64() * 1e3,
        "request"
    );
    resp
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/products", post(create_product))
        .route("/products/{id}", get(get_product))
        .route("/copy", post(copy))
        .route("/purify", post(purify))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/frames", post(ingest_frames))
        .route("/sessions/{id}/overlays", post(put_overlay))
        .route("/sessions/{id}/overlays/latest", get(latest_overlay))
        .route("/sessions/{id}/overlays/{frame}", get(overlay_at))
        .route("/sessions/{id}/click", post(click))
        .route("/sessions/{id}/memory", get(memory))
        .route("/sessions/{id}/flush", post(flush))
        .layer(middleware::from_fn(log_requests))
        .with_state(engine)
}

pub async fn bind(host: &str, port: u16) -> Result<TcpListener, ServeError> {
    let addr = format!("{host}:{port}");
    TcpListener::bind(&addr).await.map_err(|source| ServeError::Bind { addr, source })
}

/// Serve until ctrl-c, then flush every session.
pub async fn serve(engine: Arc<Engine>, listener: TcpListener) -> Result<(), ServeError> {
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, storage = %engine.config().storage.display(), "listening");
    axum::serve(listener, router(Arc::clone(&engine)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tokio::task::spawn_blocking(move || engine.close_all())
        .await
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(())
}

/// Handle to a server running on a background runtime; for tests and the
/// simulator's live mode.
pub struct RunningServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningServer {
    /// Bind an ephemeral port on 127.0.0.1 and serve `engine` from a
    /// dedicated runtime thread.
    pub fn start(engine: Arc<Engine>) -> Result<Self, ServeError> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let listener = rt.block_on(bind("127.0.0.1", 0))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("streamdesk-http".into()).spawn(move || {
            rt.block_on(async move {
                let served = axum::serve(listener, router(engine)).with_graceful_shutdown(async {
                    let _ = rx.await;
                });
                if let Err(e) = served.await {
                    tracing::error!(error = %e, "server stopped");
                }
            });
        })?;
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
