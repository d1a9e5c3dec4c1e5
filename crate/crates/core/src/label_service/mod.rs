//! JSON-over-HTTP bridge between a run and a human labeller.
//!
//! | method | path          | responses                                  |
//! |--------|---------------|--------------------------------------------|
//! | GET    | `/api/query`  | 200 [`QueryPayload`], 204 none pending, 503 no run |
//! | POST   | `/api/label`  | 200, 422 `z` outside `[0, 1]`, 409 unknown or answered id |
//! | GET    | `/api/status` | 200 [`StatusSnapshot`]                     |
//!
//! `z = 1` means the left clip is preferred absolutely, `z = 0` the right one,
//! `0.5` equal.

mod hub;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tower_http::cors::{Any, CorsLayer};

pub use hub::{segment_trace, LabelHub, LabelSubmission, QueryPayload, Rejection, StatusSnapshot, SCHEMA_VERSION};

use crate::error::{Error, Result};

#[derive(serde::Serialize)]
struct Message {
    error: &'static str,
}

fn reject(code: StatusCode, error: &'static str) -> Response {
    (code, Json(Message { error })).into_response()
}

async fn get_query(State(hub): State<Arc<LabelHub>>) -> Response {
    match hub.oldest_pending() {
        Ok(Some(p)) => Json(p).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(_) => reject(StatusCode::SERVICE_UNAVAILABLE, "no active run"),
    }
}

async fn post_label(State(hub): State<Arc<LabelHub>>, Json(sub): Json<LabelSubmission>) -> Response {
    match hub.submit(sub) {
        Ok(()) => (StatusCode::OK, Json(serde_json::json!({ "accepted": sub.query_id }))).into_response(),
        Err(Rejection::OutOfRange) => reject(StatusCode::UNPROCESSABLE_ENTITY, "z must lie in [0, 1]"),
        Err(Rejection::AlreadyAnswered) => reject(StatusCode::CONFLICT, "query already answered or expired"),
        Err(Rejection::UnknownQuery) => reject(StatusCode::CONFLICT, "unknown query id"),
        Err(Rejection::NoActiveRun) => reject(StatusCode::SERVICE_UNAVAILABLE, "no active run"),
    }
}

async fn get_status(State(hub): State<Arc<LabelHub>>) -> Json<StatusSnapshot> {
    Json(hub.status())
}

pub fn router(hub: Arc<LabelHub>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    Router::new()
        .route("/api/query", get(get_query))
        .route("/api/label", post(post_label))
        .route("/api/status", get(get_status))
        .layer(cors)
        .with_state(hub)
}

/// Runs the service on its own thread and runtime. Port 0 picks a free port.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stop(mut self) {
        self.shutdown_inner();
    }

    fn shutdown_inner(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_inner();
    }
}

pub fn spawn_server(hub: Arc<LabelHub>, addr: SocketAddr) -> Result<ServerHandle> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(1)
        .enable_all()
        .build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(hub);
    let thread = std::thread::Builder::new()
        .name("label-service".into())
        .spawn(move || {
            rt.block_on(async move {
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })
        .map_err(|e| Error::Worker(format!("cannot start label service: {e}")))?;
    log::info!("label service listening on http://{addr}");
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
