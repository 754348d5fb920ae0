//! HTTP verifier service.
//!
//! ```text
//! GET  /policy/{resource_id}  -> {"policy": {...}, "nonce": hex, "verifier": hex}
//! POST /authorize             <- {"resource_id": ..., "response": AuthorizationResponse}
//!                             -> {"decision": "grant"|"deny"|"error", "reasons": [...], "chain_summaries": [...]}
//! ```
//!
//! Discovery failures answer 503 with decision `error`.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use super::{chain_summary, AuthorizationResponse, AuthzError, Decision, Verifier};
use crate::netsim::NameSystemBackend;
use crate::time::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionKind {
    Grant,
    Deny,
    Error,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorizeRequest {
    pub resource_id: String,
    pub response: AuthorizationResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizeReply {
    pub decision: DecisionKind,
    pub reasons: Vec<String>,
    pub chain_summaries: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}

pub struct VerifierService {
    pub verifier: Verifier,
    pub backend: Mutex<Box<dyn NameSystemBackend + Send>>,
    pub clock: Arc<dyn Clock>,
}

impl VerifierService {
    pub fn new(
        verifier: Verifier,
        backend: Box<dyn NameSystemBackend + Send>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        VerifierService {
            verifier,
            backend: Mutex::new(backend),
            clock,
        }
    }

    /// The `/authorize` logic without HTTP.
    pub fn handle_authorize(&self, req: &AuthorizeRequest) -> (StatusCode, AuthorizeReply) {
        let clock = self.clock.now();
        let outcome = {
            let mut backend = self.backend.lock().expect("backend lock poisoned");
            self.verifier
                .authorize(&req.resource_id, &req.response, backend.as_mut(), clock)
        };
        match outcome {
            Ok(Decision::Grant { chains }) => (
                StatusCode::OK,
                AuthorizeReply {
                    decision: DecisionKind::Grant,
                    reasons: Vec::new(),
                    chain_summaries: chains
                        .iter()
                        .map(|c| chain_summary(c, &self.verifier.names))
                        .collect(),
                },
            ),
            Ok(Decision::Deny { reasons }) => (
                StatusCode::OK,
                AuthorizeReply {
                    decision: DecisionKind::Deny,
                    reasons,
                    chain_summaries: Vec::new(),
                },
            ),
            Err(AuthzError::UnknownResource(id)) => (
                StatusCode::NOT_FOUND,
                AuthorizeReply {
                    decision: DecisionKind::Error,
                    reasons: vec![format!("unknown resource {id:?}")],
                    chain_summaries: Vec::new(),
                },
            ),
            Err(e) => (
                StatusCode::SERVICE_UNAVAILABLE,
                AuthorizeReply {
                    decision: DecisionKind::Error,
                    reasons: vec![e.to_string()],
                    chain_summaries: Vec::new(),
                },
            ),
        }
    }
}

type Shared = Arc<VerifierService>;

async fn policy(
    State(svc): State<Shared>,
    Path(resource_id): Path<String>,
) -> axum::response::Response {
    use axum::response::IntoResponse;
    match svc.verifier.challenge(&resource_id, svc.clock.now()) {
        Ok(ch) => Json(ch).into_response(),
        Err(e) => (
            StatusCode::NOT_FOUND,
            Json(ErrorReply {
                error: e.to_string(),
            }),
        )
            .into_response(),
    }
}

async fn authorize(
    State(svc): State<Shared>,
    Json(req): Json<AuthorizeRequest>,
) -> (StatusCode, Json<AuthorizeReply>) {
    let result = tokio::task::spawn_blocking(move || svc.handle_authorize(&req)).await;
    match result {
        Ok((status, reply)) => (status, Json(reply)),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(AuthorizeReply {
                decision: DecisionKind::Error,
                reasons: vec![format!("verifier task failed: {e}")],
                chain_summaries: Vec::new(),
            }),
        ),
    }
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/policy/{resource_id}", get(policy))
        .route("/authorize", post(authorize))
        .with_state(service)
}

/// Serves until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, service: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

/// A server running on its own thread; stops when dropped.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server thread ends.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background thread.
pub fn spawn(service: Shared, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let bound = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(std_listener) {
                Ok(l) => l,
                Err(_) => return,
            };
            let _ = axum::serve(listener, router(service))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(ServerHandle {
        addr: bound,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
