//! The trace server: HTTP+JSON front end over a [`TraceStore`].

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cascade_trace::{Cpid, GraphError, Mergelog, Span, TraceStore, DEFAULT_MAX_ANCESTORS};
use serde::Deserialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::wire::*;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:9411";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    /// Prune target. `None` disables periodic pruning.
    pub max_graph_nodes: Option<u64>,
    pub prune_interval: Duration,
    /// Ancestor bound the cluster runs with; only echoed back.
    pub n_ancestors: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: DEFAULT_LISTEN.parse().expect("valid default address"),
            max_graph_nodes: None,
            prune_interval: Duration::from_secs(10),
            n_ancestors: DEFAULT_MAX_ANCESTORS,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("address {0} is already in use")]
    AddressInUse(SocketAddr),
    #[error("server I/O error: {0}")]
    Io(#[from] io::Error),
}

struct AppState {
    store: Arc<TraceStore>,
    config: ServerConfig,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        let status = match e {
            GraphError::NotFound(_) => StatusCode::NOT_FOUND,
            GraphError::CycleRejected { .. } | GraphError::ConflictingMergelog(_) => {
                StatusCode::CONFLICT
            }
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(e: impl ToString) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, e.to_string())
}

#[derive(Deserialize)]
struct CpidQuery {
    cpid: Option<String>,
}

impl CpidQuery {
    fn parse(&self) -> Result<Option<Cpid>, ApiError> {
        self.cpid
            .as_deref()
            .map(|s| s.parse().map_err(bad_request))
            .transpose()
    }
}

async fn post_mergelog(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    let log: Mergelog = serde_json::from_slice(&body).map_err(bad_request)?;
    state.store.ingest_mergelog(log)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_mergelogs(
    State(state): State<Arc<AppState>>,
    Query(q): Query<CpidQuery>,
) -> Result<Json<Vec<Mergelog>>, ApiError> {
    let filter = q.parse()?;
    Ok(Json(state.store.list_mergelogs(filter.as_ref())?))
}

async fn post_span(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    let span: Span = serde_json::from_slice(&body).map_err(bad_request)?;
    state.store.ingest_span(span);
    Ok(StatusCode::NO_CONTENT)
}

async fn get_spans(
    State(state): State<Arc<AppState>>,
    Query(q): Query<CpidQuery>,
) -> Result<Json<Vec<Span>>, ApiError> {
    let filter = q.parse()?;
    Ok(Json(state.store.list_spans(filter.as_ref())?))
}

async fn get_related(
    State(state): State<Arc<AppState>>,
    Query(q): Query<CpidQuery>,
) -> Result<Json<RelatedBody>, ApiError> {
    let cpid = q
        .parse()?
        .ok_or_else(|| bad_request("missing cpid parameter"))?;
    Ok(Json(RelatedBody {
        cpids: state.store.related(&cpid)?,
    }))
}

async fn post_prune(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<PruneResponse>, ApiError> {
    let req: PruneRequest = serde_json::from_slice(&body).map_err(bad_request)?;
    let max = usize::try_from(req.max_nodes).unwrap_or(usize::MAX);
    Ok(Json(PruneResponse {
        removed: state.store.prune(max),
    }))
}

async fn get_graph(State(state): State<Arc<AppState>>) -> Json<GraphBody> {
    Json(state.store.snapshot().into())
}

async fn get_config(State(state): State<Arc<AppState>>) -> Json<ConfigBody> {
    Json(ConfigBody {
        n_ancestors: state.config.n_ancestors,
        max_graph_nodes: state.config.max_graph_nodes,
    })
}

pub fn router(store: Arc<TraceStore>, config: ServerConfig) -> Router {
    let state = Arc::new(AppState { store, config });
    Router::new()
        .route(MERGELOGS_PATH, post(post_mergelog).get(get_mergelogs))
        .route(SPANS_PATH, post(post_span).get(get_spans))
        .route(RELATED_PATH, get(get_related))
        .route(PRUNE_PATH, post(post_prune))
        .route(GRAPH_PATH, get(get_graph))
        .route(CONFIG_PATH, get(get_config))
        .with_state(state)
}

/// A server whose socket is bound but which is not yet serving.
pub struct BoundServer {
    listener: TcpListener,
    store: Arc<TraceStore>,
    config: ServerConfig,
}

impl BoundServer {
    pub async fn bind(config: ServerConfig) -> Result<Self, ServeError> {
        let listener = TcpListener::bind(config.listen).await.map_err(|e| {
            if e.kind() == io::ErrorKind::AddrInUse {
                ServeError::AddressInUse(config.listen)
            } else {
                ServeError::Io(e)
            }
        })?;
        Ok(BoundServer {
            listener,
            store: Arc::new(TraceStore::new()),
            config,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn store(&self) -> Arc<TraceStore> {
        self.store.clone()
    }

    /// Serves until `shutdown` resolves.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
        let pruner = self.config.max_graph_nodes.map(|max| {
            let store = self.store.clone();
            let every = self.config.prune_interval;
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(every);
                loop {
                    tick.tick().await;
                    store.prune(usize::try_from(max).unwrap_or(usize::MAX));
                }
            })
        });
        let app = router(self.store, self.config);
        let result = axum::serve(self.listener, app)
            .with_graceful_shutdown(shutdown)
            .await;
        if let Some(p) = pruner {
            p.abort();
        }
        result
    }
}

/// A server running on its own thread. Shuts down when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    store: Arc<TraceStore>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn spawn(config: ServerConfig) -> Result<Self, ServeError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let bound = runtime.block_on(BoundServer::bind(config))?;
        let addr = bound.local_addr()?;
        let store = bound.store();
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = thread::Builder::new()
            .name("trace-server".into())
            .spawn(move || {
                runtime.block_on(bound.run(async {
                    let _ = stopped.await;
                }))
            })?;
        Ok(ServerHandle {
            addr,
            store,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn store(&self) -> &Arc<TraceStore> {
        &self.store
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}
