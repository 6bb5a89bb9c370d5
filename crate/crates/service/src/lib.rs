//! HTTP/JSON facade over grammars, design sessions, GAN expansion, Bayesian
//! selection and completion.
//!
//! Routes (bodies and responses are JSON; errors use [`ErrorEnvelope`]):
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/health` | `{status: "ok"}` |
//! | POST | `/grammar/validate` | `{source}` → `{valid, issues}` |
//! | POST | `/grammar/legal-rules` | `{grammarRef?, sequence}` → `{rules}` |
//! | GET | `/tasks` | all tasks |
//! | POST | `/tasks` | publish; 201 + task |
//! | GET | `/tasks/{id}` | task |
//! | POST | `/tasks/{id}/submit` | submission → event, or `grammar_violation` |
//! | POST | `/tasks/{id}/finalize` | `{designerId, branch?}` |
//! | POST | `/tasks/{id}/close` | `{publisher}` |
//! | GET | `/tasks/{id}/progress` | event log and branches |
//! | GET | `/tasks/{id}/solutions` | finalized branches |
//! | GET | `/tasks/{id}/contributions` | shares per finalized branch |
//! | POST | `/expand/train-gan` | train and persist the GAN |
//! | POST | `/expand/sample` | `{label?, n, seed}` → snapped samples |
//! | POST | `/expand/select` | `{solutions, policy}` → score report |
//! | POST | `/complete/train` | train and persist the completer |
//! | POST | `/complete` | `{prefix \| taskId+branch, k, maxLen?}` → completions |
//! | GET | `/assembly/{solutionId}` | geometry JSON, or OBJ with `?format=obj` |

mod error;
mod routes;

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use shapeflow_core::gan::GanModel;
use shapeflow_core::nn::Checkpoint;
use shapeflow_core::session::{SessionError, SessionStore, FIXTURE_GRAMMAR};
use shapeflow_core::transformer::CompleterModel;
use thiserror::Error;

pub use error::{ApiError, ErrorCode, ErrorEnvelope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ApiConfig {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    /// Defaults to `<data_dir>/models/gan.json` when that file exists.
    pub gan_model: Option<PathBuf>,
    /// Defaults to `<data_dir>/models/completer.json` when that file exists.
    pub completer_model: Option<PathBuf>,
    /// Origins allowed by CORS; `*` allows any.
    pub cors_allow: Vec<String>,
    pub max_body_bytes: usize,
}

impl ApiConfig {
    pub fn new(bind: SocketAddr, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind,
            data_dir: data_dir.into(),
            gan_model: None,
            completer_model: None,
            cors_allow: Vec::new(),
            max_body_bytes: 8 << 20,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("data directory {0} is not writable: {1}")]
    DataDir(PathBuf, std::io::Error),
    #[error("cannot bind {0}: {1}")]
    Bind(SocketAddr, std::io::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A model with the grammar it was trained against.
#[derive(Debug)]
pub(crate) struct Loaded<M> {
    pub model: Arc<M>,
    pub grammar_ref: String,
}

impl<M> Clone for Loaded<M> {
    fn clone(&self) -> Self {
        Self {
            model: self.model.clone(),
            grammar_ref: self.grammar_ref.clone(),
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct Models {
    pub gan: Option<Loaded<GanModel>>,
    pub completer: Option<Loaded<CompleterModel>>,
}

#[derive(Debug)]
pub(crate) struct AppState {
    pub store: SessionStore,
    pub models: RwLock<Models>,
    pub models_dir: PathBuf,
    /// Training is single-writer.
    pub training: tokio::sync::Mutex<()>,
    pub cors_allow: Vec<String>,
}

fn grammar_ref_file(model: &Path) -> PathBuf {
    model.with_extension("grammar")
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, String), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let c = Checkpoint::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let grammar_ref = std::fs::read_to_string(grammar_ref_file(path))
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| FIXTURE_GRAMMAR.to_string());
    Ok((c, grammar_ref))
}

/// Writes a checkpoint and the grammar it belongs to.
pub(crate) fn save_model(path: &Path, c: &Checkpoint, grammar_ref: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, c.to_json())?;
    std::fs::rename(&tmp, path)?;
    std::fs::write(grammar_ref_file(path), grammar_ref)
}

fn check_writable(dir: &Path) -> Result<(), ServiceError> {
    let probe = dir.join(".write-probe");
    std::fs::create_dir_all(dir)
        .and_then(|_| std::fs::write(&probe, b"ok"))
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| ServiceError::DataDir(dir.to_path_buf(), e))
}

fn load_models(cfg: &ApiConfig, models_dir: &Path) -> Models {
    let pick = |explicit: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
        match explicit {
            Some(p) => Some(p.clone()),
            None => Some(models_dir.join(name)).filter(|p| p.exists()),
        }
    };
    let mut models = Models::default();
    if let Some(path) = pick(&cfg.gan_model, "gan.json") {
        match load_checkpoint(&path).and_then(|(c, r)| {
            GanModel::from_checkpoint(&c)
                .map(|m| (m, r))
                .map_err(|e| e.to_string())
        }) {
            Ok((m, grammar_ref)) => {
                models.gan = Some(Loaded {
                    model: Arc::new(m),
                    grammar_ref,
                })
            }
            Err(e) => eprintln!("shapeflow: GAN model not loaded: {e}"),
        }
    }
    if let Some(path) = pick(&cfg.completer_model, "completer.json") {
        match load_checkpoint(&path).and_then(|(c, r)| {
            CompleterModel::from_checkpoint(&c)
                .map(|m| (m, r))
                .map_err(|e| e.to_string())
        }) {
            Ok((m, grammar_ref)) => {
                models.completer = Some(Loaded {
                    model: Arc::new(m),
                    grammar_ref,
                })
            }
            Err(e) => eprintln!("shapeflow: completer model not loaded: {e}"),
        }
    }
    models
}

/// Opens the data directory (replaying every task log) and builds the router.
pub fn app(cfg: &ApiConfig) -> Result<Router, ServiceError> {
    check_writable(&cfg.data_dir)?;
    let store = SessionStore::open(cfg.data_dir.join("sessions"))?;
    let models_dir = cfg.data_dir.join("models");
    let state = Arc::new(AppState {
        store,
        models: RwLock::new(load_models(cfg, &models_dir)),
        models_dir,
        training: tokio::sync::Mutex::new(()),
        cors_allow: cfg.cors_allow.clone(),
    });
    Ok(router(state, cfg.max_body_bytes))
}

fn router(state: Arc<AppState>, max_body: usize) -> Router {
    Router::new()
        .route("/health", get(routes::health))
        .route("/grammar/validate", post(routes::validate))
        .route("/grammar/legal-rules", post(routes::legal))
        .route("/tasks", get(routes::list_tasks).post(routes::publish))
        .route("/tasks/{id}", get(routes::get_task))
        .route("/tasks/{id}/submit", post(routes::submit))
        .route("/tasks/{id}/finalize", post(routes::finalize))
        .route("/tasks/{id}/close", post(routes::close))
        .route("/tasks/{id}/progress", get(routes::progress))
        .route("/tasks/{id}/solutions", get(routes::solutions))
        .route("/tasks/{id}/contributions", get(routes::contributions))
        .route("/expand/train-gan", post(routes::train_gan))
        .route("/expand/sample", post(routes::sample))
        .route("/expand/select", post(routes::select))
        .route("/complete/train", post(routes::train_completer))
        .route("/complete", post(routes::complete))
        .route("/assembly/{solution_id}", get(routes::assembly))
        .fallback(routes::not_found)
        .layer(middleware::from_fn_with_state(state.clone(), cors))
        .layer(DefaultBodyLimit::max(max_body))
        .with_state(state)
}

async fn cors(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let origin = req
        .headers()
        .get(header::ORIGIN)
        .and_then(|o| o.to_str().ok())
        .filter(|o| state.cors_allow.iter().any(|a| a == "*" || a == o))
        .map(str::to_string);
    let preflight = req.method() == Method::OPTIONS;
    let mut res = if preflight && origin.is_some() {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    if let Some(o) = origin.and_then(|o| HeaderValue::from_str(&o).ok()) {
        let h = res.headers_mut();
        h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, o);
        h.insert(header::VARY, HeaderValue::from_static("origin"));
        if preflight {
            h.insert(
                header::ACCESS_CONTROL_ALLOW_METHODS,
                HeaderValue::from_static("GET, POST, OPTIONS"),
            );
            h.insert(
                header::ACCESS_CONTROL_ALLOW_HEADERS,
                HeaderValue::from_static("content-type"),
            );
        }
    }
    res
}

/// Serves until `shutdown` resolves. Every acknowledged write is already on
/// disk, so stopping needs no extra flush.
pub async fn serve(cfg: ApiConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServiceError> {
    let app = app(&cfg)?;
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|e| ServiceError::Bind(cfg.bind, e))?;
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// A service running on its own thread, for tests and embedding.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ServiceError>>>,
}

impl ServiceHandle {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    /// Stops accepting requests and waits for in-flight ones.
    pub fn shutdown(mut self) -> Result<(), ServiceError> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(ServiceError::Io(std::io::Error::other("service thread panicked")))),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

/// Binds (port 0 picks a free one) and serves on a background thread.
pub fn start(cfg: ApiConfig) -> Result<ServiceHandle, ServiceError> {
    let app = app(&cfg)?;
    let listener = std::net::TcpListener::bind(cfg.bind).map_err(|e| ServiceError::Bind(cfg.bind, e))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await?;
            Ok(())
        })
    });
    Ok(ServiceHandle {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}
