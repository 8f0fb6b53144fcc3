//! HTTP gateway: evaluates decisions against the loaded constraint sets and
//! writes every evaluation to the audit log before answering.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rta_core::audit::{AuditError, AuditLog};
use rta_core::gate::{unknown_class_report, UNKNOWN_CLASS};
use rta_core::{
    evaluate, load_constraint_dir, parse_decision, score, ConstraintSet, DslError, GateReport, OutcomeKind, Schema,
    ScoreReport, ScoringModel, Timestamp,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Environment variable that, when set, replaces the config path.
pub const CONFIG_ENV: &str = "RTA_CONFIG";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownClassPolicy {
    #[default]
    Escalate,
    RejectError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    pub constraint_dir: PathBuf,
    #[serde(default)]
    pub scoring_model_path: Option<PathBuf>,
    pub audit_log_path: PathBuf,
    #[serde(default)]
    pub unknown_class_policy: UnknownClassPolicy,
}

#[derive(Debug, thiserror::Error)]
pub enum BootError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("constraints: {0}")]
    Constraints(#[from] DslError),
    #[error("constraint directory {0} holds no constraint sets")]
    NoConstraintSets(String),
    #[error("scoring model {path}: {message}")]
    Model { path: String, message: String },
    #[error("audit log: {0}")]
    Audit(#[from] AuditError),
    #[error("bind {addr}: {message}")]
    Bind { addr: SocketAddr, message: String },
}

impl GatewayConfig {
    /// Read a TOML or JSON config (chosen by extension). Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, BootError> {
        let err = |message: String| BootError::Config {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut cfg: GatewayConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| err(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| err(e.to_string()))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.constraint_dir);
        resolve(&mut cfg.audit_log_path);
        if let Some(p) = cfg.scoring_model_path.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }
}

/// `RTA_CONFIG` wins over the path given on the command line.
pub fn config_path(given: Option<&Path>) -> Option<PathBuf> {
    match std::env::var_os(CONFIG_ENV) {
        Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
        _ => given.map(Path::to_path_buf),
    }
}

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Timestamp::now)
}

/// Fully loaded gateway state. Construction is the fail-closed boot: any
/// unreadable or invalid input aborts it.
pub struct Gateway {
    sets: BTreeMap<String, ConstraintSet>,
    model: Option<ScoringModel>,
    policy: UnknownClassPolicy,
    log: Arc<Mutex<AuditLog>>,
    log_ok: AtomicBool,
    clock: Clock,
}

impl Gateway {
    pub fn boot(cfg: &GatewayConfig, clock: Clock) -> Result<Self, BootError> {
        let sets = load_constraint_dir(&cfg.constraint_dir, &Schema::default())?;
        if sets.is_empty() {
            return Err(BootError::NoConstraintSets(cfg.constraint_dir.display().to_string()));
        }
        let model = match &cfg.scoring_model_path {
            Some(p) => {
                let model_err = |message: String| BootError::Model {
                    path: p.display().to_string(),
                    message,
                };
                let bytes = std::fs::read(p).map_err(|e| model_err(e.to_string()))?;
                Some(ScoringModel::from_json(&bytes).map_err(|e| model_err(e.to_string()))?)
            }
            None => None,
        };
        let log = AuditLog::open(&cfg.audit_log_path)?;
        Ok(Gateway {
            sets,
            model,
            policy: cfg.unknown_class_policy,
            log: Arc::new(Mutex::new(log)),
            log_ok: AtomicBool::new(true),
            clock,
        })
    }

    pub fn loaded_classes(&self) -> Vec<String> {
        self.sets.keys().cloned().collect()
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/v1/evaluate", post(evaluate_handler))
            .route("/v1/score", post(score_handler))
            .route("/v1/healthz", get(healthz_handler))
            .with_state(Arc::new(self))
    }

    /// True when the log can still take appends.
    fn log_writable(&self) -> bool {
        if !self.log_ok.load(Ordering::SeqCst) {
            return false;
        }
        let path = self.log.lock().map(|l| l.path().to_owned());
        match path {
            Ok(p) => std::fs::OpenOptions::new().append(true).open(p).is_ok(),
            Err(_) => false,
        }
    }
}

/// Serve until `shutdown` resolves. In-flight requests finish first, and
/// every append is already synced when its response is sent.
pub async fn serve(
    gateway: Gateway,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, gateway.router()).with_graceful_shutdown(shutdown).await
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, BootError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|e| BootError::Bind {
        addr,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub audit_seq: u64,
    pub outcome: OutcomeKind,
    pub report: GateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub loaded_classes: Vec<String>,
    pub audit_seq: Option<u64>,
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"code": code, "message": message.into()}}))).into_response()
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.split(';').next())
        .is_some_and(|m| m.trim().eq_ignore_ascii_case("application/json"))
}

fn unsupported_media_type() -> Response {
    error(StatusCode::UNSUPPORTED_MEDIA_TYPE, "UNSUPPORTED_MEDIA_TYPE", "expected application/json")
}

async fn evaluate_handler(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> Response {
    if !is_json(&headers) {
        return unsupported_media_type();
    }
    let d = match parse_decision(&body) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MALFORMED", format!("{}: {e}", e.code())),
    };
    let clock = (gw.clock)();
    let report = match gw.sets.get(&d.decision_class) {
        Some(set) => match evaluate(set, &d, &clock) {
            Ok(r) => r,
            Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "EVALUATION", e.to_string()),
        },
        None => match gw.policy {
            UnknownClassPolicy::Escalate => unknown_class_report(&d, &clock),
            UnknownClassPolicy::RejectError => {
                return error(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    UNKNOWN_CLASS,
                    format!("no constraint set for class {}", d.decision_class),
                )
            }
        },
    };

    let log = gw.log.clone();
    let now = (gw.clock)();
    let class = d.decision_class.clone();
    let to_log = report.clone();
    let appended = tokio::task::spawn_blocking(move || {
        let mut log = log.lock().map_err(|_| "audit log lock poisoned".to_owned())?;
        log.append(&to_log, &class, &now).map_err(|e| e.to_string())
    })
    .await
    .unwrap_or_else(|e| Err(e.to_string()));

    match appended {
        Ok(record) => {
            gw.log_ok.store(true, Ordering::SeqCst);
            Json(EvaluateResponse {
                audit_seq: record.seq,
                outcome: report.outcome.kind,
                report,
            })
            .into_response()
        }
        Err(message) => {
            gw.log_ok.store(false, Ordering::SeqCst);
            error(StatusCode::SERVICE_UNAVAILABLE, "AUDIT_UNAVAILABLE", message)
        }
    }
}

async fn score_handler(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> Response {
    if !is_json(&headers) {
        return unsupported_media_type();
    }
    let Some(model) = &gw.model else {
        return error(StatusCode::NOT_FOUND, "NO_MODEL", "no scoring model configured");
    };
    let d = match parse_decision(&body) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MALFORMED", format!("{}: {e}", e.code())),
    };
    match score(model, &d) {
        Ok(r) => Json::<ScoreReport>(r).into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string()),
    }
}

async fn healthz_handler(State(gw): State<Arc<Gateway>>) -> Response {
    let writable = gw.log_writable();
    let audit_seq = gw.log.lock().ok().and_then(|l| l.last_seq());
    let body = Health {
        status: if writable { "ok" } else { "degraded" }.to_owned(),
        loaded_classes: gw.loaded_classes(),
        audit_seq,
    };
    let status = if writable { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, Json(body)).into_response()
}
