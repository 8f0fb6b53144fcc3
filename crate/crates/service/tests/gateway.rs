use std::path::{Path, PathBuf};
use std::sync::Arc;

use rta_core::audit::{read_verified, verify, Verification};
use rta_core::gate::UNKNOWN_CLASS;
use rta_core::{decision_hash, parse_decision, score, OutcomeKind, ScoringModel, Timestamp};
use rta_service::{serve, EvaluateResponse, Gateway, GatewayConfig, Health, UnknownClassPolicy};
use serde_json::Value;
use tokio::sync::oneshot;

const CLOCK: &str = "2026-04-01T12:05:00Z";

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn case_decision(file: &str) -> Value {
    let v: Value = serde_json::from_slice(&std::fs::read(corpus().join("cases").join(file)).unwrap()).unwrap();
    v["decision"].clone()
}

fn config(dir: &Path, policy: UnknownClassPolicy, model: bool) -> GatewayConfig {
    GatewayConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        constraint_dir: corpus().join("constraints"),
        scoring_model_path: model.then(|| corpus().join("model.json")),
        audit_log_path: dir.join("audit.jsonl"),
        unknown_class_policy: policy,
    }
}

struct Running {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
    client: reqwest::Client,
}

impl Running {
    async fn start(cfg: &GatewayConfig) -> Running {
        let gw = Gateway::boot(cfg, Arc::new(|| Timestamp::parse(CLOCK).unwrap())).unwrap();
        let listener = tokio::net::TcpListener::bind(cfg.listen).await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve(gw, listener, async {
            let _ = rx.await;
        }));
        Running {
            base,
            stop: Some(tx),
            task,
            client: reqwest::Client::new(),
        }
    }

    async fn post(&self, route: &str, body: &Value) -> reqwest::Response {
        self.client
            .post(format!("{}{route}", self.base))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .await
            .unwrap()
    }

    async fn health(&self) -> (u16, Health) {
        let r = self.client.get(format!("{}/v1/healthz", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    async fn stop(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.task.await.unwrap().unwrap();
    }
}

#[tokio::test]
async fn suspension_fixture_escalates_and_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), UnknownClassPolicy::Escalate, true);
    let srv = Running::start(&cfg).await;
    let (status, h) = srv.health().await;
    assert_eq!((status, h.audit_seq, h.loaded_classes), (200, None, vec!["account_suspension".to_owned()]));

    let body = case_decision("01_suspension_unverified.json");
    for expected_seq in 0..3 {
        let r = srv.post("/v1/evaluate", &body).await;
        assert_eq!(r.status(), 200);
        let r: EvaluateResponse = r.json().await.unwrap();
        assert_eq!(r.audit_seq, expected_seq);
        assert_eq!(r.outcome, OutcomeKind::Escalate);
        assert_eq!(r.report.outcome.failed_constraints, ["context_verified"]);
        assert_eq!(r.report.evaluation_clock.as_str(), CLOCK);
    }
    assert_eq!(srv.health().await.1.audit_seq, Some(2));
    srv.stop().await;
    assert_eq!(verify(&cfg.audit_log_path).unwrap(), Verification::Ok { records: 3 });
}

#[tokio::test]
async fn allow_is_never_unlogged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), UnknownClassPolicy::Escalate, false);
    let srv = Running::start(&cfg).await;
    let body = case_decision("02_suspension_verified.json");
    let r: EvaluateResponse = srv.post("/v1/evaluate", &body).await.json().await.unwrap();
    assert_eq!(r.outcome, OutcomeKind::Allow);
    // The record is on disk before the response arrives.
    let records = read_verified(&cfg.audit_log_path).unwrap();
    assert_eq!(records[r.audit_seq as usize].decision_hash, r.report.decision_hash);
    assert_eq!(records[r.audit_seq as usize].outcome_kind, OutcomeKind::Allow);
    srv.stop().await;
}

#[tokio::test]
async fn unknown_class_follows_policy() {
    let dir = tempfile::tempdir().unwrap();
    let body = case_decision("06_unknown_class.json");

    let srv = Running::start(&config(dir.path(), UnknownClassPolicy::Escalate, false)).await;
    let r: EvaluateResponse = srv.post("/v1/evaluate", &body).await.json().await.unwrap();
    assert_eq!(r.outcome, OutcomeKind::Escalate);
    assert_eq!(r.report.outcome.failed_constraints, [UNKNOWN_CLASS]);
    srv.stop().await;

    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&config(dir.path(), UnknownClassPolicy::RejectError, false)).await;
    let r = srv.post("/v1/evaluate", &body).await;
    assert_eq!(r.status(), 422);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["error"]["code"], UNKNOWN_CLASS);
    assert_eq!(srv.health().await.1.audit_seq, None);
    srv.stop().await;
}

#[tokio::test]
async fn malformed_and_wrong_media_type() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&config(dir.path(), UnknownClassPolicy::Escalate, true)).await;
    let r = srv
        .client
        .post(format!("{}/v1/evaluate", srv.base))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["error"]["code"], "MALFORMED");

    let r = srv.client.post(format!("{}/v1/evaluate", srv.base)).header("content-type", "text/plain").body("{}").send().await.unwrap();
    assert_eq!(r.status(), 415);
    let r = srv.client.post(format!("{}/v1/score", srv.base)).body("{}").send().await.unwrap();
    assert_eq!(r.status(), 415);
    assert_eq!(srv.health().await.1.audit_seq, None);
    srv.stop().await;
}

#[tokio::test]
async fn score_endpoint_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&config(dir.path(), UnknownClassPolicy::Escalate, true)).await;
    let body = case_decision("01_suspension_unverified.json");
    let r = srv.post("/v1/score", &body).await;
    assert_eq!(r.status(), 200);
    let wire: Value = r.json().await.unwrap();
    assert_eq!(wire["allowed"], true);
    assert_eq!(wire["score"], 1.0);
    let model = ScoringModel::from_json(&std::fs::read(corpus().join("model.json")).unwrap()).unwrap();
    let local = score(&model, &parse_decision(body.to_string().as_bytes()).unwrap()).unwrap();
    assert_eq!(rta_core::to_canonical_string(&wire), rta_core::to_canonical_string(&serde_json::to_value(&local).unwrap()));

    let mut missing = body.clone();
    missing["features"].as_object_mut().unwrap().remove("confidence");
    let r = srv.post("/v1/score", &missing).await;
    assert_eq!(r.status(), 422);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["error"]["code"], "MISSING_FEATURE");
    // Scoring is advisory and never logged.
    assert_eq!(srv.health().await.1.audit_seq, None);
    srv.stop().await;

    let dir = tempfile::tempdir().unwrap();
    let srv = Running::start(&config(dir.path(), UnknownClassPolicy::Escalate, false)).await;
    assert_eq!(srv.post("/v1/score", &body).await.status(), 404);
    srv.stop().await;
}

#[tokio::test]
async fn unwritable_log_fails_boot_or_health() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), UnknownClassPolicy::Escalate, false);
    cfg.audit_log_path = dir.path().join("missing_dir").join("audit.jsonl");
    assert!(Gateway::boot(&cfg, rta_service::system_clock()).is_err());

    let cfg = config(dir.path(), UnknownClassPolicy::Escalate, false);
    let srv = Running::start(&cfg).await;
    assert_eq!(srv.health().await.0, 200);
    std::fs::remove_file(&cfg.audit_log_path).unwrap();
    std::fs::create_dir(&cfg.audit_log_path).unwrap();
    let (status, h) = srv.health().await;
    assert_eq!((status, h.status.as_str()), (503, "degraded"));
    srv.stop().await;
}

#[test]
fn boot_refuses_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let clock = rta_service::system_clock;
    let mut cfg = config(dir.path(), UnknownClassPolicy::Escalate, false);
    cfg.constraint_dir = dir.path().join("nope");
    assert!(Gateway::boot(&cfg, clock()).is_err());
    cfg.constraint_dir = dir.path().to_owned();
    assert!(matches!(Gateway::boot(&cfg, clock()), Err(rta_service::BootError::NoConstraintSets(_))));
    let mut cfg = config(dir.path(), UnknownClassPolicy::Escalate, false);
    cfg.scoring_model_path = Some(dir.path().join("model.json"));
    assert!(Gateway::boot(&cfg, clock()).is_err());
}

#[test]
fn config_files_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("gw.toml");
    std::fs::write(&toml_path, "listen = \"127.0.0.1:8080\"\nconstraint_dir = \"c\"\naudit_log_path = \"a.jsonl\"\nunknown_class_policy = \"reject_error\"\n").unwrap();
    let cfg = GatewayConfig::load(&toml_path).unwrap();
    assert_eq!(cfg.constraint_dir, dir.path().join("c"));
    assert_eq!(cfg.unknown_class_policy, UnknownClassPolicy::RejectError);
    assert_eq!(cfg.scoring_model_path, None);

    let json_path = dir.path().join("gw.json");
    std::fs::write(&json_path, r#"{"listen":"127.0.0.1:8080","constraint_dir":"/abs","audit_log_path":"a.jsonl","scoring_model_path":"m.json"}"#).unwrap();
    let cfg = GatewayConfig::load(&json_path).unwrap();
    assert_eq!(cfg.constraint_dir, PathBuf::from("/abs"));
    assert_eq!(cfg.scoring_model_path, Some(dir.path().join("m.json")));
    assert_eq!(cfg.unknown_class_policy, UnknownClassPolicy::Escalate);

    std::fs::write(&json_path, r#"{"listen":"127.0.0.1:8080","constraint_dir":"c","audit_log_path":"a","extra":1}"#).unwrap();
    assert!(GatewayConfig::load(&json_path).is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_match_library_and_chain_is_gapless() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), UnknownClassPolicy::Escalate, false);
    let srv = Arc::new(Running::start(&cfg).await);
    let files = [
        "01_suspension_unverified.json",
        "02_suspension_verified.json",
        "03_suspension_no_authority.json",
        "04_suspension_global_scope.json",
        "05_suspension_identity_refuted.json",
        "06_unknown_class.json",
    ];
    let bodies: Vec<Value> = files.iter().map(|f| case_decision(f)).collect();
    let sets = rta_core::load_constraint_dir(&cfg.constraint_dir, &Default::default()).unwrap();
    let clock = Timestamp::parse(CLOCK).unwrap();

    let mut tasks = tokio::task::JoinSet::new();
    for i in 0..1000 {
        let srv = srv.clone();
        let body = bodies[i % bodies.len()].clone();
        tasks.spawn(async move { (i, srv.post("/v1/evaluate", &body).await.json::<EvaluateResponse>().await.unwrap()) });
    }
    let mut seqs = Vec::new();
    while let Some(r) = tasks.join_next().await {
        let (i, resp) = r.unwrap();
        let d = parse_decision(bodies[i % bodies.len()].to_string().as_bytes()).unwrap();
        let local = rta_core::corpus::gate_for(&sets, &d, &clock).unwrap();
        assert_eq!(resp.report.to_canonical_string(), local.to_canonical_string());
        assert_eq!(resp.report.decision_hash, decision_hash(&d));
        seqs.push(resp.audit_seq);
    }
    seqs.sort_unstable();
    assert_eq!(seqs, (0..1000).collect::<Vec<u64>>());
    Arc::into_inner(srv).unwrap().stop().await;

    let records = read_verified(&cfg.audit_log_path).unwrap();
    assert_eq!(records.len(), 1000);
    for r in &records {
        let d = bodies.iter().map(|b| parse_decision(b.to_string().as_bytes()).unwrap()).find(|d| decision_hash(d) == r.decision_hash).unwrap();
        let local = rta_core::corpus::gate_for(&sets, &d, &clock).unwrap();
        assert_eq!(r.outcome_kind, local.outcome.kind);
        assert_eq!(r.verdicts, local.verdicts);
    }
}
