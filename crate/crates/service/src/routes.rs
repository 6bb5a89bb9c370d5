use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use shapeflow_core::bayes::{causal_map_to_bayesnet, select as bayes_select, CausalMap, EvidenceConfig, ScoreReport, SelectPolicy};
use shapeflow_core::fixtures::drone_causal_map;
use shapeflow_core::gan::{train_gan as fit_gan, GanConfig, LossRecord};
use shapeflow_core::grammar::walk::walk_corpus;
use shapeflow_core::grammar::{
    check_constraints, legal_rules, parse_unchecked, realize, validate_grammar, DesignSequence,
    Grammar, LegalRule, ValidationIssue,
};
use shapeflow_core::pipeline::{sample_labels, snap_samples, walk_config_for};
use shapeflow_core::session::{
    Outcome, Submission, SubmissionEvent, SubmissionKind, Task, DEFAULT_BRANCH, FIXTURE_GRAMMAR,
};
use shapeflow_core::transformer::{train_completer as fit_completer, CompleterConfig, Completion};
use shapeflow_core::vecspace::{embed_sequence, EmbeddedSequence, SpaceConfig};

use crate::{save_model, ApiError, AppState, Loaded};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

/// `Json` whose rejections use the error envelope.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => {
                Err(ApiError::bad_request("request body too large"))
            }
            Err(e) => Err(ApiError::bad_request(e.body_text())),
        }
    }
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn default_ref() -> String {
    FIXTURE_GRAMMAR.to_string()
}

fn default_branch() -> String {
    DEFAULT_BRANCH.to_string()
}

pub async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

pub async fn not_found() -> ApiError {
    ApiError::not_found("no such route")
}

#[derive(Debug, Deserialize)]
pub struct ValidateRequest {
    source: String,
}

#[derive(Debug, Serialize)]
pub struct ValidateResponse {
    valid: bool,
    issues: Vec<ValidationIssue>,
}

pub async fn validate(ApiJson(req): ApiJson<ValidateRequest>) -> ApiResult<Json<ValidateResponse>> {
    let g = parse_unchecked(&req.source)?;
    let issues = validate_grammar(&g);
    Ok(Json(ValidateResponse {
        valid: issues.is_empty(),
        issues,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LegalRequest {
    #[serde(default = "default_ref")]
    grammar_ref: String,
    sequence: DesignSequence,
}

#[derive(Debug, Serialize)]
pub struct LegalResponse {
    rules: Vec<LegalRule>,
}

pub async fn legal(State(s): Shared, ApiJson(req): ApiJson<LegalRequest>) -> ApiResult<Json<LegalResponse>> {
    let g = s.store.grammar(&req.grammar_ref)?;
    let rules = legal_rules(&g, &req.sequence).map_err(ApiError::violation)?;
    Ok(Json(LegalResponse { rules }))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PublishRequest {
    publisher: String,
    #[serde(default)]
    grammar_ref: Option<String>,
    /// Grammar source to register under `grammarRef` first.
    #[serde(default)]
    grammar: Option<String>,
    shape_type: String,
    #[serde(default)]
    description: String,
}

pub async fn publish(State(s): Shared, ApiJson(req): ApiJson<PublishRequest>) -> ApiResult<(StatusCode, Json<Task>)> {
    let grammar_ref = match (&req.grammar, req.grammar_ref) {
        (Some(_), None) => return Err(ApiError::bad_request("grammarRef is required with grammar")),
        (_, r) => r.unwrap_or_else(default_ref),
    };
    if let Some(src) = &req.grammar {
        s.store.register_grammar(&grammar_ref, src)?;
    }
    let task = s
        .store
        .publish_task(&req.publisher, &grammar_ref, &req.shape_type, &req.description)?;
    Ok((StatusCode::CREATED, Json(task)))
}

pub async fn list_tasks(State(s): Shared) -> Json<Vec<Task>> {
    Json(s.store.tasks())
}

pub async fn get_task(State(s): Shared, Path(id): Path<String>) -> ApiResult<Json<Task>> {
    Ok(Json(s.store.task(&id)?))
}

fn settle(ev: SubmissionEvent) -> ApiResult<Json<SubmissionEvent>> {
    match ev.outcome {
        Outcome::Accepted => Ok(Json(ev)),
        Outcome::Rejected { violation } => Err(ApiError::violation(violation)),
    }
}

pub async fn submit(State(s): Shared, Path(id): Path<String>, ApiJson(sub): ApiJson<Submission>) -> ApiResult<Json<SubmissionEvent>> {
    if matches!(sub.kind, SubmissionKind::Close) {
        return Err(ApiError::bad_request("use /tasks/{id}/close to close a task"));
    }
    let ev = blocking(move || Ok(s.store.submit(&id, sub)?)).await?;
    settle(ev)
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FinalizeRequest {
    designer_id: String,
    #[serde(default = "default_branch")]
    branch: String,
}

pub async fn finalize(State(s): Shared, Path(id): Path<String>, ApiJson(req): ApiJson<FinalizeRequest>) -> ApiResult<Json<SubmissionEvent>> {
    let sub = Submission::finalize(&req.designer_id, &req.branch);
    let ev = blocking(move || Ok(s.store.submit(&id, sub)?)).await?;
    settle(ev)
}

#[derive(Debug, Deserialize)]
pub struct CloseRequest {
    publisher: String,
}

pub async fn close(State(s): Shared, Path(id): Path<String>, ApiJson(req): ApiJson<CloseRequest>) -> ApiResult<Json<SubmissionEvent>> {
    let ev = blocking(move || Ok(s.store.close_task(&id, &req.publisher)?)).await?;
    settle(ev)
}

pub async fn progress(State(s): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.store.progress(&id)?).into_response())
}

pub async fn solutions(State(s): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.store.collect_solutions(&id)?).into_response())
}

pub async fn contributions(State(s): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.store.contributions(&id)?).into_response())
}

/// Where training designs come from: seeded walks plus finalized task solutions.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorpusSpec {
    #[serde(default = "default_ref")]
    grammar_ref: String,
    #[serde(default = "default_walks")]
    seed_walks: usize,
    #[serde(default = "default_seed")]
    walk_seed: u64,
    #[serde(default)]
    task_ids: Vec<String>,
}

fn default_walks() -> usize {
    500
}

fn default_seed() -> u64 {
    7
}

fn corpus(s: &AppState, spec: &CorpusSpec) -> ApiResult<(Arc<Grammar>, Vec<DesignSequence>)> {
    let g = s.store.grammar(&spec.grammar_ref)?;
    let mut designs = walk_corpus(&g, spec.seed_walks, spec.walk_seed, &walk_config_for(&g));
    for id in &spec.task_ids {
        let task = s.store.task(id)?;
        if task.grammar_ref != spec.grammar_ref {
            return Err(ApiError::bad_request(format!(
                "task {id} uses grammar {:?}, not {:?}",
                task.grammar_ref, spec.grammar_ref
            )));
        }
        designs.extend(s.store.collect_solutions(id)?.into_iter().map(|sol| DesignSequence {
            author_tags: Vec::new(),
            ..sol.sequence
        }));
    }
    if designs.is_empty() {
        return Err(ApiError::bad_request("training corpus is empty"));
    }
    Ok((g, designs))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainGanRequest {
    #[serde(flatten)]
    corpus: CorpusSpec,
    #[serde(default)]
    config: Option<GanConfig>,
    #[serde(default)]
    epochs: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainGanResponse {
    training_designs: usize,
    epochs: usize,
    final_loss: Option<LossRecord>,
}

pub async fn train_gan(State(s): Shared, ApiJson(req): ApiJson<TrainGanRequest>) -> ApiResult<Json<TrainGanResponse>> {
    let _guard = s.training.lock().await;
    let st = s.clone();
    let res = blocking(move || {
        let (g, designs) = corpus(&st, &req.corpus)?;
        let space = SpaceConfig::for_grammar(&g);
        let embedded = designs
            .iter()
            .map(|d| embed_sequence(&g, &space, d))
            .collect::<Result<Vec<EmbeddedSequence>, _>>()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut cfg = req.config.unwrap_or_default();
        cfg.epochs = req.epochs.unwrap_or(cfg.epochs);
        cfg.seed = req.seed.unwrap_or(cfg.seed);
        let m = fit_gan(&embedded, space, g.shape_types.clone(), cfg)?;
        save_model(&st.models_dir.join("gan.json"), &m.to_checkpoint(), &req.corpus.grammar_ref)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let out = TrainGanResponse {
            training_designs: designs.len(),
            epochs: m.loss_history.len(),
            final_loss: m.loss_history.last().copied(),
        };
        st.models.write().unwrap_or_else(|e| e.into_inner()).gan = Some(Loaded {
            model: Arc::new(m),
            grammar_ref: req.corpus.grammar_ref,
        });
        Ok(out)
    })
    .await?;
    Ok(Json(res))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleRequest {
    #[serde(default)]
    label: Option<String>,
    n: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    include_embeddings: bool,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleItem {
    sequence: Option<DesignSequence>,
    valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding: Option<EmbeddedSequence>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleResponse {
    samples: Vec<SampleItem>,
    valid_count: usize,
}

const MAX_SAMPLES: usize = 10_000;

pub async fn sample(State(s): Shared, ApiJson(req): ApiJson<SampleRequest>) -> ApiResult<Json<SampleResponse>> {
    if req.n > MAX_SAMPLES {
        return Err(ApiError::bad_request(format!("n must be at most {MAX_SAMPLES}")));
    }
    let loaded = s
        .models
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .gan
        .clone()
        .ok_or_else(|| ApiError::model_missing("GAN"))?;
    let g = s.store.grammar(&loaded.grammar_ref)?;
    let res = blocking(move || {
        let raw = sample_labels(&loaded.model, req.label.as_deref(), req.n, req.seed)?;
        let snapped = snap_samples(&g, raw);
        let valid_count = snapped.iter().filter(|x| x.valid).count();
        let samples = snapped
            .into_iter()
            .map(|x| SampleItem {
                sequence: x.sequence,
                valid: x.valid,
                embedding: req.include_embeddings.then_some(x.embedding),
            })
            .collect();
        Ok(SampleResponse { samples, valid_count })
    })
    .await?;
    Ok(Json(res))
}

#[derive(Debug, Deserialize)]
pub struct NamedSolution {
    id: String,
    sequence: DesignSequence,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectRequest {
    #[serde(default = "default_ref")]
    grammar_ref: String,
    solutions: Vec<NamedSolution>,
    policy: SelectPolicy,
    #[serde(default)]
    causal_map: Option<CausalMap>,
    #[serde(default)]
    evidence: Option<EvidenceConfig>,
}

pub async fn select(State(s): Shared, ApiJson(req): ApiJson<SelectRequest>) -> ApiResult<Json<ScoreReport>> {
    let g = s.store.grammar(&req.grammar_ref)?;
    let net = causal_map_to_bayesnet(&req.causal_map.unwrap_or_else(drone_causal_map))
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let report = blocking(move || {
        let (ids, seqs): (Vec<String>, Vec<DesignSequence>) =
            req.solutions.into_iter().map(|n| (n.id, n.sequence)).unzip();
        let evidence = req.evidence.unwrap_or_default();
        let sel = bayes_select(&seqs, &net, &g, &evidence, req.policy)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(ScoreReport::new(&ids, &sel, req.policy))
    })
    .await?;
    Ok(Json(report))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainCompleterRequest {
    #[serde(flatten)]
    corpus: CorpusSpec,
    #[serde(default)]
    config: Option<CompleterConfig>,
    #[serde(default)]
    epochs: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainCompleterResponse {
    training_designs: usize,
    epochs: usize,
    final_loss: Option<f64>,
}

pub async fn train_completer(
    State(s): Shared,
    ApiJson(req): ApiJson<TrainCompleterRequest>,
) -> ApiResult<Json<TrainCompleterResponse>> {
    let _guard = s.training.lock().await;
    let st = s.clone();
    let res = blocking(move || {
        let (g, designs) = corpus(&st, &req.corpus)?;
        let mut cfg = req.config.unwrap_or_default();
        cfg.epochs = req.epochs.unwrap_or(cfg.epochs);
        cfg.seed = req.seed.unwrap_or(cfg.seed);
        let m = fit_completer(&g, &designs, cfg)?;
        save_model(&st.models_dir.join("completer.json"), &m.to_checkpoint(), &req.corpus.grammar_ref)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let out = TrainCompleterResponse {
            training_designs: designs.len(),
            epochs: m.loss_history.len(),
            final_loss: m.loss_history.last().copied(),
        };
        st.models.write().unwrap_or_else(|e| e.into_inner()).completer = Some(Loaded {
            model: Arc::new(m),
            grammar_ref: req.corpus.grammar_ref,
        });
        Ok(out)
    })
    .await?;
    Ok(Json(res))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompleteRequest {
    #[serde(default)]
    prefix: Option<DesignSequence>,
    #[serde(default)]
    task_id: Option<String>,
    #[serde(default = "default_branch")]
    branch: String,
    k: usize,
    /// Most rules to add.
    #[serde(default)]
    max_len: Option<usize>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CompleteResponse {
    prefix: DesignSequence,
    completions: Vec<Completion>,
    /// Completions dropped by the server-side constraint check.
    rejected: usize,
}

const MAX_K: usize = 32;

pub async fn complete(State(s): Shared, ApiJson(req): ApiJson<CompleteRequest>) -> ApiResult<Json<CompleteResponse>> {
    if req.k == 0 || req.k > MAX_K {
        return Err(ApiError::bad_request(format!("k must be between 1 and {MAX_K}")));
    }
    let loaded = s
        .models
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .completer
        .clone()
        .ok_or_else(|| ApiError::model_missing("completer"))?;
    let prefix = match (req.prefix, &req.task_id) {
        (Some(p), None) => p,
        (None, Some(id)) => {
            let task = s.store.task(id)?;
            if task.grammar_ref != loaded.grammar_ref {
                return Err(ApiError::bad_request(format!(
                    "task {id} uses grammar {:?} but the completer was trained on {:?}",
                    task.grammar_ref, loaded.grammar_ref
                )));
            }
            let seq = s.store.branch(id, &req.branch)?.sequence;
            DesignSequence {
                author_tags: Vec::new(),
                ..seq
            }
        }
        _ => return Err(ApiError::bad_request("give exactly one of prefix or taskId")),
    };
    let g = s.store.grammar(&loaded.grammar_ref)?;
    let res = blocking(move || {
        let max_len = req.max_len.unwrap_or(SpaceConfig::for_grammar(&g).max_rules);
        let all = loaded.model.complete(&g, &prefix, req.k, max_len)?;
        let total = all.len();
        // defense in depth over decoder masking
        let completions: Vec<Completion> = all
            .into_iter()
            .filter(|c| check_constraints(&g, &c.sequence).is_empty())
            .collect();
        Ok(CompleteResponse {
            prefix,
            rejected: total - completions.len(),
            completions,
        })
    })
    .await?;
    Ok(Json(res))
}

pub async fn assembly(
    State(s): Shared,
    Path(solution_id): Path<String>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Response> {
    let (g, seq) = s.store.solution(&solution_id)?;
    let asm = realize(&g, &seq).map_err(ApiError::violation)?;
    match q.get("format").map(String::as_str) {
        Some("obj") => Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], asm.to_obj()).into_response()),
        None | Some("json") => Ok(Json(json!({
            "solutionId": solution_id,
            "assembly": asm,
        }))
        .into_response()),
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    }
}
