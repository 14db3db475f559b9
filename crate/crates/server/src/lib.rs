//! HTTP surface of the engine.
//!
//! Handlers hand work to the blocking pool since engine calls may wait on
//! fsync or a model provider. Live streams are server-sent events; each
//! stream is fed by a small thread that polls the engine-side stream and
//! stops once the client goes away.

use std::collections::{BTreeMap, BTreeSet};
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio_stream::wrappers::ReceiverStream;
use tokio_stream::StreamExt;

use regulearn::admin::{ExperimentConfig, Plan};
use regulearn::agents::{ChatSpec, LEARNER};
use regulearn::collab::{DocOp, OpKind};
use regulearn::engine::{AnalyzeRequest, Engine, EngineError, ErrorKind, NewSession, Source};
use regulearn::model::{Phase, SessionStatus};
use regulearn::scaffold::DeliveryStatus;
use regulearn::writing::Rubric;

pub type Shared = Arc<Engine>;

/// Error body: `{"error": <code>, "message": <text>}`.
#[derive(Debug)]
pub enum ApiError {
    Engine(EngineError),
    Status(StatusCode, &'static str, String),
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError::Engine(e)
    }
}

pub fn status_of(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::Forbidden => StatusCode::FORBIDDEN,
        ErrorKind::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn error_body(e: &EngineError) -> Value {
    json!({"error": e.code(), "message": e.to_string()})
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::Engine(e) => (status_of(e.kind()), Json(error_body(&e))).into_response(),
            ApiError::Status(status, code, message) => {
                (status, Json(json!({"error": code, "message": message}))).into_response()
            }
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, EngineError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => Ok(Json(r?)),
        Err(e) => Err(ApiError::Status(
            StatusCode::INTERNAL_SERVER_ERROR,
            "Internal",
            e.to_string(),
        )),
    }
}

/// Bridges a blocking `poll` function into an SSE response. `poll` is
/// called with a short timeout until the client disconnects.
fn sse<T, P>(mut poll: P, render: fn(&T) -> (String, Value)) -> Sse<impl Stream<Item = Result<Event, Infallible>>>
where
    T: Send + 'static,
    P: FnMut(Duration) -> Option<T> + Send + 'static,
{
    let (tx, rx) = tokio::sync::mpsc::channel::<Event>(256);
    std::thread::spawn(move || {
        while !tx.is_closed() {
            if let Some(item) = poll(Duration::from_millis(100)) {
                let (id, data) = render(&item);
                let ev = Event::default().id(id).data(data.to_string());
                if tx.blocking_send(ev).is_err() {
                    break;
                }
            }
        }
    });
    Sse::new(ReceiverStream::new(rx).map(Ok)).keep_alive(KeepAlive::default())
}

fn last_event_id(headers: &HeaderMap) -> Option<String> {
    headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
}

/// All `/v1` routes. Admin routes require `Authorization: Bearer <token>`
/// when the engine has an admin token configured.
pub fn router(engine: Shared) -> Router {
    let admin = Router::new()
        .route("/v1/admin/experiments", get(list_experiments).post(configure_experiment))
        .route("/v1/admin/experiments/{id}", get(get_experiment))
        .route("/v1/admin/search", get(search))
        .route("/v1/admin/stats/{experiment_id}", get(stats))
        .route("/v1/admin/proportions/{session_id}", get(proportions))
        .route("/v1/admin/plans/{session_id}", get(get_plan))
        .route("/v1/admin/import", post(import))
        .route("/v1/admin/rubrics/{id}", put(put_rubric).get(get_rubric))
        .route("/v1/admin/sources", get(list_sources))
        .route("/v1/admin/sources/{id}", put(put_sources))
        .route("/v1/admin/lexicons", get(list_lexicons))
        .route("/v1/admin/lexicons/{id}", put(put_lexicon))
        .route("/v1/experiments/{id}/export", get(export))
        .route_layer(middleware::from_fn_with_state(engine.clone(), admin_auth));

    Router::new()
        .route("/v1/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/phase", post(advance_phase))
        .route("/v1/sessions/{id}/finish", post(finish_session))
        .route("/v1/sessions/{id}/stream", get(event_stream))
        .route("/v1/sessions/{id}/labels", get(labels))
        .route("/v1/sessions/{id}/conditions", get(conditions))
        .route("/v1/sessions/{id}/intervals/{k}", get(intervals))
        .route("/v1/sessions/{id}/instruments", post(instrument))
        .route("/v1/sessions/{id}/timer", get(timer).post(timer))
        .route("/v1/sessions/{id}/scaffolds", get(scaffold_stream))
        .route("/v1/sessions/{id}/scaffold-messages", get(scaffold_messages))
        .route("/v1/scaffolds/{id}/ack", post(ack_scaffold))
        .route("/v1/events", post(post_events))
        .route("/v1/analyze", post(analyze))
        .route("/v1/submissions", post(submit))
        .route("/v1/chats", post(create_chat))
        .route("/v1/chats/{id}/turns", post(send_turn))
        .route("/v1/chats/{id}/transcript", get(transcript))
        .route("/v1/chats/{id}/transcripts", get(transcripts))
        .route("/v1/docs", post(create_doc))
        .route("/v1/docs/{id}", get(doc_content))
        .route("/v1/docs/{id}/ops", post(submit_op))
        .route("/v1/docs/{id}/stream", get(doc_stream))
        .route("/v1/docs/{id}/replay", get(doc_replay))
        .route("/v1/plans", post(save_plan))
        .route("/v1/admin/plans", post(save_plan))
        .merge(admin)
        .with_state(engine)
}

async fn admin_auth(State(engine): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &engine.config().admin_token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::Status(StatusCode::UNAUTHORIZED, "Unauthorized", "admin token required".into())
                .into_response();
        }
    }
    next.run(req).await
}

// ---- sessions ----

async fn create_session(State(e): State<Shared>, Json(req): Json<NewSession>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.create_session(req)?).expect("session serializes"))).await
}

async fn get_session(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.get_session(&id)?).expect("session serializes"))).await
}

#[derive(Deserialize)]
struct PhaseBody {
    phase: Phase,
}

async fn advance_phase(State(e): State<Shared>, Path(id): Path<String>, Json(b): Json<PhaseBody>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.advance_phase(&id, b.phase)?).expect("ack serializes"))).await
}

#[derive(Deserialize)]
struct FinishBody {
    #[serde(default = "completed")]
    status: SessionStatus,
}

fn completed() -> SessionStatus {
    SessionStatus::Completed
}

async fn finish_session(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Json(b): Json<FinishBody>,
) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.finish_session(&id, b.status)?).expect("session serializes"))).await
}

// ---- events ----

/// A single event document or an array of them. Batches answer 200 with a
/// positional list of `{"ack": ...}` or `{"error": ...}` entries.
async fn post_events(State(e): State<Shared>, Json(body): Json<Value>) -> Result<Response, ApiError> {
    match body {
        Value::Array(items) => {
            let Json(out) = blocking(move || {
                Ok(e.ingest_batch(&items)
                    .into_iter()
                    .map(|r| match r {
                        Ok(ack) => json!({"ack": ack}),
                        Err(err) => error_body(&err),
                    })
                    .collect::<Vec<_>>())
            })
            .await?;
            Ok(Json(out).into_response())
        }
        single => {
            let sid = single
                .get("session_id")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_owned();
            let Json(ack) = blocking(move || e.ingest(&single, &sid)).await?;
            Ok(Json(ack).into_response())
        }
    }
}

#[derive(Deserialize)]
struct FromSeq {
    #[serde(default)]
    from_seq: Option<u64>,
}

async fn event_stream(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<FromSeq>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let resume = last_event_id(&headers).and_then(|s| s.parse::<u64>().ok()).map(|s| s + 1);
    let from = q.from_seq.or(resume).unwrap_or(0);
    let Json(mut sub) = blocking(move || e.subscribe_events(&id, from)).await?;
    Ok(sse(
        move |t| sub.recv_timeout(t),
        |ev: &regulearn::model::TraceEvent| (ev.server_seq.to_string(), ev.to_value()),
    )
    .into_response())
}

// ---- analysis ----

async fn labels(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.labels(&id)?).expect("labels serialize"))).await
}

async fn conditions(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.conditions(&id)?).expect("conditions serialize"))).await
}

async fn intervals(State(e): State<Shared>, Path((id, k)): Path<(String, u64)>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.intervals(&id, k)?).expect("aggregate serializes"))).await
}

#[derive(Deserialize)]
struct InstrumentBody {
    instrument: String,
    responses: Vec<Option<u32>>,
    key: Vec<u32>,
}

async fn instrument(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Json(b): Json<InstrumentBody>,
) -> ApiResult<Value> {
    blocking(move || {
        let score = e.submit_instrument(&id, &b.instrument, &b.responses, &b.key)?;
        Ok(json!({"instrument": b.instrument, "score": score}))
    })
    .await
}

async fn timer(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.timer(&id)?).expect("timer serializes"))).await
}

// ---- scaffolds ----

#[derive(Deserialize)]
struct AfterQuery {
    #[serde(default)]
    after: Option<String>,
}

async fn scaffold_stream(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<AfterQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let after = q.after.or_else(|| last_event_id(&headers));
    let Json(mut stream) = blocking(move || e.subscribe_scaffolds(&id, after.as_deref())).await?;
    Ok(sse(
        move |t| stream.recv_timeout(t),
        |m: &regulearn::scaffold::ScaffoldMessage| {
            (m.message_id.clone(), serde_json::to_value(m).expect("message serializes"))
        },
    )
    .into_response())
}

async fn scaffold_messages(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.scaffold_messages(&id)?).expect("messages serialize"))).await
}

#[derive(Deserialize)]
struct AckBody {
    #[serde(default = "acknowledged")]
    status: DeliveryStatus,
}

fn acknowledged() -> DeliveryStatus {
    DeliveryStatus::Acknowledged
}

async fn ack_scaffold(
    State(e): State<Shared>,
    Path(id): Path<String>,
    body: Option<Json<AckBody>>,
) -> ApiResult<Value> {
    let status = body.map_or(DeliveryStatus::Acknowledged, |Json(b)| b.status);
    blocking(move || Ok(serde_json::to_value(e.ack_scaffold(&id, status)?).expect("message serializes"))).await
}

// ---- writing ----

async fn analyze(State(e): State<Shared>, Json(req): Json<AnalyzeRequest>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.analyze(&req)?).expect("report serializes"))).await
}

#[derive(Deserialize)]
struct SubmitBody {
    session_id: String,
    text: String,
    #[serde(default)]
    rubric_id: Option<String>,
}

async fn submit(State(e): State<Shared>, Json(b): Json<SubmitBody>) -> ApiResult<Value> {
    blocking(move || {
        let r = e.submit(&b.session_id, &b.text, b.rubric_id.as_deref())?;
        Ok(serde_json::to_value(r).expect("submission serializes"))
    })
    .await
}

// ---- chat ----

async fn create_chat(State(e): State<Shared>, Json(spec): Json<ChatSpec>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.create_chat(spec)?).expect("chat serializes"))).await
}

#[derive(Deserialize)]
struct TurnBody {
    text: String,
    addressee: String,
}

async fn send_turn(State(e): State<Shared>, Path(id): Path<String>, Json(b): Json<TurnBody>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.send_turn(&id, &b.text, &b.addressee)?).expect("turn serializes")))
        .await
}

#[derive(Deserialize)]
struct AgentQuery {
    #[serde(default)]
    agent_id: Option<String>,
}

/// Turns visible to one agent; the first agent when none is named.
async fn transcript(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<AgentQuery>,
) -> ApiResult<Value> {
    blocking(move || {
        let chat = e.chat(&id)?;
        let agent = match q.agent_id {
            Some(a) if a != LEARNER => a,
            _ => chat.spec.agents[0].agent_id.clone(),
        };
        if chat.agent(&agent).is_none() {
            return Err(regulearn::agents::ChatError::AgentUnknown(agent).into());
        }
        Ok(json!({"chat_id": id, "agent_id": agent, "turns": chat.transcript_for(&agent)}))
    })
    .await
}

async fn transcripts(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.chat(&id)?).expect("chat serializes"))).await
}

// ---- documents ----

#[derive(Deserialize)]
struct CreateDoc {
    doc_id: String,
    session_id: String,
}

async fn create_doc(State(e): State<Shared>, Json(b): Json<CreateDoc>) -> ApiResult<Value> {
    blocking(move || {
        e.create_doc(&b.doc_id, &b.session_id)?;
        Ok(json!({"doc_id": b.doc_id, "revision": 0}))
    })
    .await
}

#[derive(Deserialize)]
struct SessionQuery {
    session_id: String,
    #[serde(default)]
    from_revision: Option<u64>,
    #[serde(default)]
    revision: Option<u64>,
}

async fn doc_content(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
) -> ApiResult<Value> {
    blocking(move || {
        let (revision, content) = e.doc_content(&id, &q.session_id)?;
        Ok(json!({"doc_id": id, "revision": revision, "content": content}))
    })
    .await
}

/// Op fields of [`DocOp`] plus the submitting session; `doc_id` comes from
/// the path.
#[derive(Deserialize)]
struct OpBody {
    session_id: String,
    op_id: String,
    author: String,
    base_revision: u64,
    position: usize,
    #[serde(flatten)]
    kind: OpKind,
}

async fn submit_op(State(e): State<Shared>, Path(id): Path<String>, Json(b): Json<OpBody>) -> ApiResult<Value> {
    blocking(move || {
        let op = DocOp {
            op_id: b.op_id,
            doc_id: id,
            author: b.author,
            base_revision: b.base_revision,
            position: b.position,
            kind: b.kind,
        };
        Ok(serde_json::to_value(e.submit_op(&b.session_id, op)?).expect("result serializes"))
    })
    .await
}

async fn doc_stream(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let resume = last_event_id(&headers).and_then(|s| s.parse::<u64>().ok());
    let from = q.from_revision.or(resume).unwrap_or(0);
    let Json(mut stream) = blocking(move || e.subscribe_doc(&id, &q.session_id, from)).await?;
    Ok(sse(
        move |t| stream.recv_timeout(t),
        |c: &regulearn::collab::CommittedOp| {
            (c.revision.to_string(), serde_json::to_value(c).expect("op serializes"))
        },
    )
    .into_response())
}

async fn doc_replay(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
) -> ApiResult<Value> {
    blocking(move || {
        let revision = q
            .revision
            .ok_or_else(|| EngineError::Invalid("revision query parameter is required".into()))?;
        let content = e.replay_doc(&id, &q.session_id, revision)?;
        Ok(json!({"doc_id": id, "revision": revision, "content": content}))
    })
    .await
}

// ---- planner ----

async fn save_plan(State(e): State<Shared>, Json(plan): Json<Plan>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.save_plan(plan)?).expect("ack serializes"))).await
}

async fn get_plan(State(e): State<Shared>, Path(id): Path<String>) -> Result<Json<Plan>, ApiError> {
    e.plan(&id)
        .map(Json)
        .ok_or_else(|| ApiError::Status(StatusCode::NOT_FOUND, "PlanUnknown", format!("no plan for `{id}`")))
}

// ---- admin ----

async fn list_experiments(State(e): State<Shared>) -> Json<Vec<ExperimentConfig>> {
    Json(e.experiments())
}

async fn configure_experiment(State(e): State<Shared>, Json(cfg): Json<ExperimentConfig>) -> ApiResult<Value> {
    blocking(move || {
        let id = cfg.experiment_id.clone();
        e.configure_experiment(cfg)?;
        Ok(json!({"experiment_id": id, "status": "configured"}))
    })
    .await
}

async fn get_experiment(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<ExperimentConfig> {
    blocking(move || e.experiment(&id)).await
}

#[derive(Deserialize)]
struct SearchQuery {
    #[serde(default)]
    q: String,
}

async fn search(State(e): State<Shared>, Query(q): Query<SearchQuery>) -> Json<Value> {
    Json(serde_json::to_value(e.search(&q.q)).expect("hits serialize"))
}

async fn stats(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.stats(&id)?).expect("stats serialize"))).await
}

async fn proportions(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<BTreeMap<String, f64>> {
    blocking(move || e.proportions(&id)).await
}

#[derive(Deserialize)]
struct ExportQuery {
    /// Comma-separated session ids.
    #[serde(default)]
    sessions: Option<String>,
}

async fn export(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let filter: Option<BTreeSet<String>> = q
        .sessions
        .map(|s| s.split(',').filter(|x| !x.is_empty()).map(str::to_owned).collect());
    let Json(bytes) = blocking(move || e.export(&id, filter.as_ref())).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
}

async fn import(State(e): State<Shared>, body: Bytes) -> ApiResult<Value> {
    blocking(move || Ok(serde_json::to_value(e.import(&body)?).expect("report serializes"))).await
}

async fn put_rubric(State(e): State<Shared>, Path(id): Path<String>, Json(mut r): Json<Rubric>) -> ApiResult<Value> {
    r.rubric_id = id.clone();
    blocking(move || {
        e.put_rubric(r)?;
        Ok(json!({"rubric_id": id}))
    })
    .await
}

async fn get_rubric(State(e): State<Shared>, Path(id): Path<String>) -> ApiResult<Rubric> {
    blocking(move || e.rubric(&id)).await
}

async fn list_sources(State(e): State<Shared>) -> Json<Vec<String>> {
    Json(e.source_set_ids())
}

async fn put_sources(
    State(e): State<Shared>,
    Path(id): Path<String>,
    Json(sources): Json<Vec<Source>>,
) -> ApiResult<Value> {
    blocking(move || {
        let n = sources.len();
        e.put_source_set(&id, sources)?;
        Ok(json!({"source_set_id": id, "sources": n}))
    })
    .await
}

async fn list_lexicons(State(e): State<Shared>) -> Json<Vec<String>> {
    Json(e.lexicon_ids())
}

async fn put_lexicon(State(e): State<Shared>, Path(id): Path<String>, Json(doc): Json<Value>) -> ApiResult<Value> {
    blocking(move || {
        e.put_lexicon(&id, doc)?;
        Ok(json!({"lexicon_id": id}))
    })
    .await
}

/// Serves `router(engine)` on `listener` until `shutdown` resolves.
pub async fn serve(
    engine: Shared,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(shutdown)
        .await
}
