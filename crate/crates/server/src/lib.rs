//! HTTP API and server-sent event stream over a running [`LiveHandle`].
//!
//! Readers only ever see the published view; every mutation goes through the
//! physical loop's command queue and is applied between ticks.

use std::convert::Infallible;
use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use warehouse_twin::metrics::{CompletionSample, Preference, TickSample};
use warehouse_twin::orchestrator::{LiveHandle, Notice, OrchestratorError};

/// Minimum gap between two tick summaries on the event stream.
pub const STREAM_PERIOD: Duration = Duration::from_millis(100);

#[derive(Clone)]
pub struct AppState {
    live: Arc<LiveHandle>,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let code = match e {
            OrchestratorError::InvalidPreference(_) => StatusCode::UNPROCESSABLE_ENTITY,
            OrchestratorError::UnknownAnalysis(_) | OrchestratorError::UnknownAlternative { .. } => {
                StatusCode::NOT_FOUND
            }
            OrchestratorError::AnalysisPending(_) => StatusCode::CONFLICT,
            OrchestratorError::InvalidConfig(_) | OrchestratorError::Twin(_) | OrchestratorError::Sim(_) => {
                StatusCode::BAD_REQUEST
            }
            OrchestratorError::InsufficientData => StatusCode::CONFLICT,
            OrchestratorError::Stopped => StatusCode::SERVICE_UNAVAILABLE,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs a blocking call into the physical loop off the async workers.
async fn blocking<T: Send + 'static>(
    st: &AppState,
    f: impl FnOnce(&LiveHandle) -> Result<T, OrchestratorError> + Send + 'static,
) -> Result<T, ApiError> {
    let live = st.live.clone();
    tokio::task::spawn_blocking(move || f(&live))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(live: Arc<LiveHandle>) -> Router {
    Router::new()
        .route("/state", get(state))
        .route("/metrics", get(metrics))
        .route("/alternatives", get(alternatives))
        .route("/whatif", post(start_what_if))
        .route("/whatif/{id}", get(what_if_result))
        .route("/preference", post(preference))
        .route("/enact", post(enact))
        .route("/control", post(control))
        .route("/events", get(events))
        .with_state(AppState { live })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    live: Arc<LiveHandle>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(live)).with_graceful_shutdown(shutdown).await
}

async fn state(State(st): State<AppState>) -> Response {
    Json(st.live.view().state.clone()).into_response()
}

#[derive(Debug, Deserialize)]
pub struct MetricsQuery {
    /// Simulated seconds of history; defaults to 60.
    pub window: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsTail {
    pub t: f64,
    pub ticks: Vec<TickSample>,
    pub completions: Vec<CompletionSample>,
}

async fn metrics(State(st): State<AppState>, Query(q): Query<MetricsQuery>) -> ApiResult<MetricsTail> {
    let window = q.window.unwrap_or(60.0);
    if !(window >= 0.0) {
        return Err(ApiError(StatusCode::BAD_REQUEST, "window must be non-negative".into()));
    }
    let v = st.live.view();
    let t = v.state.t;
    let from = t - window - 1e-9;
    Ok(Json(MetricsTail {
        t,
        ticks: v.metrics.iter().filter(|s| s.t >= from).copied().collect(),
        completions: v.completions.iter().filter(|c| c.t >= from).copied().collect(),
    }))
}

async fn alternatives(State(st): State<AppState>) -> Response {
    Json(st.live.view().alternatives.clone()).into_response()
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub horizon: Option<f64>,
    pub replications: Option<usize>,
    /// Slow-zone radii to evaluate instead of the goal model's alternatives.
    pub candidates: Option<Vec<f64>>,
}

async fn start_what_if(State(st): State<AppState>, Json(req): Json<WhatIfRequest>) -> Result<Response, ApiError> {
    let id = blocking(&st, move |l| l.what_if(req.horizon, req.replications, req.candidates)).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response())
}

async fn what_if_result(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let v = st.live.view();
    let a = v.analyses.get(&id).ok_or(OrchestratorError::UnknownAnalysis(id))?;
    Ok(Json(a.clone()).into_response())
}

async fn preference(State(st): State<AppState>, Json(pref): Json<Preference>) -> Result<Response, ApiError> {
    blocking(&st, move |l| l.set_preference(pref)).await?;
    Ok(Json(json!({ "ok": true, "preference": pref })).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EnactRequest {
    pub alternative_id: usize,
    /// Defaults to the latest finished analysis that evaluated the alternative.
    pub analysis_id: Option<u64>,
}

async fn enact(State(st): State<AppState>, Json(req): Json<EnactRequest>) -> Result<Response, ApiError> {
    let analysis = match req.analysis_id {
        Some(id) => id,
        None => {
            let v = st.live.view();
            v.analyses
                .values()
                .rev()
                .filter_map(|a| a.report.as_ref())
                .find(|r| !r.results.is_empty() && r.alternatives.iter().any(|x| x.id == req.alternative_id))
                .map(|r| r.id)
                .ok_or_else(|| {
                    ApiError(
                        StatusCode::CONFLICT,
                        format!("no finished analysis contains alternative {}", req.alternative_id),
                    )
                })?
        }
    };
    if st.live.view().analyses.get(&analysis).is_some_and(|a| a.running) {
        return Err(OrchestratorError::AnalysisPending(analysis).into());
    }
    let alt = req.alternative_id;
    blocking(&st, move |l| l.enact(analysis, alt)).await?;
    Ok(Json(json!({ "ok": true, "analysis_id": analysis, "alternative_id": alt })).into_response())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ControlRequest {
    Pause,
    Resume,
    /// `null` runs as fast as possible.
    TimeScale { value: Option<f64> },
}

async fn control(State(st): State<AppState>, Json(req): Json<ControlRequest>) -> Result<Response, ApiError> {
    match req {
        ControlRequest::Pause => st.live.pause()?,
        ControlRequest::Resume => st.live.resume()?,
        ControlRequest::TimeScale { value } => st.live.set_time_scale(value)?,
    }
    Ok(Json(json!({ "ok": true })).into_response())
}

fn notice_name(n: &Notice) -> &'static str {
    match n {
        Notice::PhaseChange(_) => "phase_change",
        Notice::AnalysisStarted { .. } => "analysis_started",
        Notice::AnalysisFinished { .. } => "analysis_finished",
        Notice::Enacted { .. } => "enacted",
        Notice::PreferenceChanged { .. } => "preference_changed",
    }
}

/// Decimated tick summaries plus every notice published since the client connected.
pub fn event_stream(live: Arc<LiveHandle>) -> impl Stream<Item = Result<SseEvent, Infallible>> {
    let last_seq = live.view().notices.back().map(|(s, _)| *s);
    let mut interval = tokio::time::interval(STREAM_PERIOD);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    stream::unfold((live, last_seq, None::<u64>, interval), |(live, mut seq, mut tick, mut interval)| async move {
        interval.tick().await;
        let mut out = Vec::new();
        {
            let v = live.view();
            for (s, n) in v.notices_after(seq) {
                let data = serde_json::to_string(n).expect("notices serialize");
                out.push(Ok(SseEvent::default().event(notice_name(n)).id(s.to_string()).data(data)));
                seq = Some(*s);
            }
            if tick != Some(v.state.tick) {
                tick = Some(v.state.tick);
                let data = serde_json::to_string(&v.state).expect("state serializes");
                out.push(Ok(SseEvent::default().event("tick").data(data)));
            }
        }
        Some((stream::iter(out), (live, seq, tick, interval)))
    })
    .flatten()
}

async fn events(State(st): State<AppState>) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    Sse::new(event_stream(st.live.clone())).keep_alive(KeepAlive::default())
}
