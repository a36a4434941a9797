//! Loopback HTTP service over a planned frontier.
//!
//! Responses carry the same documents as the files written by the command
//! line. The only shared state is the frontier and profile loaded at start.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Deserialize;
use serde_json::json;

use slq_core::format::to_document_string;
use slq_core::{load_profile, select_plan, FrontierDoc, Preference, Profile};

use crate::commands::{read_frontier, selected_document, simulation_report};
use crate::CliError;

pub struct AppState {
    /// The frontier file exactly as read, served by `GET /frontier`.
    frontier_text: String,
    frontier: FrontierDoc,
    frontier_path: PathBuf,
    profile: Profile,
}

impl AppState {
    pub fn load(frontier_path: &Path, profile_path: &Path) -> Result<Self, CliError> {
        let frontier = read_frontier(frontier_path)?;
        let frontier_text = std::fs::read_to_string(frontier_path)
            .map_err(|e| CliError::Io(format!("cannot access {}: {e}", frontier_path.display())))?;
        let profile = load_profile(profile_path)?;
        Ok(AppState {
            frontier_text,
            frontier,
            frontier_path: frontier_path.to_path_buf(),
            profile,
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/frontier", get(get_frontier))
        .route("/plan/{index}", get(get_plan))
        .route("/select", post(post_select))
        .route("/simulate", post(post_simulate))
        .with_state(state)
}

/// Serves until interrupted. Prints the bound address once listening.
pub async fn run(state: AppState, port: u16) -> Result<(), CliError> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Io(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
    println!("listening on http://{local}");
    log::info!("serving {} points", state.frontier.frontier.len());
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("interrupt received, shutting down");
        })
        .await
        .map_err(|e| CliError::Io(e.to_string()))
}

struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.to_string() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(self.body)).into_response()
    }
}

fn document(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn parse_body<'a, D: Deserialize<'a>>(body: &'a [u8]) -> Result<D, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed payload: {e}")))
}

fn check_index(state: &AppState, index: usize) -> Result<(), ApiError> {
    let len = state.frontier.frontier.len();
    if index < len {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no point {index}; the frontier has {len} points"),
        ))
    }
}

async fn get_frontier(State(state): State<Arc<AppState>>) -> Response {
    document(state.frontier_text.clone())
}

async fn get_plan(State(state): State<Arc<AppState>>, UrlPath(index): UrlPath<usize>) -> Result<Response, ApiError> {
    check_index(&state, index)?;
    let doc = selected_document(&state.frontier, Some(&state.frontier_path), &format!("index={index}"), index);
    Ok(document(to_document_string(&doc)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectRequest {
    preference: String,
}

async fn post_select(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: SelectRequest = parse_body(&body)?;
    let preference: Preference = req
        .preference
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let (index, _) = select_plan(&state.frontier.frontier, preference).map_err(|e| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        body: json!({
            "error": e.to_string(),
            "nearest_index": e.nearest_index,
            "nearest_cost": e.nearest_cost,
            "nearest_latency_s": e.nearest_latency_s,
        }),
    })?;
    let doc = selected_document(&state.frontier, Some(&state.frontier_path), &preference.to_string(), index);
    Ok(document(to_document_string(&doc)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateRequest {
    index: usize,
    seed: u64,
    runs: u32,
}

async fn post_simulate(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: SimulateRequest = parse_body(&body)?;
    check_index(&state, req.index)?;
    if req.runs == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "runs must be at least 1"));
    }
    let text = tokio::task::spawn_blocking(move || {
        let selected = selected_document(
            &state.frontier,
            Some(&state.frontier_path),
            &format!("index={}", req.index),
            req.index,
        );
        simulation_report(&selected, &state.profile, req.seed, req.runs).map(|r| to_document_string(&r))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?
    .map_err(|e| match e {
        CliError::Usage(m) => ApiError::new(StatusCode::BAD_REQUEST, m),
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, other),
    })?;
    Ok(document(text))
}
