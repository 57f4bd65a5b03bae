//! JSON-over-HTTP exploration service.
//!
//! | method | path                          | body / result                   |
//! |--------|-------------------------------|---------------------------------|
//! | GET    | `/checkpoints`                | checkpoint list                 |
//! | POST   | `/sessions`                   | [`CreateSession`] → [`SessionView`] |
//! | GET    | `/sessions/{id}`              | [`SessionView`]                 |
//! | DELETE | `/sessions/{id}`              | 204                             |
//! | POST   | `/sessions/{id}/commands`     | [`CommandsBody`] → [`CommandsResult`] |
//! | GET    | `/sessions/{id}/renders/{n}`  | `image/png`                     |
//! | GET    | `/sessions/{id}/bicubic`      | `image/png` baseline            |
//!
//! Images and masks travel as base64 PNG strings. A command batch is applied
//! atomically: if any command fails the session is left unchanged.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use deepsee_core::resample::bicubic_resample;
use deepsee_core::{ImageTensor, SemanticMask};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, ErrorKind, Result};
use crate::registry::{CheckpointInfo, Registry};
use crate::session::{
    unb64, Command, ExploreSession, Limits, RenderInfo, SessionInit, SessionStore, SessionView,
};

pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);
const BODY_LIMIT: usize = 32 << 20;

pub struct AppState {
    pub registry: Registry,
    pub store: SessionStore,
    pub limits: Limits,
}

impl AppState {
    pub fn new(registry: Registry, ttl: Duration) -> Self {
        Self {
            registry,
            store: SessionStore::new(ttl),
            limits: Limits::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSession {
    /// Base64 PNG/JPEG, square.
    pub image: String,
    /// Defaults to the first model checkpoint that matches the presence of
    /// a guide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Label PNG at output resolution; predicted when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    /// HR reference image of the same person.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommandsBody {
    Batch { commands: Vec<Command> },
    Single(Command),
}

impl CommandsBody {
    fn into_commands(self) -> Vec<Command> {
        match self {
            CommandsBody::Batch { commands } => commands,
            CommandsBody::Single(c) => vec![c],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandsResult {
    pub session: SessionView,
    /// Renders produced by this batch.
    pub renders: Vec<RenderInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointList {
    pub checkpoints: Vec<CheckpointInfo>,
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            ErrorKind::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::MissingAsset => StatusCode::SERVICE_UNAVAILABLE,
            ErrorKind::Failed => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, [(header::CONTENT_TYPE, "application/json")], self.to_json()).into_response()
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/checkpoints", get(list_checkpoints))
        .route("/sessions", axum::routing::post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/commands", axum::routing::post(apply_commands))
        .route("/sessions/{id}/renders/{n}", get(get_render))
        .route("/sessions/{id}/bicubic", get(get_bicubic))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::failed(format!("worker panicked: {e}")))?
}

fn json_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| AppError::invalid(format!("malformed request body: {e}")))
}

async fn list_checkpoints(State(st): State<Shared>) -> Json<CheckpointList> {
    Json(CheckpointList {
        checkpoints: st.registry.list().to_vec(),
    })
}

fn decode_image(b64: &str, what: &str) -> Result<ImageTensor> {
    ImageTensor::decode(&unb64(b64, what)?).map_err(|e| AppError::invalid(format!("{what}: {e}")))
}

fn decode_mask(b64: &str, n_regions: usize, what: &str) -> Result<SemanticMask> {
    SemanticMask::decode_png(&unb64(b64, what)?, n_regions).map_err(|e| AppError::invalid(format!("{what}: {e}")))
}

/// Builds a session from a creation request; shared with the CLI.
pub fn build_session(st: &AppState, req: CreateSession) -> Result<ExploreSession> {
    let info = match &req.checkpoint {
        Some(id) => st.registry.info(id)?.clone(),
        None => {
            let want_guide = req.guide.is_some();
            st.registry
                .list()
                .iter()
                .find(|i| i.kind == "model" && i.needs_guide == want_guide)
                .cloned()
                .map(Ok)
                .unwrap_or_else(|| st.registry.default_model().cloned())?
        }
    };
    let model = st.registry.model(&info.id)?;
    let segmenter = match st.registry.segmenter_for(&info) {
        Some(s) => Some(st.registry.segmenter(&s.id)?),
        None => None,
    };
    let n = info.n_regions;
    let init = SessionInit {
        x_lr: decode_image(&req.image, "image")?,
        mask: req.mask.as_deref().map(|m| decode_mask(m, n, "mask")).transpose()?,
        guide: match &req.guide {
            Some(g) => Some((
                decode_image(g, "guide")?,
                req.guide_mask.as_deref().map(|m| decode_mask(m, n, "guide_mask")).transpose()?,
            )),
            None => None,
        },
        seed: req.seed.unwrap_or(0),
    };
    ExploreSession::create(uuid::Uuid::new_v4().to_string(), info.id, model, segmenter, init, &st.limits)
}

async fn create_session(State(st): State<Shared>, body: axum::body::Bytes) -> Result<(StatusCode, Json<SessionView>)> {
    let req: CreateSession = json_body(&body)?;
    let view = blocking(move || {
        let session = build_session(&st, req)?;
        let view = session.view()?;
        st.store.insert(session);
        Ok(view)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>> {
    let s = st.store.get(&id)?;
    let view = s.lock().expect("session lock").view()?;
    Ok(Json(view))
}

async fn delete_session(State(st): State<Shared>, Path(id): Path<String>) -> Result<StatusCode> {
    st.store.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn apply_commands(
    State(st): State<Shared>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> Result<Json<CommandsResult>> {
    let commands = json_body::<CommandsBody>(&body)?.into_commands();
    let session = st.store.get(&id)?;
    let result = blocking(move || {
        // Single writer per session: the lock is held for the whole batch.
        let mut guard = session.lock().expect("session lock");
        let mut draft = guard.clone();
        let mut renders = Vec::new();
        for (i, cmd) in commands.iter().enumerate() {
            match draft.apply(cmd) {
                Ok(Some(r)) => renders.push(RenderInfo {
                    index: r.index,
                    inputs_hash: r.inputs_hash,
                }),
                Ok(None) => {}
                Err(e) => {
                    let mut e = e;
                    e.message = format!("command {i}: {}", e.message);
                    return Err(e);
                }
            }
        }
        *guard = draft;
        Ok(CommandsResult {
            session: guard.view()?,
            renders,
        })
    })
    .await?;
    Ok(Json(result))
}

fn png_response(bytes: Vec<u8>, hash: Option<String>) -> Response {
    let mut resp = ([(header::CONTENT_TYPE, "image/png")], bytes).into_response();
    if let Some(h) = hash.and_then(|h| h.parse().ok()) {
        resp.headers_mut().insert("x-inputs-hash", h);
    }
    resp
}

async fn get_render(State(st): State<Shared>, Path((id, n)): Path<(String, usize)>) -> Result<Response> {
    let s = st.store.get(&id)?;
    let render = {
        let g = s.lock().expect("session lock");
        g.renders
            .get(n)
            .cloned()
            .ok_or_else(|| AppError::not_found(format!("session has {} renders, no index {n}", g.renders.len())))?
    };
    Ok(png_response(render.png.as_ref().clone(), Some(render.inputs_hash)))
}

async fn get_bicubic(State(st): State<Shared>, Path(id): Path<String>) -> Result<Response> {
    let s = st.store.get(&id)?;
    let png = blocking(move || {
        let g = s.lock().expect("session lock");
        let hr = g.x_lr.height() * g.model().config.scale as usize;
        Ok(bicubic_resample(&g.x_lr, hr, hr)?.encode_png()?)
    })
    .await?;
    Ok(png_response(png, None))
}

/// Serves until the process is stopped; `on_bound` receives the actual
/// address (useful with port 0).
pub async fn serve(
    state: Shared,
    addr: std::net::SocketAddr,
    on_bound: impl FnOnce(std::net::SocketAddr),
) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| AppError::failed(format!("cannot bind {addr}: {e}")))?;
    on_bound(listener.local_addr()?);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.store.purge_expired(std::time::Instant::now());
            if n > 0 {
                log::info!("expired {n} idle sessions");
            }
        }
    });
    axum::serve(listener, router(state))
        .await
        .map_err(|e| AppError::failed(format!("server error: {e}")))
}
