//! HTTP/JSON front end over `splatgym-core`.
//!
//! Heavy work runs on the blocking pool; rollouts and bench sweeps stream
//! newline-delimited JSON as they progress.

mod error;

use std::collections::HashMap;
use std::convert::Infallible;
use std::io::Write;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::mpsc;

use splatgym_core::api::{
    BenchLine, BenchRequest, ErrorKind, FrameResponse, Health, RenderRequest, RenderResponse, RolloutRequest,
    SessionInfo, SessionRequest, StepRequest, StepResponse, StreamEnd, ValidateRequest, ValidateResponse,
};
use splatgym_core::assets::{validate_scene, SceneManifest};
use splatgym_core::bench::run_sweep;
use splatgym_core::config::EngineConfig;
use splatgym_core::engine::{make_env, VecEnv, COMMAND_DIM};
use splatgym_core::rollout::{rollout, RolloutOptions};

pub use error::ApiError;

type Session = Arc<Mutex<VecEnv>>;

#[derive(Clone)]
pub struct AppState {
    workers: usize,
    sessions: Arc<Mutex<HashMap<String, Session>>>,
}

impl AppState {
    /// `workers` is used whenever a request does not name a worker count.
    pub fn new(workers: usize) -> Self {
        AppState {
            workers: workers.max(1),
            sessions: Arc::default(),
        }
    }

    fn session(&self, id: &str) -> Result<Session, ApiError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::no_session(id))
    }

    fn config(&self, c: Option<EngineConfig>, o: &splatgym_core::api::Overrides) -> Result<EngineConfig, ApiError> {
        let mut c = o.apply(c)?;
        c.workers.get_or_insert(self.workers);
        Ok(c)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/validate", post(validate))
        .route("/render", post(render))
        .route("/rollout", post(run_rollout))
        .route("/bench", post(bench))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(close_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/reset", post(reset_session))
        .route("/sessions/{id}/frame", get(frame_session))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `addr` and serves in a background task. Returns the bound address.
pub async fn spawn(addr: SocketAddr, state: AppState) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router(state)).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await?
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        default_workers: state.workers,
    })
}

async fn validate(body: Result<Json<ValidateRequest>, JsonRejection>) -> Result<Json<ValidateResponse>, ApiError> {
    let Json(req) = body?;
    let reports = blocking(move || {
        let m = SceneManifest::load(&req.manifest)?;
        let mut out = Vec::with_capacity(m.scenes.len());
        for e in &m.scenes {
            out.push(validate_scene(&m.load_entry(e)?));
        }
        Ok(out)
    })
    .await?;
    Ok(Json(ValidateResponse {
        passed: reports.iter().all(|r| r.passed()),
        reports,
    }))
}

async fn render(
    State(state): State<AppState>,
    body: Result<Json<RenderRequest>, JsonRejection>,
) -> Result<Json<RenderResponse>, ApiError> {
    let Json(req) = body?;
    let img = blocking(move || Ok(req.execute(state.workers)?)).await?;
    Ok(Json(RenderResponse {
        scene_id: img.scene_id,
        width: img.width,
        height: img.height,
        rgb_png: B64.encode(&img.rgb_png),
        depth_png: B64.encode(&img.depth_png),
        depth_max: img.depth_max,
        render_ms: img.render_ms,
    }))
}

/// Forwards every write as one body chunk.
struct ChannelWriter(mpsc::Sender<Bytes>);

impl Write for ChannelWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0
            .blocking_send(Bytes::copy_from_slice(buf))
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::BrokenPipe, "client disconnected"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn send_line(tx: &mpsc::Sender<Bytes>, value: &impl Serialize) {
    let mut line = serde_json::to_vec(value).expect("stream lines serialize");
    line.push(b'\n');
    // the client may be gone; nothing to do then
    let _ = tx.blocking_send(line.into());
}

fn ndjson(rx: mpsc::Receiver<Bytes>) -> Response {
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|b| (Ok::<_, Infallible>(b), rx))
    });
    (
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(stream),
    )
        .into_response()
}

async fn run_rollout(
    State(state): State<AppState>,
    body: Result<Json<RolloutRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let config = state.config(req.config.clone(), &req.overrides)?;
    let opts = RolloutOptions {
        steps: req.steps,
        policy: req.policy,
        seed: config.seed,
        frames: req.frames_dir.clone(),
    };
    // setup errors become a plain error response; later ones end the stream
    let mut env = blocking(move || Ok(make_env(&req.manifest, req.n_envs, config)?)).await?;
    let (tx, rx) = mpsc::channel(256);
    tokio::task::spawn_blocking(move || {
        let end = match rollout(&mut env, &opts, &mut ChannelWriter(tx.clone())) {
            Ok(s) => StreamEnd::Summary(s),
            Err(e) => StreamEnd::Error((&e).into()),
        };
        send_line(&tx, &end);
    });
    Ok(ndjson(rx))
}

async fn bench(
    State(state): State<AppState>,
    body: Result<Json<BenchRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    if req.sweep.points().is_empty() || req.sweep.steps == 0 {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            ErrorKind::InvalidArgument,
            "bench sweep needs at least one point and one timed step",
        ));
    }
    let base = state.config(req.config.clone(), &Default::default())?;
    let manifest = req.manifest.clone();
    let scenes = blocking(move || {
        let m = SceneManifest::load(&manifest)?;
        Ok(m.load_scenes()?.into_iter().map(Arc::new).collect::<Vec<_>>())
    })
    .await?;
    let (tx, rx) = mpsc::channel(16);
    tokio::task::spawn_blocking(move || {
        let result = run_sweep(&scenes, &base, &req.sweep, |r| {
            send_line(&tx, &BenchLine::Report(r.clone()));
            Ok(())
        });
        if let Err(e) = result {
            send_line(&tx, &BenchLine::Error((&e).into()));
        }
    });
    Ok(ndjson(rx))
}

fn observe(env: &VecEnv, info: serde_json::Value) -> StepResponse {
    StepResponse {
        step: env.info().step,
        rewards: env.rewards().to_vec(),
        dones: env.dones().to_vec(),
        proprio: env.proprio().to_vec(),
        commands: env.commands().to_vec(),
        rendered: env.rendered().to_vec(),
        info,
    }
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<SessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let Json(req) = body?;
    let config = state.config(req.config, &req.overrides)?;
    let env = blocking(move || Ok(make_env(&req.manifest, req.n_envs, config)?)).await?;
    let (height, width) = env.image_size();
    let id = uuid::Uuid::new_v4().to_string();
    let info = SessionInfo {
        id: id.clone(),
        n_envs: env.n_envs(),
        n_joints: env.n_joints(),
        proprio_dim: env.proprio_dim(),
        command_dim: COMMAND_DIM,
        height,
        width,
    };
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(env)));
    Ok((StatusCode::CREATED, Json(info)))
}

async fn step_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<StepRequest>, JsonRejection>,
) -> Result<Json<StepResponse>, ApiError> {
    let Json(req) = body?;
    let session = state.session(&id)?;
    let resp = blocking(move || {
        let mut env = session.lock().expect("session poisoned");
        let info = serde_json::to_value(env.step(&req.actions)?).expect("step info serializes");
        Ok(observe(&env, info))
    })
    .await?;
    Ok(Json(resp))
}

async fn reset_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<StepResponse>, ApiError> {
    let session = state.session(&id)?;
    let resp = blocking(move || {
        let mut env = session.lock().expect("session poisoned");
        env.reset()?;
        Ok(observe(&env, serde_json::Value::Null))
    })
    .await?;
    Ok(Json(resp))
}

async fn frame_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<FrameResponse>, ApiError> {
    let session = state.session(&id)?;
    let resp = blocking(move || {
        let env = session.lock().expect("session poisoned");
        let (height, width) = env.image_size();
        let depth: Vec<u8> = env.depth().iter().flat_map(|d| d.to_le_bytes()).collect();
        Ok(FrameResponse {
            height,
            width,
            rgb: B64.encode(env.rgb()),
            depth: B64.encode(depth),
            frame_steps: env.frame_steps().to_vec(),
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn close_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let removed = state.sessions.lock().expect("session map poisoned").remove(&id);
    match removed {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::no_session(&id)),
    }
}
