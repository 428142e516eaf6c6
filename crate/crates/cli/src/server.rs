//! HTTP/WebSocket API for interactive recording and generation.
//!
//! REST covers sessions, rollouts and dataset views; the step loop runs over
//! a WebSocket at whatever cadence the client sends frames. The server never
//! advances an episode on its own.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State as Ext};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use stylebc::dataset::{append_trajectory, load_dataset};
use stylebc::evaluation::{conditioned_styles, density, generate, MetricRegistry, Property, StyleSource};
use stylebc::maze::{EnvConfig, EnvState, MazeEnv, MazeSpec};
use stylebc::neural::Checkpoint;
use stylebc::similarity::{dissimilarity_matrix, DissimilarityMatrix};
use stylebc::{behavior_of, Action, Dataset, DatasetMeta, Exec, RngStream, State, Trajectory};

pub const STYLE_HEADER: &str = "x-style-index";

struct Recorder {
    path: PathBuf,
    meta: DatasetMeta,
    next_id: usize,
}

struct Session {
    id: u64,
    env: MazeEnv,
    state: EnvState,
    rng: RngStream,
    episode: u64,
    states: Vec<State>,
    actions: Vec<Action>,
    saved: bool,
}

impl Session {
    fn new(id: u64, env: MazeEnv) -> Self {
        let rng = RngStream::new(env.config().seed, format!("session/{id}"));
        let mut s = Self {
            id,
            state: env.reset(&mut rng.clone()),
            env,
            rng,
            episode: 0,
            states: Vec::new(),
            actions: Vec::new(),
            saved: false,
        };
        s.reset();
        s
    }

    fn reset(&mut self) {
        self.episode += 1;
        self.rng = RngStream::new(
            self.env.config().seed,
            format!("session/{}/episode/{}", self.id, self.episode),
        );
        self.state = self.env.reset(&mut self.rng);
        self.states = vec![self.state.position];
        self.actions.clear();
        self.saved = false;
    }

    fn view(&self) -> SessionView {
        SessionView {
            id: self.id,
            s: self.state.position,
            visited: self.state.visited.clone(),
            steps: self.state.steps,
            done: self.state.done,
            success: self.state.reached_goal,
            recorded: self.actions.len(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: u64,
    pub s: State,
    pub visited: Vec<u8>,
    pub steps: usize,
    pub done: bool,
    pub success: bool,
    pub recorded: usize,
}

/// Shared, read-only model and data plus the per-session table.
pub struct AppState {
    maze: Arc<MazeSpec>,
    default_env: EnvConfig,
    model: Option<Checkpoint>,
    dataset: Option<Dataset>,
    nu: Option<DissimilarityMatrix>,
    recorder: Option<tokio::sync::Mutex<Recorder>>,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(
        maze: MazeSpec,
        default_env: EnvConfig,
        model: Option<Checkpoint>,
        dataset: Option<Dataset>,
        record: Option<PathBuf>,
    ) -> anyhow::Result<Arc<Self>> {
        default_env.validate()?;
        let nu = match &dataset {
            Some(ds) if ds.len() >= 2 => Some(dissimilarity_matrix(ds)?),
            _ => None,
        };
        let recorder = match record {
            Some(path) => {
                let next_id = if path.exists() && std::fs::metadata(&path)?.len() > 0 {
                    let existing = load_dataset(&path)?;
                    if existing.meta.maze_name != maze.name {
                        anyhow::bail!(
                            "{} was recorded on maze {:?}, server runs {:?}",
                            path.display(),
                            existing.meta.maze_name,
                            maze.name
                        );
                    }
                    existing.len()
                } else {
                    0
                };
                let meta = DatasetMeta {
                    maze_name: maze.name.clone(),
                    generator: "serve".into(),
                    ground_truth_k: None,
                    seed: 0,
                };
                Some(tokio::sync::Mutex::new(Recorder {
                    path,
                    meta,
                    next_id,
                }))
            }
            None => None,
        };
        Ok(Arc::new(Self {
            maze: Arc::new(maze),
            default_env,
            model,
            dataset,
            nu,
            recorder,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        }))
    }

    fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session table poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }
}

impl From<stylebc::Error> for ApiError {
    fn from(e: stylebc::Error) -> Self {
        let status = match e {
            stylebc::Error::PropertyUnsatisfiable => StatusCode::UNPROCESSABLE_ENTITY,
            stylebc::Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

pub fn router(state: Shared, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/maze", get(maze_info))
        .route("/session", post(create_session))
        .route("/session/{id}/reset", post(reset_session))
        .route("/session/{id}/state", get(session_state))
        .route("/session/{id}/save", post(save_session))
        .route("/session/{id}/step", get(step_socket))
        .route("/rollout", post(rollout))
        .route("/dataset/summary", get(dataset_summary))
        .route("/density", get(density_grid))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn maze_info(Ext(app): Ext<Shared>) -> Json<serde_json::Value> {
    let m = &app.maze;
    Json(json!({
        "name": m.name,
        "width": m.width,
        "height": m.height,
        "rows": m.render().lines().collect::<Vec<_>>(),
        "doors": m.doors,
        "goal": m.goal,
        "start": m.default_start,
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    maze: Option<String>,
    env_config: Option<EnvConfig>,
    /// Environment preset name, as an alternative to `env_config`.
    preset: Option<String>,
}

async fn create_session(Ext(app): Ext<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    if let Some(m) = &req.maze {
        if *m != app.maze.name {
            return Err(ApiError::bad_request(format!(
                "server hosts maze {:?}, not {m:?}",
                app.maze.name
            )));
        }
    }
    let cfg = match (req.env_config, req.preset) {
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give env_config or preset, not both")),
        (Some(c), None) => c,
        (None, Some(p)) => EnvConfig::preset(&p)
            .ok_or_else(|| ApiError::bad_request(format!("unknown preset {p:?}")))?,
        (None, None) => app.default_env.clone(),
    };
    let env = MazeEnv::new(Arc::clone(&app.maze), cfg)?;
    let id = app.next_session.fetch_add(1, Ordering::Relaxed);
    let session = Session::new(id, env);
    let view = session.view();
    app.sessions
        .lock()
        .expect("session table poisoned")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn reset_session(Ext(app): Ext<Shared>, UrlPath(id): UrlPath<u64>) -> Result<Json<SessionView>, ApiError> {
    let s = app.session(id)?;
    let mut s = s.lock().expect("session poisoned");
    s.reset();
    Ok(Json(s.view()))
}

async fn session_state(Ext(app): Ext<Shared>, UrlPath(id): UrlPath<u64>) -> Result<Json<SessionView>, ApiError> {
    let s = app.session(id)?;
    let s = s.lock().expect("session poisoned");
    Ok(Json(s.view()))
}

async fn save_session(Ext(app): Ext<Shared>, UrlPath(id): UrlPath<u64>) -> Result<Json<serde_json::Value>, ApiError> {
    let Some(recorder) = &app.recorder else {
        return Err(ApiError::conflict("recording disabled: start the server with --record"));
    };
    let session = app.session(id)?;
    let mut traj = {
        let s = session.lock().expect("session poisoned");
        if s.saved {
            return Err(ApiError::conflict("episode already saved; reset to record another"));
        }
        if s.actions.is_empty() {
            return Err(ApiError::bad_request("nothing recorded yet"));
        }
        Trajectory {
            id: 0,
            states: s.states.clone(),
            actions: s.actions.clone(),
            checkpoints: s.state.visited.clone(),
            success: s.state.reached_goal,
        }
    };
    let mut rec = recorder.lock().await;
    traj.id = rec.next_id;
    traj.validate()?;
    append_trajectory(&rec.path, &rec.meta, &traj)?;
    rec.next_id += 1;
    session.lock().expect("session poisoned").saved = true;
    Ok(Json(json!({
        "id": traj.id,
        "behavior": behavior_of(&traj),
        "success": traj.success,
        "steps": traj.len(),
        "path": rec.path.display().to_string(),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFrame {
    a: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepReply {
    pub s: State,
    pub visited: Vec<u8>,
    pub done: bool,
    pub clamped_a: Action,
}

async fn step_socket(
    Ext(app): Ext<Shared>,
    UrlPath(id): UrlPath<u64>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let session = app.session(id)?;
    Ok(ws.on_upgrade(move |socket| step_loop(socket, session)))
}

async fn step_loop(mut socket: WebSocket, session: Arc<Mutex<Session>>) {
    while let Some(Ok(msg)) = socket.recv().await {
        let reply = match msg {
            Message::Text(t) => step_frame(&session, t.as_bytes()),
            Message::Binary(b) => step_frame(&session, &b),
            Message::Close(_) => break,
            _ => continue,
        };
        if socket.send(Message::Text(reply.into())).await.is_err() {
            break;
        }
    }
}

/// Applies one client frame; failures become error frames and leave the
/// session untouched.
fn step_frame(session: &Mutex<Session>, frame: &[u8]) -> String {
    let error = |m: String| json!({ "error": m }).to_string();
    let f: StepFrame = match serde_json::from_slice(frame) {
        Ok(f) => f,
        Err(e) => return error(format!("malformed frame: {e}")),
    };
    let mut s = session.lock().expect("session poisoned");
    let s = &mut *s;
    match s.env.step(&mut s.state, Action::new(f.a[0], f.a[1]), &mut s.rng) {
        Ok(applied) => {
            s.actions.push(applied);
            s.states.push(s.state.position);
            let reply = StepReply {
                s: s.state.position,
                visited: s.state.visited.clone(),
                done: s.state.done,
                clamped_a: applied,
            };
            serde_json::to_string(&reply).expect("reply serializes")
        }
        Err(e) => error(e.to_string()),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RolloutRequest {
    style_index: Option<usize>,
    property: Option<Property>,
    #[serde(default)]
    seed: u64,
    /// Sample actions instead of taking the mean.
    #[serde(default)]
    sample: bool,
    env_config: Option<EnvConfig>,
}

async fn rollout(Ext(app): Ext<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let req: RolloutRequest = parse_body(&body)?;
    let Some(ck) = &app.model else {
        return Err(ApiError::conflict("no checkpoint loaded"));
    };
    let rows = ck.codebook.rows();
    let source = match (req.style_index, &req.property) {
        (Some(_), Some(_)) => {
            return Err(ApiError::bad_request("give style_index or property, not both"))
        }
        (Some(i), None) if i >= rows => {
            return Err(ApiError::bad_request(format!(
                "style_index {i} out of range for {rows} styles"
            )))
        }
        (Some(i), None) => StyleSource::Rows(vec![i]),
        (None, Some(p)) => {
            let ds = app
                .dataset
                .as_ref()
                .ok_or_else(|| ApiError::conflict("property rollouts need a dataset (--dataset)"))?;
            conditioned_styles(ds, p, &MetricRegistry::default())?
        }
        (None, None) => StyleSource::uniform(rows),
    };
    let env = MazeEnv::new(
        Arc::clone(&app.maze),
        req.env_config.unwrap_or_else(|| app.default_env.clone()),
    )?;
    let g = generate(&ck.policy, &ck.codebook, &env, &source, 1, !req.sample, req.seed, Exec::Sequential)?;
    let traj = g.trajectories.into_iter().next().expect("one rollout requested");
    let mut resp = Json(traj).into_response();
    if let Some(Some(row)) = g.style_rows.first() {
        resp.headers_mut()
            .insert(STYLE_HEADER, HeaderValue::from(*row as u64));
    }
    Ok(resp)
}

async fn dataset_summary(Ext(app): Ext<Shared>) -> Result<Json<serde_json::Value>, ApiError> {
    let ds = app
        .dataset
        .as_ref()
        .ok_or_else(|| ApiError::not_found("no dataset loaded"))?;
    let histogram = ds.histogram()?;
    Ok(Json(json!({
        "maze": ds.meta.maze_name,
        "size": ds.len(),
        "behaviors": histogram.bins.len(),
        "histogram": histogram,
    })))
}

#[derive(Debug, Deserialize)]
struct DensityQuery {
    beta: Option<f64>,
    #[serde(rename = "ref")]
    reference: Option<usize>,
    resolution: Option<usize>,
}

async fn density_grid(
    Ext(app): Ext<Shared>,
    Query(q): Query<DensityQuery>,
) -> Result<Json<stylebc::evaluation::DensityGrid>, ApiError> {
    let (Some(ds), Some(nu)) = (&app.dataset, &app.nu) else {
        return Err(ApiError::not_found("no dataset loaded"));
    };
    let grid = density(
        ds,
        nu,
        q.beta.unwrap_or(10.0),
        q.reference.unwrap_or(0),
        q.resolution.unwrap_or(64),
        (app.maze.width as f64, app.maze.height as f64),
    )?;
    Ok(Json(grid))
}
