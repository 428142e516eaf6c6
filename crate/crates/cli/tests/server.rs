use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use stylebc::dataset::load_dataset;
use stylebc::experts::{generate_dataset, run_expert, DatasetRecipe, Route};
use stylebc::maze::{EnvConfig, MazeEnv, MazeSpec};
use stylebc::neural::{ArchConfig, Checkpoint};
use stylebc::training::{train, Algorithm, TrainConfig};
use stylebc::{behavior_of, Dataset, RngStream, Trajectory};
use stylebc_cli::server::{router, AppState, STYLE_HEADER};
use tempfile::TempDir;
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

fn maze() -> MazeSpec {
    MazeSpec::builtin("medium_maze").unwrap()
}

fn dataset() -> Dataset {
    generate_dataset(&maze(), &DatasetRecipe::builtin("only_forward").unwrap()).unwrap()
}

fn model(ds: &Dataset) -> Checkpoint {
    let arch = ArchConfig {
        hidden_dim: 16,
        num_hidden: 2,
        ..ArchConfig::for_maze(&maze())
    };
    let cfg = TrainConfig {
        algorithm: Algorithm::Zbc,
        steps: 5,
        ..TrainConfig::default()
    };
    train(ds, None, arch, &cfg).unwrap().0
}

fn app(with_model: bool, record: Option<PathBuf>) -> Router {
    let ds = dataset();
    let ck = with_model.then(|| model(&ds));
    let state = AppState::new(maze(), EnvConfig::deterministic(), ck, Some(ds), record).unwrap();
    router(state, None)
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Option<String>, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let style = resp
        .headers()
        .get(STYLE_HEADER)
        .map(|v| v.to_str().unwrap().to_owned());
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, style, value)
}

async fn spawn(app: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(addr: SocketAddr, id: u64) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session/{id}/step"))
        .await
        .unwrap();
    ws
}

async fn send(ws: &mut Ws, frame: &str) -> Value {
    ws.send(Message::Text(frame.to_owned().into())).await.unwrap();
    let msg = ws.next().await.unwrap().unwrap();
    serde_json::from_str(msg.to_text().unwrap()).unwrap()
}

async fn step(ws: &mut Ws, dx: f64, dy: f64) -> Value {
    send(ws, &json!({ "a": [dx, dy] }).to_string()).await
}

fn expert(waypoints: &[u8]) -> Trajectory {
    let env = MazeEnv::new(maze(), EnvConfig::deterministic()).unwrap();
    run_expert(&env, &Route::new(waypoints, 1.0, 0.0), RngStream::new(0, "test")).unwrap()
}

#[tokio::test]
async fn sessions_start_at_the_default_start() {
    let app = app(false, None);
    let (status, _, v) = call(&app, "POST", "/session", "").await;
    assert_eq!(status, StatusCode::CREATED);
    let start = MazeSpec::center(maze().default_start);
    assert_eq!(v["s"], json!([start.x, start.y]));
    assert_eq!(v["steps"], 0);
    assert_eq!(v["done"], false);

    let id = v["id"].as_u64().unwrap();
    let (status, _, again) = call(&app, "GET", &format!("/session/{id}/state"), "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, v);
}

#[tokio::test]
async fn session_requests_are_validated() {
    let app = app(false, None);
    let (s, _, v) = call(&app, "POST", "/session", r#"{"maze":"big_maze"}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("medium_maze"));
    let (s, _, _) = call(&app, "POST", "/session", r#"{"colour":"red"}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "POST", "/session", r#"{"preset":"windy"}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "POST", "/session", r#"{"env_config":{"max_steps":0}}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "POST", "/session", r#"{"maze":"medium_maze","preset":"noise-transi"}"#).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _, v) = call(&app, "GET", "/session/999/state", "").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
    let (s, _, _) = call(&app, "POST", "/session/999/reset", "").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn maze_summary_and_density_views() {
    let app = app(false, None);
    let (s, _, v) = call(&app, "GET", "/maze", "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["name"], "medium_maze");
    assert_eq!(v["rows"].as_array().unwrap().len(), maze().height);

    let (s, _, v) = call(&app, "GET", "/dataset/summary", "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["size"], 100);
    let total: f64 = v["histogram"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let (s, _, v) = call(&app, "GET", "/density?beta=0&ref=2&resolution=16", "").await;
    assert_eq!(s, StatusCode::OK);
    let grid: stylebc::evaluation::DensityGrid = serde_json::from_value(v).unwrap();
    assert_eq!(grid.resolution, 16);
    assert!((grid.total() - 1.0).abs() < 1e-9);
    let (s, _, _) = call(&app, "GET", "/density?ref=100", "").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let bare = router(
        AppState::new(maze(), EnvConfig::deterministic(), None, None, None).unwrap(),
        None,
    );
    let (s, _, _) = call(&bare, "GET", "/dataset/summary", "").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn rollouts_need_a_model() {
    let app = app(false, None);
    let (s, _, v) = call(&app, "POST", "/rollout", r#"{"style_index":0}"#).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "no checkpoint loaded");
}

#[tokio::test]
async fn rollouts_by_style_and_property() {
    let app = app(true, None);
    let (s, style, v) = call(&app, "POST", "/rollout", r#"{"style_index":7}"#).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(style.as_deref(), Some("7"));
    // Same payload shape as a dataset line.
    let t: Trajectory = serde_json::from_value(v.clone()).unwrap();
    t.validate().unwrap();
    let mut line = Vec::new();
    stylebc::dataset::write_trajectory_line(&t, &mut line).unwrap();
    let reparsed: Value = serde_json::from_slice(&line).unwrap();
    assert_eq!(reparsed, v);

    let (_, _, again) = call(&app, "POST", "/rollout", r#"{"style_index":7}"#).await;
    assert_eq!(again, v, "greedy deterministic rollouts repeat");

    let ds = dataset();
    let allowed: Vec<usize> = ds
        .trajectories
        .iter()
        .filter(|t| (70..=80).contains(&t.len()))
        .map(|t| t.id)
        .collect();
    assert!(!allowed.is_empty());
    for seed in 0..5 {
        let body = json!({"property": {"metric": "length", "min": 70, "max": 80}, "seed": seed});
        let (s, style, _) = call(&app, "POST", "/rollout", &body.to_string()).await;
        assert_eq!(s, StatusCode::OK);
        let row: usize = style.unwrap().parse().unwrap();
        assert!(allowed.contains(&row), "row {row} not in {allowed:?}");
    }

    let (s, _, v) = call(
        &app,
        "POST",
        "/rollout",
        r#"{"property":{"metric":"length","min":1,"max":2}}"#,
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "property unsatisfiable on dataset");
    let (s, _, _) = call(&app, "POST", "/rollout", r#"{"style_index":100}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(
        &app,
        "POST",
        "/rollout",
        r#"{"style_index":1,"property":{"metric":"length","min":0,"max":500}}"#,
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "POST", "/rollout", "{not json").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn step_frames_clamp_and_errors_keep_the_session() {
    let app = app(false, None);
    let (_, _, v) = call(&app, "POST", "/session", "").await;
    let id = v["id"].as_u64().unwrap();
    let addr = spawn(app.clone()).await;
    let mut ws = connect(addr, id).await;

    let r = step(&mut ws, 2.0, 0.0).await;
    assert_eq!(r["clamped_a"], json!([1.0, 0.0]));
    assert_eq!(r["done"], false);
    let after_first = r["s"].clone();

    for bad in ["not json", r#"{"a":[1]}"#, r#"{"b":[0,0]}"#, r#"{"a":[0,0],"x":1}"#] {
        let e = send(&mut ws, bad).await;
        assert!(e["error"].is_string(), "{bad}: {e}");
    }
    let (_, _, state) = call(&app, "GET", &format!("/session/{id}/state"), "").await;
    assert_eq!(state["s"], after_first);
    assert_eq!(state["steps"], 1);

    let r = step(&mut ws, -0.5, -3.0).await;
    assert_eq!(r["clamped_a"], json!([-0.5, -1.0]));
    let (_, _, state) = call(&app, "GET", &format!("/session/{id}/state"), "").await;
    assert_eq!(state["steps"], 2);
    assert_eq!(state["recorded"], 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_session_socket_is_refused() {
    let addr = spawn(app(false, None)).await;
    assert!(tokio_tungstenite::connect_async(format!("ws://{addr}/session/42/step"))
        .await
        .is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn recorded_episode_is_appended_and_trainable() {
    let dir = TempDir::new().unwrap();
    let record = dir.path().join("human.jsonl");
    let app = app(false, Some(record.clone()));
    let (_, _, v) = call(&app, "POST", "/session", "").await;
    let id = v["id"].as_u64().unwrap();
    let addr = spawn(app.clone()).await;
    let mut ws = connect(addr, id).await;

    let demo = expert(&[6, 4, 1, 0]);
    let mut last = Value::Null;
    for a in &demo.actions {
        last = step(&mut ws, a.dx, a.dy).await;
        assert!(last.get("error").is_none(), "{last}");
    }
    assert_eq!(last["done"], true);
    assert_eq!(last["visited"], json!([6, 4, 1, 0]));
    let e = step(&mut ws, 0.0, 0.0).await;
    assert_eq!(e["error"], "step after done");

    let (s, _, saved) = call(&app, "POST", &format!("/session/{id}/save"), "").await;
    assert_eq!(s, StatusCode::OK, "{saved}");
    assert_eq!(saved["behavior"], "6410");
    assert_eq!(saved["id"], 0);
    let (s, _, _) = call(&app, "POST", &format!("/session/{id}/save"), "").await;
    assert_eq!(s, StatusCode::CONFLICT);

    // A second, shorter episode on the same session after reset.
    let (_, _, v) = call(&app, "POST", &format!("/session/{id}/reset"), "").await;
    assert_eq!(v["recorded"], 0);
    let (s, _, _) = call(&app, "POST", &format!("/session/{id}/save"), "").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let other = expert(&[7, 4, 2, 0]);
    for a in &other.actions {
        step(&mut ws, a.dx, a.dy).await;
    }
    let (_, _, saved) = call(&app, "POST", &format!("/session/{id}/save"), "").await;
    assert_eq!(saved["id"], 1);
    assert_eq!(saved["behavior"], "7420");

    let ds = load_dataset(&record).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.meta.generator, "serve");
    assert_eq!(ds.trajectories[0].states, demo.states);
    assert_eq!(ds.trajectories[0].actions, demo.actions);
    assert_eq!(behavior_of(&ds.trajectories[1]), behavior_of(&other));

    // The recorded file feeds straight into training.
    let out = dir.path().join("train");
    let code = stylebc_cli::run([
        "stylebc",
        "train",
        "--algo",
        "wzbc",
        "--steps",
        "3",
        "--dataset",
        record.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    // A restarted server continues the id sequence.
    let resumed = AppState::new(maze(), EnvConfig::deterministic(), None, None, Some(record.clone())).unwrap();
    let app2 = router(Arc::clone(&resumed), None);
    let (_, _, v) = call(&app2, "POST", "/session", "").await;
    let id2 = v["id"].as_u64().unwrap();
    let addr2 = spawn(app2.clone()).await;
    let mut ws2 = connect(addr2, id2).await;
    step(&mut ws2, 1.0, 0.0).await;
    let (_, _, saved) = call(&app2, "POST", &format!("/session/{id2}/save"), "").await;
    assert_eq!(saved["id"], 2);
    assert_eq!(load_dataset(&record).unwrap().len(), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn save_without_recorder_conflicts() {
    let app = app(false, None);
    let (_, _, v) = call(&app, "POST", "/session", "").await;
    let id = v["id"].as_u64().unwrap();
    let (s, _, v) = call(&app, "POST", &format!("/session/{id}/save"), "").await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("--record"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions_do_not_interfere() {
    let app = app(false, None);
    let (_, _, a) = call(&app, "POST", "/session", "").await;
    let (_, _, b) = call(&app, "POST", "/session", "").await;
    let (ia, ib) = (a["id"].as_u64().unwrap(), b["id"].as_u64().unwrap());
    assert_ne!(ia, ib);
    let addr = spawn(app.clone()).await;

    let left = expert(&[6, 4, 1, 0]);
    let right = expert(&[7, 4, 2, 0]);
    let drive = |id: u64, t: Trajectory| async move {
        let mut ws = connect(addr, id).await;
        let mut states = vec![];
        for a in &t.actions {
            let r = step(&mut ws, a.dx, a.dy).await;
            states.push(r["s"].clone());
            tokio::task::yield_now().await;
        }
        (states, t)
    };
    let (ra, rb) = tokio::join!(
        tokio::spawn(drive(ia, left)),
        tokio::spawn(drive(ib, right))
    );
    for (states, t) in [ra.unwrap(), rb.unwrap()] {
        let want: Vec<Value> = t.states[1..].iter().map(|s| json!([s.x, s.y])).collect();
        assert_eq!(states, want);
    }
    let (_, _, sa) = call(&app, "GET", &format!("/session/{ia}/state"), "").await;
    let (_, _, sb) = call(&app, "GET", &format!("/session/{ib}/state"), "").await;
    assert_eq!(sa["visited"], json!([6, 4, 1, 0]));
    assert_eq!(sb["visited"], json!([7, 4, 2, 0]));
    assert_eq!(sa["recorded"].as_u64().unwrap() as usize, expert(&[6, 4, 1, 0]).len());
    assert_eq!(sb["recorded"].as_u64().unwrap() as usize, expert(&[7, 4, 2, 0]).len());
}

#[tokio::test]
async fn static_directory_is_served() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>studio</h1>").unwrap();
    let state = AppState::new(maze(), EnvConfig::deterministic(), None, None, None).unwrap();
    let app = router(state, Some(dir.path()));
    let req = Request::builder().uri("/index.html").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(&body[..], b"<h1>studio</h1>");
    let (s, _, _) = call(&app, "GET", "/maze", "").await;
    assert_eq!(s, StatusCode::OK);
}
