use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use coopbo::planner::RewardConfig;
use coopbo::session::{router, AppState, ServiceConfig};

fn small_planner() -> RewardConfig {
    RewardConfig {
        n_root_samples: 2,
        n_rollouts_per_action: 1,
        ..RewardConfig::default()
    }
}

fn app(dir: &std::path::Path) -> Router {
    let cfg = ServiceConfig {
        store_dir: dir.to_path_buf(),
        planner: small_planner(),
        ..ServiceConfig::default()
    };
    router(AppState::new(&cfg).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()))
    };
    (status, value)
}

async fn create(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

fn greedy(seed: u64) -> Value {
    json!({"policy": "greedy_ai", "T": 3, "user_prior": "global", "seed": seed})
}

#[tokio::test]
async fn create_returns_fresh_ids_and_grid_shape() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, a) = call(&app, "POST", "/sessions", Some(greedy(1))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(a["nx"], 50);
    assert_eq!(a["ny"], 50);
    assert_eq!(a["rounds"], 3);
    assert_eq!(a["user_prior"].as_array().unwrap().len(), 5);
    let b = create(&app, greedy(1)).await;
    assert_ne!(a["id"].as_str().unwrap(), b);
}

#[tokio::test]
async fn create_validates_the_request() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let cases = [
        json!({"policy": "greedy_ai", "T": 0, "user_prior": "none"}),
        json!({"policy": "random_full", "user_prior": "none"}),
        json!({"policy": "strategic_ai_known_user", "user_prior": "none"}),
        json!({"policy": "greedy_ai", "user_prior": "none", "colour": "red"}),
        json!({"policy": "teleport", "user_prior": "none"}),
    ];
    for body in cases {
        let (status, v) = call(&app, "POST", "/sessions", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body} -> {v}");
        assert!(v["code"].is_string() && v["message"].is_string(), "{v}");
    }
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"policy": "greedy_ai", "user_prior": "none"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(v["user_prior"].as_array().unwrap().is_empty());
    assert_eq!(v["rounds"], 20);
}

#[tokio::test]
async fn moves_follow_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, greedy(7)).await;

    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/user-move"), Some(json!({"y": 3}))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");
    assert_eq!(v["code"], "wrong_phase");

    let (status, st) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(st["phase"], "awaiting_ai_move");
    assert!(st["history"].as_array().unwrap().is_empty());
    assert!(st["true_grid"].is_null());
    assert!(st["final_score"].is_null());

    for round in 1..=3 {
        let (status, mv) = call(&app, "POST", &format!("/sessions/{id}/ai-move"), None).await;
        assert_eq!(status, StatusCode::OK, "{mv}");
        assert!(mv["ix"].as_u64().unwrap() < 50);
        assert_eq!(mv["round"], round);

        let (status, v) = call(&app, "POST", &format!("/sessions/{id}/ai-move"), None).await;
        assert_eq!(status, StatusCode::CONFLICT, "{v}");

        let (status, st) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(st["pending_ix"], mv["ix"]);
        assert!(st["true_grid"].is_null());

        for y in [-1, 50] {
            let (status, v) = call(&app, "POST", &format!("/sessions/{id}/user-move"), Some(json!({"y": y}))).await;
            assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
        }
        let (status, v) = call(&app, "POST", &format!("/sessions/{id}/user-move"), Some(json!({"why": 1}))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");

        let (status, out) = call(&app, "POST", &format!("/sessions/{id}/user-move"), Some(json!({"y": 10 + round}))).await;
        assert_eq!(status, StatusCode::OK, "{out}");
        assert_eq!(out["round"], round);
        assert_eq!(out["finished"], round == 3);
        assert!(out["z"].as_f64().unwrap().is_finite());
    }

    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/ai-move"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/user-move"), Some(json!({"y": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (_, st) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st["phase"], "finished");
    let history = st["history"].as_array().unwrap();
    assert_eq!(history.len(), 3);
    let grid = st["true_grid"].as_array().unwrap();
    assert_eq!(grid.len(), 50);
    assert_eq!(grid[0].as_array().unwrap().len(), 50);

    // Scores are the running best of the true values at the queried cells.
    let mut best = f64::NEG_INFINITY;
    for (t, h) in history.iter().enumerate() {
        let (x, y) = (h["x"].as_u64().unwrap() as usize, h["y"].as_u64().unwrap() as usize);
        assert_eq!(y, 11 + t);
        best = best.max(grid[x][y].as_f64().unwrap());
        assert_eq!(st["scores"][t].as_f64().unwrap(), best);
    }
    assert_eq!(st["final_score"].as_f64().unwrap(), best);
}

#[tokio::test]
async fn unknown_sessions_are_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for uri in ["/sessions/nope", "/sessions/..%2Fetc"] {
        let (status, v) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}: {v}");
    }
    let (status, _) = call(&app, "POST", "/sessions/nope/ai-move", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_ai_moves_get_one_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({"policy": "strategic_ai", "T": 2, "user_prior": "none", "seed": 3})).await;
    let uri = format!("/sessions/{id}/ai-move");
    let (a, b) = tokio::join!(call(&app, "POST", &uri, None), call(&app, "POST", &uri, None));
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
}

#[tokio::test]
async fn strategic_sessions_play_from_a_cold_start() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({"policy": "strategic_ai", "T": 2, "user_prior": "local", "ai_prior": "none", "seed": 11})).await;
    for round in 1..=2 {
        let (status, mv) = call(&app, "POST", &format!("/sessions/{id}/ai-move"), None).await;
        assert_eq!(status, StatusCode::OK, "{mv}");
        let (status, out) = call(&app, "POST", &format!("/sessions/{id}/user-move"), Some(json!({"y": 25}))).await;
        assert_eq!(status, StatusCode::OK, "{out}");
        assert_eq!(out["round"], round);
    }
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let first = app(dir.path());
    let id = create(&first, greedy(5)).await;
    call(&first, "POST", &format!("/sessions/{id}/ai-move"), None).await;
    call(&first, "POST", &format!("/sessions/{id}/user-move"), Some(json!({"y": 4}))).await;
    let (_, mv) = call(&first, "POST", &format!("/sessions/{id}/ai-move"), None).await;
    let (_, before) = call(&first, "GET", &format!("/sessions/{id}"), None).await;
    drop(first);

    let second = app(dir.path());
    let (status, after) = call(&second, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    assert_eq!(after["pending_ix"], mv["ix"]);
    let (status, _) = call(&second, "POST", &format!("/sessions/{id}/ai-move"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, out) = call(&second, "POST", &format!("/sessions/{id}/user-move"), Some(json!({"y": 9}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(out["round"], 2);
}
