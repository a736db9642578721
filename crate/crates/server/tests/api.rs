use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde_json::{json, Value};
use splatgym_core::config::EngineConfig;
use splatgym_core::engine::make_env;
use splatgym_core::rollout::{rollout, RolloutOptions, ScriptedPolicy};
use splatgym_core::synth::{flat_scene, room_scene, write_scene_set};
use splatgym_server::AppState;

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: std::path::PathBuf,
    base: String,
    http: reqwest::Client,
}

async fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_scene_set(
        dir.path(),
        &[flat_scene("flat", 1500, 3.0, 1), room_scene("room", 1500, 2)],
    )
    .unwrap();
    let (addr, _) = splatgym_server::spawn(([127, 0, 0, 1], 0).into(), AppState::new(2))
        .await
        .unwrap();
    Fixture {
        _dir: dir,
        manifest,
        base: format!("http://{addr}"),
        http: reqwest::Client::new(),
    }
}

impl Fixture {
    async fn post(&self, path: &str, body: Value) -> (u16, reqwest::Response) {
        let r = self
            .http
            .post(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r)
    }

    fn small_config(&self) -> Value {
        let mut c = EngineConfig::default();
        c.sensor.width = 32;
        c.sensor.height = 24;
        serde_json::to_value(c).unwrap()
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn health_reports_default_workers() {
    let f = fixture().await;
    let v: Value = f
        .http
        .get(format!("{}/health", f.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["default_workers"], 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn validate_returns_one_report_per_scene() {
    let f = fixture().await;
    let (status, r) = f.post("/validate", json!({ "manifest": f.manifest })).await;
    assert_eq!(status, 200);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["reports"].as_array().unwrap().len(), 2);

    let (status, r) = f.post("/validate", json!({ "manifest": "/no/such/scenes.toml" })).await;
    assert_eq!(status, 404);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["kind"], "io");
}

#[tokio::test(flavor = "multi_thread")]
async fn render_returns_png_pair() {
    let f = fixture().await;
    let body = json!({
        "manifest": f.manifest, "scene": "room",
        "eye": [0.0, 0.0, 0.5], "target": [2.0, 0.0, 0.3],
        "width": 40, "height": 30, "hfov_deg": 90.0
    });
    let (status, r) = f.post("/render", body).await;
    assert_eq!(status, 200);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["scene_id"], "room");
    for key in ["rgb_png", "depth_png"] {
        let bytes = B64.decode(v[key].as_str().unwrap()).unwrap();
        assert!(bytes.starts_with(PNG_MAGIC), "{key}");
    }
    let d = v["depth_max"].as_f64().unwrap();
    assert!(d > 1.0 && d < 20.0, "depth_max {d}");
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_requests_get_json_errors() {
    let f = fixture().await;
    let body = json!({
        "manifest": f.manifest, "eye": [0.0, 0.0, 1.0], "target": [0.0, 0.0, 3.0],
        "width": 8, "height": 8, "hfov_deg": 90.0
    });
    let (status, r) = f.post("/render", body).await;
    assert_eq!(status, 400);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["kind"], "invalid_argument");

    let (status, r) = f.post("/render", json!({ "manifest": 3 })).await;
    assert!((400..500).contains(&status));
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["kind"], "invalid_argument");
}

#[tokio::test(flavor = "multi_thread")]
async fn rollout_stream_matches_a_local_run() {
    let f = fixture().await;
    let config = f.small_config();
    let body = json!({
        "manifest": f.manifest, "n_envs": 3, "steps": 12, "policy": "random",
        "config": config, "overrides": { "seed": 4, "workers": 1 }
    });
    let (status, r) = f.post("/rollout", body).await;
    assert_eq!(status, 200);
    assert_eq!(r.headers()["content-type"], "application/x-ndjson");
    let text = r.text().await.unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3 * 12 + 1);
    let end: Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert_eq!(end["summary"]["steps"], 12);

    let mut c: EngineConfig = serde_json::from_value(config).unwrap();
    c.seed = 4;
    c.workers = Some(1);
    let mut env = make_env(&f.manifest, 3, c).unwrap();
    let mut local = Vec::new();
    let opts = RolloutOptions {
        steps: 12,
        policy: ScriptedPolicy::Random,
        seed: 4,
        frames: None,
    };
    rollout(&mut env, &opts, &mut local).unwrap();
    let local = String::from_utf8(local).unwrap();
    assert_eq!(local.lines().collect::<Vec<_>>(), lines[..lines.len() - 1]);
}

#[tokio::test(flavor = "multi_thread")]
async fn rollout_setup_errors_are_plain_responses() {
    let f = fixture().await;
    let body = json!({
        "manifest": f.manifest, "n_envs": 2, "steps": 5, "policy": "zero",
        "overrides": { "render_every": 7 }
    });
    let (status, r) = f.post("/rollout", body).await;
    assert_eq!(status, 400);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["kind"], "config");
}

#[tokio::test(flavor = "multi_thread")]
async fn bench_streams_one_report_per_point() {
    let f = fixture().await;
    let body = json!({
        "manifest": f.manifest,
        "sweep": { "n_envs": [1, 2], "render_every": [5], "blur_k": [1], "workers": [1], "steps": 3, "warmup": 0 },
        "config": f.small_config()
    });
    let (status, r) = f.post("/bench", body).await;
    assert_eq!(status, 200);
    let text = r.text().await.unwrap();
    let reports: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1]["report"]["n_envs"], 2);
    assert!(reports[0]["report"]["steps_per_second"].as_f64().unwrap() > 0.0);

    let empty = json!({
        "manifest": f.manifest,
        "sweep": { "n_envs": [], "render_every": [5], "blur_k": [1], "workers": [1], "steps": 3, "warmup": 0 }
    });
    assert_eq!(f.post("/bench", empty).await.0, 400);
}

#[tokio::test(flavor = "multi_thread")]
async fn session_lifecycle() {
    let f = fixture().await;
    let (status, r) = f
        .post(
            "/sessions",
            json!({ "manifest": f.manifest, "n_envs": 2, "config": f.small_config() }),
        )
        .await;
    assert_eq!(status, 201);
    let info: Value = r.json().await.unwrap();
    let id = info["id"].as_str().unwrap().to_string();
    let j = info["n_joints"].as_u64().unwrap() as usize;
    let d = info["proprio_dim"].as_u64().unwrap() as usize;
    assert_eq!(info["command_dim"], 4);

    let (status, r) = f
        .post(&format!("/sessions/{id}/step"), json!({ "actions": [0.0, 0.0, 0.0] }))
        .await;
    assert_eq!(status, 422);
    assert_eq!(r.json::<Value>().await.unwrap()["kind"], "shape");

    let actions = vec![0.1f32; 2 * j];
    let (status, r) = f
        .post(&format!("/sessions/{id}/step"), json!({ "actions": actions }))
        .await;
    assert_eq!(status, 200);
    let s: Value = r.json().await.unwrap();
    assert_eq!(s["step"], 1);
    assert_eq!(s["proprio"].as_array().unwrap().len(), 2 * d);
    assert_eq!(s["info"]["envs"].as_array().unwrap().len(), 2);

    let fr: Value = f
        .http
        .get(format!("{}/sessions/{id}/frame", f.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(B64.decode(fr["rgb"].as_str().unwrap()).unwrap().len(), 2 * 24 * 32 * 3);
    assert_eq!(
        B64.decode(fr["depth"].as_str().unwrap()).unwrap().len(),
        2 * 24 * 32 * 4
    );
    assert_eq!(fr["frame_steps"], json!([0, 0]));

    let (status, r) = f.post(&format!("/sessions/{id}/reset"), json!(null)).await;
    assert_eq!(status, 200);
    assert_eq!(r.json::<Value>().await.unwrap()["rendered"], json!([true, true]));

    let del = |id: String| {
        let http = f.http.clone();
        let url = format!("{}/sessions/{id}", f.base);
        async move { http.delete(url).send().await.unwrap().status().as_u16() }
    };
    assert_eq!(del(id.clone()).await, 204);
    assert_eq!(del(id.clone()).await, 404);
    let (status, _) = f
        .post(&format!("/sessions/{id}/step"), json!({ "actions": actions }))
        .await;
    assert_eq!(status, 404);
}
