#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use bfsurf_app::http::{bundled_static_dir, router, AppState};
use bfsurf_app::jobs::JobStore;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const BIN: &str = env!("CARGO_BIN_EXE_bfsurf");

pub fn app(data_dir: &Path) -> (Router, Arc<JobStore>) {
    let store = JobStore::open(data_dir, 2).expect("store opens");
    let r = router(AppState { store: store.clone() }, Some(bundled_static_dir()));
    (r, store)
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes)
            .unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.bytes)))
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.bytes.clone()).expect("utf-8 body")
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.expect("infallible service");
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        bytes,
    }
}

pub async fn post(app: &Router, path: &str, body: &Value) -> Reply {
    post_raw(app, path, serde_json::to_vec(body).unwrap()).await
}

pub async fn post_raw(app: &Router, path: &str, body: Vec<u8>) -> Reply {
    let req = Request::post(path)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    send(app, req).await
}

pub async fn get(app: &Router, path: &str) -> Reply {
    send(app, Request::get(path).body(Body::empty()).unwrap()).await
}

/// Polls a job until it finishes and returns its final record.
pub async fn wait_for(app: &Router, job_id: &str) -> Value {
    let start = Instant::now();
    loop {
        let r = get(app, &format!("/v1/jobs/{job_id}")).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        let record = r.json();
        match record["status"].as_str().unwrap() {
            "done" | "failed" => return record,
            "queued" | "running" => {}
            other => panic!("unknown status {other}"),
        }
        assert!(start.elapsed() < Duration::from_secs(600), "job {job_id} never finished");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

/// Runs the real binary in `dir`.
pub fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

pub fn cli_ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}
