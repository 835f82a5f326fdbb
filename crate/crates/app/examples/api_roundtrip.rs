//! Drives the HTTP API in process: a synchronous Bayes factor request, then
//! an asynchronous sweep polled to completion.
//!
//! `cargo run --example api_roundtrip -p bfsurf-app`

use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use bfsurf_app::http::{router, AppState};
use bfsurf_app::jobs::JobStore;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, req: Request<Body>) -> (u16, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.expect("infallible");
    let status = resp.status().as_u16();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn post(app: &Router, path: &str, body: Value) -> (u16, Value) {
    let req = Request::post(path)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = call(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data_dir = std::env::temp_dir().join("bfsurf-api-roundtrip");
    let store = JobStore::open(&data_dir, 2)?;
    let app = router(AppState { store }, None);

    let (status, doc) = post(&app, "/v1/bf", json!({"phi": 1.0})).await;
    println!("POST /v1/bf -> {status}");
    for m in doc["methods"].as_array().unwrap() {
        println!("  {:<18} {:>10.4}", m["method"].as_str().unwrap(), m["log_bf"].as_f64().unwrap());
    }

    let (status, doc) = post(&app, "/v1/bf", json!({"phi": -1.0})).await;
    println!("POST /v1/bf with phi = -1 -> {status} {doc}");

    let (status, record) = post(
        &app,
        "/v1/surface",
        json!({"evaluator": "reg_zs", "grid": "phi:log10:-2:2:20,mu:linear:-2:2:20"}),
    )
    .await;
    let id = record["job_id"].as_str().unwrap().to_string();
    println!("POST /v1/surface -> {status}, job {}", &id[..12]);
    loop {
        let (_, bytes) = call(&app, Request::get(format!("/v1/jobs/{id}")).body(Body::empty())?).await;
        let r: Value = serde_json::from_slice(&bytes)?;
        println!("  status {} progress {:.2}", r["status"], r["progress"].as_f64().unwrap());
        if r["status"] == "done" || r["status"] == "failed" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let (_, csv) = call(&app, Request::get(format!("/v1/jobs/{id}/result")).body(Body::empty())?).await;
    println!("result: {} rows (stored under {})", csv.iter().filter(|&&b| b == b'\n').count() - 1, data_dir.display());
    Ok(())
}
