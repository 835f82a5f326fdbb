//! The CLI and the API share one serialization path: the same inputs give
//! byte-identical artifacts from both front ends.

mod common;

use std::path::Path;

use axum::http::StatusCode;
use axum::Router;
use common::*;
use serde_json::json;

const DATA: &str = "x,y\n\
0.05,0.31\n0.12,0.02\n0.18,0.77\n0.25,0.41\n0.33,1.20\n0.38,0.66\n\
0.45,1.51\n0.52,1.02\n0.58,1.73\n0.64,1.34\n0.71,2.05\n0.77,1.62\n\
0.83,2.41\n0.88,1.97\n0.94,2.66\n0.99,2.18\n";

const GRID: &str = "phi:log10:-2:2:6,mu:linear:-2:2:5";

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

async fn finished_result(app: &Router, record: &serde_json::Value) -> (String, Vec<u8>) {
    let id = record["job_id"].as_str().expect("job id").to_string();
    let done = wait_for(app, &id).await;
    assert_eq!(done["status"], "done", "{done}");
    let r = get(app, &format!("/v1/jobs/{id}/result")).await;
    assert_eq!(r.status, StatusCode::OK);
    (id, r.bytes)
}

#[tokio::test(flavor = "multi_thread")]
async fn simulate_matches() {
    let work = tempfile::tempdir().unwrap();
    let (app, _) = app(&work.path().join("data"));
    let args = ["simulate", "--n", "25", "--alpha", "-0.5", "--beta", "1.5", "--sigma2", "0.5", "--seed", "4"];
    let req = json!({"n": 25, "alpha": -0.5, "beta": 1.5, "sigma2": 0.5, "seed": 4});

    let mut cli_json = args.to_vec();
    cli_json.extend(["--format", "json"]);
    let api = post(&app, "/v1/simulate", &req).await;
    assert_eq!(cli_ok(work.path(), &cli_json), api.bytes);

    let mut cli_csv = args.to_vec();
    cli_csv.extend(["--out", "sim.csv"]);
    cli_ok(work.path(), &cli_csv);
    let mut csv_req = req.clone();
    csv_req["format"] = json!("csv");
    let api = post(&app, "/v1/simulate", &csv_req).await;
    assert_eq!(read(work.path(), "sim.csv"), api.bytes);
}

#[tokio::test(flavor = "multi_thread")]
async fn bf_json_matches() {
    let work = tempfile::tempdir().unwrap();
    std::fs::write(work.path().join("data.csv"), DATA).unwrap();
    let (app, _) = app(&work.path().join("data"));
    let cli = cli_ok(
        work.path(),
        &["bf", "--data", "data.csv", "--mu", "-1", "--phi", "0.5", "--a", "2", "--b", "3", "--json"],
    );
    let api = post(
        &app,
        "/v1/bf",
        &json!({"data": {"csv": DATA}, "mu": -1.0, "phi": 0.5, "a": 2.0, "b": 3.0}),
    )
    .await;
    assert_eq!(api.status, StatusCode::OK);
    assert_eq!(cli, api.bytes);

    // Defaults on both sides: the bundled demo data.
    assert_eq!(cli_ok(work.path(), &["bf", "--json"]), post(&app, "/v1/bf", &json!({})).await.bytes);
}

#[tokio::test(flavor = "multi_thread")]
async fn surface_fit_and_predict_match() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    std::fs::write(dir.join("data.csv"), DATA).unwrap();
    let (app, store) = app(&dir.join("data"));

    cli_ok(
        dir,
        &["surface", "--evaluator", "reg_closed", "--data", "data.csv", "--grid", GRID, "--out", "surf.csv"],
    );
    let sweep = post(
        &app,
        "/v1/surface",
        &json!({"evaluator": "reg_closed", "data": {"csv": DATA}, "grid": GRID}),
    )
    .await;
    assert_eq!(sweep.status, StatusCode::ACCEPTED);
    let (sweep_id, api_surface) = finished_result(&app, &sweep.json()).await;
    assert_eq!(read(dir, "surf.csv"), api_surface);
    // Manifests agree on everything but the measured wall time.
    let manifest = |bytes: Vec<u8>| {
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert!(v["eval_seconds_total"].as_f64().unwrap() >= 0.0);
        v.as_object_mut().unwrap().remove("eval_seconds_total");
        v
    };
    assert_eq!(
        manifest(read(dir, "surf.csv.manifest.json")),
        manifest(store.file(&sweep_id, "manifest.json").unwrap())
    );

    cli_ok(dir, &["fit", "--in", "surf.csv", "--out", "fit.json"]);
    let fit = post(&app, "/v1/surrogate/fit", &json!({"job_id": sweep_id})).await;
    assert_eq!(fit.status, StatusCode::ACCEPTED, "{}", fit.text());
    let (fit_id, api_fit) = finished_result(&app, &fit.json()).await;
    assert_eq!(read(dir, "fit.json"), api_fit);

    // The same surface sent inline with its box fits identically.
    let inline = post(
        &app,
        "/v1/surrogate/fit",
        &json!({"surface_csv": String::from_utf8(api_surface).unwrap(), "box": "phi:log10:-2:2,mu:linear:-2:2"}),
    )
    .await;
    let (_, inline_fit) = finished_result(&app, &inline.json()).await;
    assert_eq!(inline_fit, api_fit);

    let query = "phi:log10:-1.5:1.5:4,mu:linear:-1:1:3";
    let cli = cli_ok(dir, &["predict", "--fit", "fit.json", "--grid", query, "--format", "json"]);
    let api = post(&app, "/v1/surrogate/predict", &json!({"fit_job": fit_id, "grid": query})).await;
    assert_eq!(api.status, StatusCode::OK, "{}", api.text());
    assert_eq!(cli, api.bytes);

    cli_ok(dir, &["predict", "--fit", "fit.json", "--grid", query, "--out", "pred.csv"]);
    let api = post(
        &app,
        "/v1/surrogate/predict",
        &json!({"fit_job": fit_id, "grid": query, "format": "csv"}),
    )
    .await;
    assert_eq!(read(dir, "pred.csv"), api.bytes);

    std::fs::write(dir.join("points.csv"), "mu,phi\n0.5,0.2\n-1.0,3.0\n").unwrap();
    let cli = cli_ok(dir, &["predict", "--fit", "fit.json", "--points", "points.csv"]);
    let api = post(
        &app,
        "/v1/surrogate/predict",
        &json!({"fit_job": fit_id, "points": [[0.2, 0.5], [3.0, -1.0]], "format": "csv"}),
    )
    .await;
    assert_eq!(cli, api.bytes);
}

#[tokio::test(flavor = "multi_thread")]
async fn noisy_surface_matches_for_equal_seeds() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    let (app, _) = app(&dir.join("data"));
    let grid = "phi:log10:-1:1:3";
    cli_ok(
        dir,
        &[
            "surface", "--evaluator", "reg_noisy", "--n-draws", "1000", "--seed", "11", "--grid", grid,
            "--replicates", "2", "--out", "noisy.json",
        ],
    );
    let sweep = post(
        &app,
        "/v1/surface",
        &json!({"evaluator": "reg_noisy", "n_draws": 1000, "seed": 11, "grid": grid, "replicates": 2, "format": "json"}),
    )
    .await;
    let (_, api) = finished_result(&app, &sweep.json()).await;
    assert_eq!(read(dir, "noisy.json"), api);
}

#[tokio::test(flavor = "multi_thread")]
async fn slices_match() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    let (app, _) = app(&dir.join("data"));
    let cli = cli_ok(dir, &["slices", "--points", "5", "--synthetic-seed", "3", "--format", "json"]);
    let api = post(&app, "/v1/hlm/slices", &json!({"points": 5, "data": {"hlm_synthetic": 3}})).await;
    assert_eq!(api.status, StatusCode::OK, "{}", api.text());
    assert_eq!(cli, api.bytes);

    cli_ok(dir, &["simulate", "--hlm", "--seed", "3", "--out", "schools.csv"]);
    let schools = String::from_utf8(read(dir, "schools.csv")).unwrap();
    cli_ok(dir, &["slices", "--points", "5", "--data", "schools.csv", "--out", "slices.csv"]);
    let api = post(
        &app,
        "/v1/hlm/slices",
        &json!({"points": 5, "data": {"hlm_csv": schools}, "format": "csv"}),
    )
    .await;
    assert_eq!(read(dir, "slices.csv"), api.bytes);
}
