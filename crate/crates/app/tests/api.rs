mod common;

use axum::http::StatusCode;
use common::*;
use serde_json::{json, Value};

fn entries(doc: &Value) -> Vec<(String, f64)> {
    doc["methods"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| (m["method"].as_str().unwrap().to_string(), m["log_bf"].as_f64().unwrap()))
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn bf_returns_four_methods() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = post(&app, "/v1/bf", &json!({"mu": 0.0, "phi": 1.0, "a": 1.0, "b": 1.0})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.content_type.as_deref(), Some("application/json"));
    let doc = r.json();
    assert_eq!(doc["n"], 30);
    let methods = entries(&doc);
    let names: Vec<&str> = methods.iter().map(|(m, _)| m.as_str()).collect();
    assert_eq!(names, ["closed_quadrature", "zellner_siow", "bic", "fractional"]);
    assert!(methods.iter().all(|(_, v)| v.is_finite()));
}

#[tokio::test(flavor = "multi_thread")]
async fn bf_accepts_inline_points_and_csv_alike() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let x = [0.1, 0.5, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 1.0];
    let y = [0.4, 1.1, 2.6, 0.2, 2.0, 0.9, 1.7, 1.5, 1.2, 2.9];
    let csv: String = std::iter::once("x,y\n".to_string())
        .chain(x.iter().zip(&y).map(|(a, b)| format!("{a},{b}\n")))
        .collect();
    let a = post(&app, "/v1/bf", &json!({"data": {"x": x, "y": y}})).await;
    let b = post(&app, "/v1/bf", &json!({"data": {"csv": csv}})).await;
    assert_eq!(a.status, StatusCode::OK, "{}", a.text());
    assert_eq!(a.bytes, b.bytes);
    assert_eq!(a.json()["n"], 10);
}

#[tokio::test(flavor = "multi_thread")]
async fn nonpositive_phi_is_rejected_naming_phi() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    for phi in [0.0, -2.0] {
        let r = post(&app, "/v1/bf", &json!({"phi": phi})).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST);
        assert_eq!(r.json()["field"], "phi", "{}", r.text());
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_bodies_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = post(&app, "/v1/bf", &json!({"phi": "wide"})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["field"], "phi");

    let r = post(&app, "/v1/simulate", &json!({"n": 20, "sigma2": 1.0})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["field"], "beta", "{}", r.text());

    let r = post(&app, "/v1/surface", &json!({"grid": "phi:log10:-1:1:3"})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["field"], "evaluator");

    let r = post_raw(&app, "/v1/bf", b"{not json".to_vec()).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.json()["error"].is_string());
}

#[tokio::test(flavor = "multi_thread")]
async fn computation_errors_are_422_with_module_text() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    // y = 2x exactly: zero residual sum of squares.
    let r = post(&app, "/v1/bf", &json!({"data": {"x": [1.0, 2.0, 3.0, 4.0], "y": [2.0, 4.0, 6.0, 8.0]}})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY, "{}", r.text());
    assert!(r.json()["error"].as_str().unwrap().contains("perfect fit"));
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_csv_data_is_a_400_on_data() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = post(&app, "/v1/bf", &json!({"data": {"csv": "x,y\n1,2\n3,oops\n"}})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST, "{}", r.text());
    assert_eq!(r.json()["field"], "data");
}

#[tokio::test(flavor = "multi_thread")]
async fn surface_job_reaches_done_with_900_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let req = json!({"evaluator": "reg_closed", "grid": "phi:log10:-3:3:30,mu:linear:-3:3:30"});
    let r = post(&app, "/v1/surface", &req).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.text());
    let record = r.json();
    let id = record["job_id"].as_str().unwrap().to_string();
    assert_eq!(record["kind"], "sweep");
    assert!(["queued", "running", "done"].contains(&record["status"].as_str().unwrap()));

    let done = wait_for(&app, &id).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["progress"], 1.0);
    let locator = done["result"].as_str().unwrap();
    assert_eq!(locator, format!("/v1/jobs/{id}/result"));

    let result = get(&app, locator).await;
    assert_eq!(result.status, StatusCode::OK);
    assert_eq!(result.content_type.as_deref(), Some("text/csv"));
    let text = result.text();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "phi,mu,replicate,log_bf,std_err,class");
    assert_eq!(lines.count(), 900);

    // Same request, same job: no recomputation.
    let again = post(&app, "/v1/surface", &req).await;
    assert_eq!(again.status, StatusCode::ACCEPTED);
    assert_eq!(again.json()["job_id"], id.as_str());
    assert_eq!(again.json()["status"], "done");
}

#[tokio::test(flavor = "multi_thread")]
async fn json_surface_results_are_served_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = post(
        &app,
        "/v1/surface",
        &json!({"evaluator": "reg_bic", "grid": "phi:log10:-1:1:4", "format": "json"}),
    )
    .await;
    let id = r.json()["job_id"].as_str().unwrap().to_string();
    assert_eq!(wait_for(&app, &id).await["status"], "done");
    let result = get(&app, &format!("/v1/jobs/{id}/result")).await;
    assert_eq!(result.content_type.as_deref(), Some("application/json"));
    assert!(result.json().is_object() || result.json().is_array());
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_surface_requests_fail_before_queueing() {
    let dir = tempfile::tempdir().unwrap();
    let (app, store) = app(dir.path());
    let r = post(&app, "/v1/surface", &json!({"evaluator": "reg_magic", "grid": "phi:log10:-1:1:3"})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST, "{}", r.text());
    assert_eq!(r.json()["field"], "evaluator");
    let r = post(&app, "/v1/surface", &json!({"evaluator": "reg_closed", "grid": "phi:log10:-1:1:0"})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST, "{}", r.text());
    assert!(store.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_jobs_and_endpoints_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    for path in ["/v1/jobs/deadbeef", "/v1/jobs/deadbeef/result", "/v1/nothing"] {
        let r = get(&app, path).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{path}");
        assert!(r.json()["error"].is_string());
    }
    let r = post(&app, "/v1/surrogate/predict", &json!({"fit_job": "deadbeef", "grid": "x:linear:0:1:2"})).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn simulate_is_deterministic_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let req = json!({"n": 25, "beta": 1.5, "sigma2": 0.5, "seed": 4});
    let a = post(&app, "/v1/simulate", &req).await;
    let b = post(&app, "/v1/simulate", &req).await;
    assert_eq!(a.status, StatusCode::OK);
    assert_eq!(a.bytes, b.bytes);
    let doc = a.json();
    assert_eq!(doc["x"].as_array().unwrap().len(), 25);
    assert_eq!(doc["y"].as_array().unwrap().len(), 25);

    let mut csv_req = req.clone();
    csv_req["format"] = json!("csv");
    let c = post(&app, "/v1/simulate", &csv_req).await;
    assert_eq!(c.content_type.as_deref(), Some("text/csv"));
    assert_eq!(c.text().lines().count(), 26);
}

#[tokio::test(flavor = "multi_thread")]
async fn slices_cover_every_hyperparameter() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = post(&app, "/v1/hlm/slices", &json!({"points": 5})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let doc = r.json();
    assert!(doc["center"].is_object());
    let slices = doc["slices"].as_array().unwrap();
    assert!(slices.len() >= 5, "{doc}");

    let bad = post(&app, "/v1/hlm/slices", &json!({"data": {"hlm_csv": "school,ses,mathscore\n1,0.1,50\n"}})).await;
    assert!(bad.status.is_client_error(), "{}", bad.text());
}

#[tokio::test(flavor = "multi_thread")]
async fn surrogate_fit_and_predict_through_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let sweep = post(
        &app,
        "/v1/surface",
        &json!({"evaluator": "reg_closed", "grid": "phi:log10:-2:2:6,mu:linear:-2:2:6"}),
    )
    .await;
    let sweep_id = sweep.json()["job_id"].as_str().unwrap().to_string();

    // Fitting an unfinished or unknown sweep never queues a fit.
    let early = post(&app, "/v1/surrogate/fit", &json!({"job_id": "0000"})).await;
    assert_eq!(early.status, StatusCode::NOT_FOUND);

    assert_eq!(wait_for(&app, &sweep_id).await["status"], "done");
    let fit = post(&app, "/v1/surrogate/fit", &json!({"job_id": sweep_id})).await;
    assert_eq!(fit.status, StatusCode::ACCEPTED, "{}", fit.text());
    assert_eq!(fit.json()["kind"], "fit");
    let fit_id = fit.json()["job_id"].as_str().unwrap().to_string();
    let done = wait_for(&app, &fit_id).await;
    assert_eq!(done["status"], "done", "{done}");

    let pred = post(
        &app,
        "/v1/surrogate/predict",
        &json!({"fit_job": fit_id, "grid": "phi:log10:-2:2:4,mu:linear:-2:2:3"}),
    )
    .await;
    assert_eq!(pred.status, StatusCode::OK, "{}", pred.text());
    let doc = pred.json();
    assert_eq!(doc["dims"], json!(["phi", "mu"]));
    assert_eq!(doc["mean"].as_array().unwrap().len(), 12);
    assert!(doc["sd_mean"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap() >= 0.0));

    // A fit document can also be sent inline.
    let fit_doc = get(&app, &format!("/v1/jobs/{fit_id}/result")).await.json();
    let inline = post(
        &app,
        "/v1/surrogate/predict",
        &json!({"fit": fit_doc, "grid": "phi:log10:-2:2:4,mu:linear:-2:2:3"}),
    )
    .await;
    assert_eq!(inline.bytes, pred.bytes);

    let wrong = post(&app, "/v1/surrogate/predict", &json!({"fit_job": sweep_id, "grid": "phi:log10:-2:2:2"})).await;
    assert_eq!(wrong.status, StatusCode::BAD_REQUEST);
    assert_eq!(wrong.json()["field"], "fit_job");
}

/// Trapezoid rule over a curve.
fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

#[tokio::test(flavor = "multi_thread")]
async fn prior_density_curves_match_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = get(&app, "/v1/priors/density?mu=1&phi=4&a=2&b=3&points=801").await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let doc = r.json();
    let xs = |c: &str, k: &str| -> Vec<f64> {
        doc[c][k].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
    };
    let (bx, bd) = (xs("beta", "x"), xs("beta", "density"));
    let (gx, gd) = (xs("gamma", "x"), xs("gamma", "density"));
    assert_eq!(bx.len(), 801);
    assert_eq!(gx.len(), 801);
    // N(1, 1/4) and Gamma(shape 2, rate 3) written out by hand.
    for (x, d) in bx.iter().zip(&bd) {
        let want = (4.0 / (2.0 * std::f64::consts::PI)).sqrt() * (-2.0 * (x - 1.0) * (x - 1.0)).exp();
        assert!((d - want).abs() < 1e-12 * want.max(1.0), "beta {x}");
    }
    for (x, d) in gx.iter().zip(&gd) {
        let want = 9.0 * x * (-3.0 * x).exp();
        assert!((d - want).abs() < 1e-12, "gamma {x}");
    }
    // ±4 sd for the slope; the precision grid covers nearly all its mass.
    assert!((trapezoid(&bx, &bd) - 0.999_936_657).abs() < 1e-5);
    assert!(trapezoid(&gx, &gd) > 0.999 && trapezoid(&gx, &gd) < 1.0);

    let bad = get(&app, "/v1/priors/density?phi=-1").await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad.json()["field"], "phi");
    let bad = get(&app, "/v1/priors/density?points=many").await;
    assert_eq!(bad.json()["field"], "points");
    let bad = get(&app, "/v1/priors/density?points=1").await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn static_ui_is_served_at_root() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let r = get(&app, "/").await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.content_type.as_deref().unwrap().starts_with("text/html"));
    assert!(r.text().contains("/v1/"));
    let r = get(&app, "/index.html").await;
    assert_eq!(r.status, StatusCode::OK);
}
