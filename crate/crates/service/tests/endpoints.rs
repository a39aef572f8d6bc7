use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use wincrt_core::generative::{estimate_design_inputs, EstimationOptions, GenerativeSpec};
use wincrt_service::{router, ServiceConfig};

async fn call(app: &Router, method: &str, path: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn stride(m: Option<u64>) -> Value {
    let mut v = json!({
        "estimand": "logwr",
        "delta": 0.1273,
        "pi_tie": 0.371,
        "icc": 0.003,
        "nbar": 63.4,
        "cv": 0.517,
        "composite_probs": {"p_w": 0.314, "p_t": 0.372, "p_ww": 0.121, "p_wt": 0.131, "p_tt": 0.218}
    });
    if let Some(m) = m {
        v["m"] = json!(m);
    }
    v
}

fn ordinal_spec() -> Value {
    json!({
        "model": "ordinal",
        "control_probs": [0.217, 0.093, 0.173, 0.241, 0.036, 0.241],
        "beta_effect": 0.405,
        "sigma_b2": 0.173,
        "cluster_size": {"type": "fixed", "size": 30}
    })
}

#[tokio::test]
async fn health_reports_ok() {
    let app = router(ServiceConfig::default());
    let (s, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn stride_power() {
    let app = router(ServiceConfig::default());
    let (s, v) = call(&app, "POST", "/power", Some(stride(Some(86)))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let p = v["power"].as_f64().unwrap();
    assert!((p - 0.827).abs() <= 0.02, "power {p}");
    assert_eq!(v["m"], 86);
}

#[tokio::test]
async fn samplesize_is_minimal() {
    let app = router(ServiceConfig::default());
    let mut doc = stride(None);
    doc["delta"] = json!(0.3);
    let (s, v) = call(&app, "POST", "/samplesize", Some(doc.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let m = v["required_m"].as_u64().unwrap();
    doc["m"] = json!(m);
    let (_, at) = call(&app, "POST", "/power", Some(doc.clone())).await;
    assert!(at["power"].as_f64().unwrap() >= 0.8);
    doc["m"] = json!(m - 1);
    let (_, below) = call(&app, "POST", "/power", Some(doc)).await;
    assert!(below["power"].as_f64().unwrap() < 0.8);
}

#[tokio::test]
async fn contour_moves_up_with_icc() {
    let app = router(ServiceConfig::default());
    let nbar: Vec<f64> = (1..=12).map(|i| 10.0 * i as f64).collect();
    let cv: Vec<f64> = (0..=8).map(|i| 0.1 * i as f64).collect();
    let grid = |icc: f64| {
        let mut inputs = stride(None);
        inputs["delta"] = json!(0.3);
        inputs["icc"] = json!(icc);
        json!({"inputs": inputs, "nbar_grid": nbar, "cv_grid": cv})
    };
    let m = |v: &Value| -> Vec<Vec<u64>> {
        v["required_m"]
            .as_array()
            .unwrap()
            .iter()
            .map(|row| row.as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect())
            .collect()
    };
    let (s, low) = call(&app, "POST", "/contour", Some(grid(0.003))).await;
    assert_eq!(s, StatusCode::OK, "{low}");
    let (_, high) = call(&app, "POST", "/contour", Some(grid(0.01))).await;
    let (low, high) = (m(&low), m(&high));
    for (i, row) in low.iter().enumerate() {
        for (j, &cell) in row.iter().enumerate() {
            assert!(high[i][j] >= cell);
            if j > 0 {
                assert!(cell <= row[j - 1], "row {i} not non-increasing in nbar");
            }
            if i > 0 {
                assert!(cell >= low[i - 1][j], "column {j} not non-decreasing in cv");
            }
        }
    }
}

#[tokio::test]
async fn contour_marks_infeasible_cells() {
    let app = router(ServiceConfig::default());
    let inputs = json!({"estimand": "wd", "delta": 0.5, "nbar": 1.0, "icc": 0.0});
    let (s, v) = call(&app, "POST", "/contour", Some(json!({"inputs": inputs, "nbar_grid": [1.0, 60.0], "cv_grid": [0.0]}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert!(v["required_m"][0][0].is_u64());
    assert_eq!(v["required_m"][0][1], Value::Null);
    assert_eq!(v["infeasible_cells"], 1);
}

#[tokio::test]
async fn schema_and_domain_errors() {
    let app = router(ServiceConfig::default());
    let (s, v) = call(&app, "POST", "/samplesize", Some(json!({"estimand": "logwr", "delta": 0.2}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["kind"], "invalid_request");
    assert!(v["message"].as_str().unwrap().contains("nbar"));

    let (s, v) = call(&app, "POST", "/samplesize", Some(json!({"estimand": "logwr", "delta": "x", "nbar": 5}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "delta");

    let (s, v) = call(&app, "POST", "/samplesize", Some(json!({"estimand": "logwr", "delta": 0.2, "nbar": 0.5}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "nbar");

    let (s, v) = call(&app, "POST", "/power", Some(json!({"estimand": "logwr", "delta": 0.2, "nbar": 5}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "m");

    let big = json!({"estimand": "wd", "delta": 0.5, "nbar": 60.0});
    let (s, v) = call(&app, "POST", "/samplesize", Some(big)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(v["kind"], "infeasible");

    let (s, v) = call(&app, "GET", "/calibrate/job-999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["kind"], "not_found");
}

#[tokio::test]
async fn responses_are_pure_functions_of_requests() {
    let app = router(ServiceConfig::default());
    let (_, a) = call(&app, "POST", "/samplesize", Some(stride(None))).await;
    let (_, b) = call(&app, "POST", "/samplesize", Some(stride(None))).await;
    assert_eq!(a, b);
}

async fn wait_for(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (s, v) = call(app, "GET", &format!("/calibrate/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        if v["state"] == "done" || v["state"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn calibrate_job_round_trip() {
    let app = router(ServiceConfig::default());
    let (s, v) = call(&app, "POST", "/calibrate", Some(json!({"spec": ordinal_spec()}))).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let id = v["id"].as_str().unwrap().to_string();
    let done = wait_for(&app, &id).await;
    assert_eq!(done["state"], "done", "{done}");

    let spec: GenerativeSpec = serde_json::from_value(ordinal_spec()).unwrap();
    let direct = estimate_design_inputs(&spec, &EstimationOptions::default()).unwrap();
    assert_eq!(done["result"], serde_json::to_value(&direct).unwrap());
}

#[tokio::test]
async fn calibrate_budget_and_validation() {
    let config = ServiceConfig { max_pair_draws: 5_000, ..ServiceConfig::default() };
    let app = router(config);
    let req = json!({"spec": ordinal_spec(), "options": {"pair_draws": 10_000}});
    let (s, v) = call(&app, "POST", "/calibrate", Some(req)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "options.pair_draws");

    let mut bad = ordinal_spec();
    bad["control_probs"] = json!([0.5, 0.2]);
    let (s, v) = call(&app, "POST", "/calibrate", Some(json!({"spec": bad}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
}

#[tokio::test]
async fn cors_preflight_allowed() {
    let app = router(ServiceConfig::default());
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/power")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}
