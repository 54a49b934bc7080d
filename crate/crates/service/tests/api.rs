use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use hyperlens_service::config::EngineConfig;
use hyperlens_service::viewport::unpack_bits;
use hyperlens_service::AppState;

const CORPUS: &str = include_str!("../../core/tests/fixtures/corpus.jsonl");
const ONTOLOGY: &str = include_str!("../../core/tests/fixtures/ontology.json");

fn config() -> EngineConfig {
    let mut cfg = EngineConfig::default();
    cfg.train.rank = 4;
    cfg.train.hyper.epochs = 150;
    cfg.fine_tune.steps = 20;
    cfg
}

fn app() -> Router {
    hyperlens_service::router(Arc::new(AppState::new(config(), None).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

async fn events(app: &Router, session: &str) -> usize {
    let (s, v) = get(app, &format!("/provenance?session={session}")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["total"].as_u64().unwrap() as usize
}

async fn planted(app: &Router, id: &str, nodes: usize, edges: usize) {
    let source = json!({"source": "planted", "config": {
        "nodes": nodes, "edges": edges, "timesteps": 5, "communities": 2,
        "noise": 0.1, "drift": 0.02, "seed": 7
    }});
    let (s, v) = post(app, "/session", json!({"id": id, "source": source})).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
}

async fn trained(app: &Router, id: &str) {
    planted(app, id, 20, 10).await;
    let (s, v) = post(app, "/train", json!({"session": id, "seed": 42})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
}

async fn corpus(app: &Router, id: &str) {
    let source = json!({"source": "inline", "corpus": CORPUS, "ontology": ONTOLOGY});
    let (s, v) = post(app, "/session", json!({"id": id, "source": source})).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let (s, v) = post(app, "/train", json!({"session": id})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
}

async fn job_done(app: &Router, job: u64) -> Value {
    for _ in 0..100 {
        let (s, v) = get(app, &format!("/feedback/job/{job}?wait_ms=1000")).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        if v["status"] != "running" {
            return v;
        }
    }
    panic!("job {job} never finished");
}

fn strengths(v: &Value) -> Vec<Option<f64>> {
    v["content"]["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(Value::as_f64)
        .collect()
}

#[tokio::test]
async fn l1_binarizes_at_the_threshold() {
    let app = app();
    trained(&app, "s").await;
    let uri = "/viewport?session=s&level=2&row_end=20&col_end=10&threshold=0";
    let (_, l2) = get(&app, uri).await;
    let values = strengths(&l2);
    let (s, l1) = get(
        &app,
        "/viewport?session=s&level=1&row_end=20&col_end=10&threshold=0.5",
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{l1}");
    assert_eq!(l1["content"]["kind"], "cells");
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(l1["content"]["bitset"].as_str().unwrap())
        .unwrap();
    let bits = unpack_bits(&bytes, 200);
    for (b, v) in bits.iter().zip(&values) {
        assert_eq!(*b, v.unwrap() >= 0.5);
    }
    assert_eq!(
        l1["content"]["present"].as_u64().unwrap() as usize,
        bits.iter().filter(|b| **b).count()
    );
    assert!(bits.iter().any(|b| *b) && bits.iter().any(|b| !*b));
}

#[tokio::test]
async fn l2_hides_cells_under_the_threshold() {
    let app = app();
    trained(&app, "s").await;
    let before = events(&app, "s").await;
    let (s, _) = post(
        &app,
        "/view",
        json!({"session": "s", "change": "threshold", "value": 0.2}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, low) = get(&app, "/viewport?session=s&level=2&row_end=20&col_end=10").await;
    let (s, _) = post(
        &app,
        "/view",
        json!({"session": "s", "change": "threshold", "value": 0.5}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(events(&app, "s").await, before + 2);
    let (_, high) = get(&app, "/viewport?session=s&level=2&row_end=20&col_end=10").await;
    assert_eq!(high["threshold"], 0.5);
    let (low, high) = (strengths(&low), strengths(&high));
    assert!(high.iter().flatten().all(|v| *v >= 0.5));
    assert!(low.iter().flatten().any(|v| *v < 0.5));
    for (l, h) in low.iter().zip(&high) {
        if let Some(h) = h {
            assert_eq!(Some(*h), *l);
        }
    }
}

#[tokio::test]
async fn grid_budget_is_enforced() {
    let app = app();
    planted(&app, "big", 600, 500).await;
    let (s, v) = get(
        &app,
        "/viewport?session=big&level=1&row_end=600&col_end=500",
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(v["code"], "budget");
    // 512 x 512 is exactly the budget.
    let (s, v) = get(
        &app,
        "/viewport?session=big&level=1&row_end=512&col_end=500",
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(v["content"]["bitset"].as_str().unwrap())
        .unwrap();
    assert_eq!(bytes.len(), (512 * 500usize).div_ceil(8));
    let (s, _) = get(
        &app,
        "/viewport?session=big&level=2&row_end=600&col_end=500",
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn document_pages_default_to_four_and_cap_at_eight() {
    let app = app();
    corpus(&app, "c").await;
    let (_, info) = get(&app, "/session?session=c").await;
    let (rows, cols) = (
        info["rows"]["entries"].as_array().unwrap().len(),
        info["cols"]["entries"].as_array().unwrap().len(),
    );
    let uri = format!("/viewport?session=c&level=6&row_end={rows}&col_end={cols}&t=0");
    let (s, v) = get(&app, &uri).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let c = &v["content"];
    assert_eq!(c["kind"], "documents");
    assert_eq!(c["page_size"], 4);
    assert!(c["total"].as_u64().unwrap() > 8);
    assert_eq!(c["documents"].as_array().unwrap().len(), 4);

    let (_, v) = get(&app, &format!("{uri}&page_size=8")).await;
    assert_eq!(v["content"]["documents"].as_array().unwrap().len(), 8);
    let (s, v) = get(&app, &format!("{uri}&page_size=9")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");

    let total = c["total"].as_u64().unwrap() as usize;
    let mut seen = std::collections::BTreeSet::new();
    for page in 0..total.div_ceil(4) {
        let (_, v) = get(&app, &format!("{uri}&page={page}")).await;
        for d in v["content"]["documents"].as_array().unwrap() {
            assert!(seen.insert(d["id"].as_str().unwrap().to_owned()));
        }
    }
    assert_eq!(seen.len(), total);
}

#[tokio::test]
async fn keywords_and_cell_documents() {
    let app = app();
    corpus(&app, "c").await;
    let (_, info) = get(&app, "/session?session=c").await;
    let (rows, cols) = (
        info["rows"]["entries"].as_array().unwrap().len(),
        info["cols"]["entries"].as_array().unwrap().len(),
    );
    let (s, v) = get(
        &app,
        &format!("/viewport?session=c&level=5&row_end={rows}&col_end={cols}&t=0"),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["content"]["available"], true);
    let cell = v["content"]["cells"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| !c["keywords"].as_array().unwrap().is_empty())
        .expect("some cell has keywords")
        .clone();
    let (r, c) = (cell["row"].as_u64().unwrap(), cell["col"].as_u64().unwrap());
    let (s, k) = get(&app, &format!("/cell/{r}/{c}/keywords?session=c")).await;
    assert_eq!(s, StatusCode::OK, "{k}");
    assert_eq!(k["kind"], "keywords");
    let (s, d) = get(&app, &format!("/cell/{r}/{c}/documents?session=c")).await;
    assert_eq!(s, StatusCode::OK, "{d}");
    assert!(d["documents"].as_array().unwrap().len() <= 4);
    let (s, _) = get(&app, &format!("/cell/{rows}/0/documents?session=c")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn timelines_carry_history_and_decaying_forecasts() {
    let app = app();
    trained(&app, "s").await;
    let (s, v) = get(
        &app,
        "/viewport?session=s&level=3&row_start=2&row_end=4&col_end=3",
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let cells = v["content"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 6);
    for c in cells {
        let forecast = c["forecast"].as_array().unwrap();
        // Five timesteps, input at t=3: four observed steps and two forecasts.
        assert_eq!(c["history"].as_array().unwrap().len(), 4);
        assert_eq!(forecast.len(), 2);
        let conf: Vec<f64> = forecast
            .iter()
            .map(|f| f["confidence"].as_f64().unwrap())
            .collect();
        assert!((conf[0] - 0.8).abs() < 1e-12 && (conf[1] - 0.64).abs() < 1e-12);
    }
    let (s, t) = get(&app, "/cell/2/1/timeline?session=s").await;
    assert_eq!(s, StatusCode::OK, "{t}");
    assert_eq!(t["forecast"][0]["timestep"], 4);
    assert!(t["forecast"][0]["observed"].is_number());
    assert!(t["forecast"][1]["observed"].is_null());
}

#[tokio::test]
async fn range_and_session_errors() {
    let app = app();
    trained(&app, "s").await;
    let (s, v) = get(&app, "/viewport?session=s&level=2&row_end=21&col_end=10").await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    assert_eq!(v["code"], "bounds");
    let (s, _) = get(&app, "/viewport?session=s&level=7&row_end=1&col_end=1").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = get(&app, "/viewport?session=nope&level=1&row_end=1&col_end=1").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "session");
    let (s, _) = get(
        &app,
        "/viewport?session=s&level=2&row_end=1&col_end=1&mode=change",
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn stale_versions_and_orderings_are_refused() {
    let app = app();
    trained(&app, "s").await;
    let (_, info) = get(&app, "/session?session=s").await;
    let v0 = info["rows"]["version"].as_u64().unwrap();
    let order = json!({"session": "s", "change": "order", "axis": "rows",
        "strategy": {"strategy": "dendrogram", "metric": {"metric": "jaccard", "threshold": 0.5}, "linkage": "average"}});
    let (s, r) = post(&app, "/view", order).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    let id = r["session"]["rows"]["ordering"]
        .as_str()
        .unwrap()
        .to_owned();
    let (s, _) = get(
        &app,
        &format!("/viewport?session=s&level=1&row_end=5&col_end=5&row_ordering={id}"),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = get(
        &app,
        "/viewport?session=s&level=1&row_end=5&col_end=5&row_ordering=0000",
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "stale");

    let group = json!({"session": "s", "change": "hierarchy", "axis": "rows", "edit": {"op": "create_group",
        "name": "g", "parent": null, "members": [{"type": "leaf", "id": 0}, {"type": "leaf", "id": 1}]}});
    let (s, r) = post(&app, "/view", group).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert!(r["session"]["rows"]["version"].as_u64().unwrap() > v0);
    let (s, v) = get(
        &app,
        &format!("/viewport?session=s&level=1&row_end=5&col_end=5&row_version={v0}"),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");

    let collapse = json!({"session": "s", "change": "collapse", "axis": "rows", "group": "g", "collapsed": true});
    let (s, r) = post(&app, "/view", collapse).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    let entries = r["session"]["rows"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 19);
    assert!(entries
        .iter()
        .any(|e| e["group"] == "g" && e["leaves"].as_array().unwrap().len() == 2));
}

#[tokio::test]
async fn marks_and_notes_are_echoed() {
    let app = app();
    trained(&app, "s").await;
    let (s, _) = post(
        &app,
        "/view",
        json!({"session": "s", "change": "mark", "node": 1, "edge": 2, "starred": true}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let note =
        json!({"session": "s", "change": "annotate", "node": 1, "edge": 2, "text": "check this"});
    assert_eq!(post(&app, "/view", note).await.0, StatusCode::OK);
    let (_, v) = get(&app, "/viewport?session=s&level=2&row_end=5&col_end=5").await;
    let notes = v["notes"].as_array().unwrap();
    assert_eq!(notes.len(), 1);
    assert_eq!(notes[0]["node"], 1);
    assert_eq!(notes[0]["edge"], 2);
    assert_eq!(notes[0]["starred"], true);
    assert_eq!(notes[0]["annotation"], "check this");
    let (_, v) = get(
        &app,
        "/viewport?session=s&level=2&row_start=5&row_end=10&col_end=5",
    )
    .await;
    assert!(v["notes"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn search_finds_labels_and_documents() {
    let app = app();
    corpus(&app, "c").await;
    let (s, v) = get(&app, "/search?session=c&q=USER03").await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["node_total"], 1);
    assert_eq!(v["nodes"][0]["label"], "user03");
    let (_, v) = get(&app, "/search?session=c&q=market&limit=2").await;
    assert!(v["document_total"].as_u64().unwrap() > 2);
    assert_eq!(v["documents"].as_array().unwrap().len(), 2);
    assert!(!v["documents"][0]["cells"].as_array().unwrap().is_empty());
    let (_, v) = get(&app, "/search?session=c&q=zzzzqqq").await;
    assert_eq!(v["node_total"], 0);
    assert_eq!(v["document_total"], 0);
    assert_eq!(events(&app, "c").await, 2);
}

#[tokio::test]
async fn feedback_job_lifecycle() {
    let app = app();
    trained(&app, "s").await;
    let before = events(&app, "s").await;
    let (_, info) = get(&app, "/session?session=s").await;
    let committed = info["model"]["id"].as_str().unwrap().to_owned();
    let grid = "/viewport?session=s&level=2&row_end=20&col_end=10&threshold=0";
    let (_, base) = get(&app, grid).await;

    let body = json!({"session": "s", "assertions": [{"node": 2, "edge": 1, "strength": 1.0}]});
    let (s, job) = post(&app, "/feedback", body.clone()).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{job}");
    assert_eq!(job["status"], "running");
    let (s, _) = post(&app, "/feedback", body.clone()).await;
    assert_eq!(s, StatusCode::CONFLICT);
    // Reads during the job see the committed model.
    let (_, during) = get(&app, grid).await;
    assert_eq!(during, base);

    let done = job_done(&app, job["job"].as_u64().unwrap()).await;
    assert_eq!(done["status"], "preview_ready", "{done}");
    let after = done["after"].as_str().unwrap().to_owned();
    assert_ne!(after, committed);
    assert_eq!(events(&app, "s").await, before + 1);
    let (_, still) = get(&app, grid).await;
    assert_eq!(still, base);

    let (s, v) = post(&app, "/feedback", body).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    assert_eq!(events(&app, "s").await, before + 1);

    let (s, change) = get(&app, &format!("{grid}&mode=change")).await;
    assert_eq!(s, StatusCode::OK, "{change}");
    assert_eq!(change["model"], after.as_str());
    let deltas = strengths(&change);
    let (_, committed_vals) = get(&app, grid).await;
    let base_vals = strengths(&committed_vals);
    assert!(deltas.iter().all(Option::is_some));
    assert!(deltas[2 * 10 + 1].unwrap() > 0.0);
    assert!(deltas.iter().any(|d| d.unwrap() < 0.0) || deltas.iter().all(|d| d.unwrap() >= 0.0));
    assert!(deltas
        .iter()
        .zip(&base_vals)
        .any(|(d, b)| d.unwrap() != b.unwrap()));

    let (s, r) = post(
        &app,
        "/feedback/resolve",
        json!({"session": "s", "decision": "accept"}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["session"]["model"]["id"], after.as_str());
    assert!(r["session"]["preview"].is_null());
    assert_eq!(events(&app, "s").await, before + 2);
    let (s, _) = post(
        &app,
        "/feedback/resolve",
        json!({"session": "s", "decision": "accept"}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(events(&app, "s").await, before + 2);
}

#[tokio::test]
async fn reject_restores_the_committed_view() {
    let app = app();
    trained(&app, "s").await;
    let grid = "/viewport?session=s&level=2&row_end=20&col_end=10&threshold=0";
    let (_, base) = get(&app, grid).await;
    let body = json!({"session": "s", "assertions": [{"node": 3, "edge": 4, "strength": 0.0}]});
    let (_, job) = post(&app, "/feedback", body).await;
    job_done(&app, job["job"].as_u64().unwrap()).await;
    let (s, r) = post(
        &app,
        "/feedback/resolve",
        json!({"session": "s", "decision": "reject"}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    let (_, now) = get(&app, grid).await;
    assert_eq!(now, base);
}

#[tokio::test]
async fn failed_feedback_reports_and_records_nothing() {
    let app = app();
    trained(&app, "s").await;
    let before = events(&app, "s").await;
    let body = json!({"session": "s", "assertions": [{"node": 99, "edge": 0, "strength": 1.0}]});
    let (s, job) = post(&app, "/feedback", body).await;
    if s == StatusCode::ACCEPTED {
        let done = job_done(&app, job["job"].as_u64().unwrap()).await;
        assert_eq!(done["status"], "failed");
    } else {
        assert_eq!(s, StatusCode::BAD_REQUEST, "{job}");
    }
    let bad = json!({"session": "s", "assertions": [{"node": 1, "edge": 0, "strength": 1.5}]});
    assert_eq!(
        post(&app, "/feedback", bad).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(events(&app, "s").await, before);
    // The session is usable afterwards.
    let ok = json!({"session": "s", "assertions": [{"node": 1, "edge": 0, "strength": 1.0}]});
    assert_eq!(post(&app, "/feedback", ok).await.0, StatusCode::ACCEPTED);
}

#[tokio::test]
async fn every_state_change_is_one_event() {
    let app = app();
    trained(&app, "s").await;
    assert_eq!(events(&app, "s").await, 2);
    let changes = [
        json!({"change": "threshold", "value": 0.3}),
        json!({"change": "order", "axis": "cols", "strategy": {"strategy": "size"}}),
        json!({"change": "order", "axis": "rows", "strategy": {"strategy": "first_occurrence"}}),
        json!({"change": "hierarchy", "axis": "cols", "edit": {"op": "create_group",
            "name": "a", "parent": null, "members": [{"type": "leaf", "id": 3}]}}),
        json!({"change": "collapse", "axis": "cols", "group": "a", "collapsed": true}),
        json!({"change": "mark", "node": 0, "edge": 0, "starred": true}),
        json!({"change": "annotate", "node": 0, "edge": 0, "text": "x"}),
    ];
    let mut n = 2;
    for mut c in changes {
        c["session"] = json!("s");
        let (s, v) = post(&app, "/view", c).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        n += 1;
        assert_eq!(events(&app, "s").await, n);
        assert_eq!(v["seq"].as_u64().unwrap() as usize, n);
    }
    // Rejected changes record nothing.
    let bad = json!({"session": "s", "change": "collapse", "axis": "cols", "group": "missing", "collapsed": true});
    assert!(post(&app, "/view", bad).await.0.is_client_error());
    assert_eq!(
        post(
            &app,
            "/view",
            json!({"session": "s", "change": "threshold", "value": 2.0})
        )
        .await
        .0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(events(&app, "s").await, n);

    let (s, _) = post(&app, "/train", json!({"session": "s", "seed": 1})).await;
    assert_eq!(s, StatusCode::OK);
    n += 1;
    assert_eq!(events(&app, "s").await, n);
    let (s, _) = post(&app, "/provenance/undo", json!({"session": "s"})).await;
    assert_eq!(s, StatusCode::OK);
    n += 1;
    assert_eq!(events(&app, "s").await, n);
}

#[tokio::test]
async fn undo_returns_to_the_previous_state() {
    let app = app();
    trained(&app, "s").await;
    let (_, info) = get(&app, "/session?session=s").await;
    let first = info["model"]["id"].clone();
    let grid = "/viewport?session=s&level=2&row_end=20&col_end=10&threshold=0";
    let (_, base) = get(&app, grid).await;
    post(&app, "/train", json!({"session": "s", "seed": 5})).await;
    let (_, info) = get(&app, "/session?session=s").await;
    assert_ne!(info["model"]["id"], first);
    let (s, r) = post(&app, "/provenance/undo", json!({"session": "s"})).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["session"]["model"]["id"], first);
    assert_eq!(get(&app, grid).await.1, base);
    let (_, log) = get(&app, "/provenance?session=s").await;
    let kinds: Vec<_> = log["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].clone())
        .collect();
    assert_eq!(kinds.len(), 4);
}

#[tokio::test]
async fn snapshots_resolve_after_the_model_moves_on() {
    let app = app();
    trained(&app, "s").await;
    let (_, info) = get(&app, "/session?session=s").await;
    let first = info["model"]["id"].as_str().unwrap().to_owned();
    post(&app, "/train", json!({"session": "s", "seed": 9})).await;
    let (s, snap) = get(
        &app,
        &format!("/snapshot/{first}?session=s&predictions=true"),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{snap}");
    assert_eq!(snap["id"], first.as_str());
    assert_eq!(snap["params"]["x"]["rows"], 20);
    assert_eq!(snap["predictions"].as_array().unwrap().len(), 2);
    let (s, _) = get(&app, "/snapshot/ffffffffffffffff?session=s").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_are_restored_from_their_logs() {
    let dir = tempfile::tempdir().unwrap();
    let grid = "/viewport?session=p&level=2&row_end=20&col_end=10&threshold=0";
    let base = {
        let app = hyperlens_service::router(Arc::new(
            AppState::new(config(), Some(dir.path().into())).unwrap(),
        ));
        trained(&app, "p").await;
        post(
            &app,
            "/view",
            json!({"session": "p", "change": "mark", "node": 0, "edge": 1, "starred": true}),
        )
        .await;
        get(&app, grid).await.1
    };
    let app = hyperlens_service::router(Arc::new(
        AppState::new(config(), Some(dir.path().into())).unwrap(),
    ));
    let (s, again) = get(&app, grid).await;
    assert_eq!(s, StatusCode::OK, "{again}");
    assert_eq!(again, base);
    assert_eq!(events(&app, "p").await, 3);
    let (s, _) = post(
        &app,
        "/session",
        json!({"id": "p", "source": {"source": "planted", "config": {}}}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = post(
        &app,
        "/session",
        json!({"id": "../x", "source": {"source": "planted", "config": {}}}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn long_poll_returns_early_when_the_job_ends() {
    let app = app();
    trained(&app, "s").await;
    let body = json!({"session": "s", "assertions": [{"node": 0, "edge": 0, "strength": 1.0}]});
    let (_, job) = post(&app, "/feedback", body).await;
    let start = std::time::Instant::now();
    let (_, v) = get(&app, &format!("/feedback/job/{}?wait_ms=20000", job["job"])).await;
    assert_eq!(v["status"], "preview_ready");
    assert!(start.elapsed() < Duration::from_secs(15));
    let (s, _) = get(&app, "/feedback/job/999").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
