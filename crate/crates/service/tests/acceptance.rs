//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS or FAIL line; exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use hyperlens_service::config::EngineConfig;
use hyperlens_service::AppState;

const CORPUS: &str = include_str!("../../core/tests/fixtures/corpus.jsonl");
const ONTOLOGY: &str = include_str!("../../core/tests/fixtures/ontology.json");
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn laplacian() -> Outcome {
    let start = Instant::now();
    let sweep = common::laplacian_sweep();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        sweep.max_error <= 1e-12 && secs < 30.0 && sweep.instances >= 10_000,
        format!(
            "{} instances, max error {:.1e}, {secs:.1}s",
            sweep.instances, sweep.max_error
        ),
    )
}

fn gradient() -> Outcome {
    let start = Instant::now();
    let worst = common::gradient_sweep(50);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 10.0,
        format!("50 instances, max relative error {worst:.1e}, {secs:.1}s"),
    )
}

fn quality() -> Outcome {
    let start = Instant::now();
    let reports: Vec<_> = SEEDS.iter().map(|&s| common::quality_run(s)).collect();
    let secs = start.elapsed().as_secs_f64();
    let auc = reports.iter().map(|r| r.auc).sum::<f64>() / reports.len() as f64;
    let recall = reports.iter().map(|r| r.recall).sum::<f64>() / reports.len() as f64;
    outcome(
        auc >= 0.85 - 0.03 && recall >= 0.75 - 0.03 && secs < 60.0,
        format!("mean AUC {auc:.3}, mean recall@0.5 {recall:.3} over 5 seeds, {secs:.1}s"),
    )
}

fn warm_start() -> Outcome {
    let runs: Vec<_> = SEEDS.iter().map(|&s| common::warm_start_run(s)).collect();
    let detail = runs
        .iter()
        .map(|r| match r.hit {
            Some(h) => format!("{h}/{}", r.cold_epochs),
            None => format!("miss/{}", r.cold_epochs),
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        runs.iter().all(|r| r.passed()),
        format!("steps to 1% of cold loss / cold epochs: {detail}"),
    )
}

fn feedback() -> Outcome {
    let f = common::feedback_semantics();
    outcome(
        f.after > f.before && f.reject_restores && f.empty_is_noop,
        format!(
            "asserted cell {:.4} -> {:.4}, reject restores: {}, empty no-op: {}",
            f.before, f.after, f.reject_restores, f.empty_is_noop
        ),
    )
}

fn seriation() -> Outcome {
    let runs: Vec<_> = SEEDS.iter().map(|&s| common::seriation_run(s)).collect();
    let worst = runs
        .iter()
        .map(|r| r.row_purity.min(r.col_purity))
        .fold(1.0, f64::min);
    let size = runs.iter().all(|r| r.size_matches);
    let first = runs.iter().all(|r| r.first_is_identity);
    outcome(
        worst == 1.0 && size && first,
        format!(
            "min purity {worst:.2}, size order stable: {size}, first occurrence identity: {first}"
        ),
    )
}

fn replay() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let ok = common::scripted_replay(dir.path());
    outcome(
        ok,
        "scripted session replayed from its log, forecasts bit-identical".into(),
    )
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .expect("request");
    let resp = app.clone().oneshot(req).await.expect("response");
    let status = resp.status();
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

fn percentile(mut xs: Vec<f64>, p: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = ((p * xs.len() as f64).ceil() as usize).clamp(1, xs.len());
    xs[k - 1]
}

async fn latency() -> Outcome {
    let mut cfg = EngineConfig::default();
    // Model quality is not under test here; a short run keeps setup cheap.
    cfg.train.hyper.epochs = 20;
    let app = hyperlens_service::router(Arc::new(AppState::new(cfg, None).expect("app")));
    let (n, m) = (1000usize, 800usize);
    let source = json!({"source": "planted", "config": {
        "nodes": n, "edges": m, "timesteps": 15, "communities": 8, "noise": 0.1, "seed": 1}});
    let (s, v) = call(
        &app,
        Method::POST,
        "/session",
        Some(json!({"id": "big", "source": source})),
    )
    .await;
    if s != StatusCode::CREATED {
        return outcome(false, format!("session setup failed: {v}"));
    }
    let (s, v) = call(
        &app,
        Method::POST,
        "/train",
        Some(json!({"session": "big"})),
    )
    .await;
    if s != StatusCode::OK {
        return outcome(false, format!("training failed: {v}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    for q in 0..200 {
        // Level 1 covers up to the full cell budget, level 2 a 200x200 zoom.
        let level = 1 + q % 2;
        let (h, w) = if level == 1 { (512, 512) } else { (200, 200) };
        let (h, w) = (h.min(n), w.min(m));
        let r0 = rng.random_range(0..=n - h);
        let c0 = rng.random_range(0..=m - w);
        let uri = format!(
            "/viewport?session=big&level={level}&row_start={r0}&row_end={}&col_start={c0}&col_end={}",
            r0 + h,
            c0 + w
        );
        let start = Instant::now();
        let (s, _) = call(&app, Method::GET, &uri, None).await;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if s != StatusCode::OK {
            return outcome(false, format!("viewport query {uri} returned {s}"));
        }
        if level == 1 { &mut l1 } else { &mut l2 }.push(ms);
    }
    let all: Vec<f64> = l1.iter().chain(&l2).copied().collect();
    let p95 = percentile(all, 0.95);

    let body = json!({"session": "big", "assertions": [{"node": 3, "edge": 7, "strength": 1.0}]});
    let start = Instant::now();
    let (s, job) = call(&app, Method::POST, "/feedback", Some(body)).await;
    if s != StatusCode::ACCEPTED {
        return outcome(false, format!("feedback submit returned {s}: {job}"));
    }
    let mut status = Value::Null;
    while start.elapsed() < Duration::from_secs(60) {
        let uri = format!("/feedback/job/{}?wait_ms=1000", job["job"]);
        status = call(&app, Method::GET, &uri, None).await.1;
        if status["status"] != "running" {
            break;
        }
    }
    let job_secs = start.elapsed().as_secs_f64();
    outcome(
        p95 < 100.0 && status["status"] == "preview_ready" && job_secs < 10.0,
        format!(
            "1000x800x15: viewport p95 {p95:.1} ms over 200 queries (L1 p95 {:.1}, L2 p95 {:.1}); fine-tune job {job_secs:.2}s ({})",
            percentile(l1, 0.95),
            percentile(l2, 0.95),
            status["status"]
        ),
    )
}

async fn budgets() -> Outcome {
    let app = hyperlens_service::router(Arc::new(
        AppState::new(EngineConfig::default(), None).expect("app"),
    ));
    let mut failures = Vec::new();

    let big = json!({"source": "planted", "config": {"nodes": 600, "edges": 500, "timesteps": 3, "seed": 2}});
    call(
        &app,
        Method::POST,
        "/session",
        Some(json!({"id": "grid", "source": big})),
    )
    .await;
    let (s, _) = call(
        &app,
        Method::GET,
        "/viewport?session=grid&level=1&row_end=600&col_end=500",
        None,
    )
    .await;
    if s != StatusCode::UNPROCESSABLE_ENTITY {
        failures.push(format!("L1 over budget returned {s}"));
    }
    let (s, v) = call(
        &app,
        Method::GET,
        "/viewport?session=grid&level=1&row_end=524&col_end=500",
        None,
    )
    .await;
    let present_cells =
        v["rows"]["end"].as_u64().unwrap_or(0) * v["cols"]["end"].as_u64().unwrap_or(0);
    if s != StatusCode::OK || present_cells > 262_144 {
        failures.push(format!(
            "L1 at budget returned {s} with {present_cells} cells"
        ));
    }

    let text = json!({"source": "inline", "corpus": CORPUS, "ontology": ONTOLOGY});
    call(
        &app,
        Method::POST,
        "/session",
        Some(json!({"id": "docs", "source": text})),
    )
    .await;
    let (_, info) = call(&app, Method::GET, "/session?session=docs", None).await;
    let rows = info["rows"]["entries"].as_array().map_or(0, Vec::len);
    let cols = info["cols"]["entries"].as_array().map_or(0, Vec::len);
    let uri = format!("/viewport?session=docs&level=6&row_end={rows}&col_end={cols}&t=0");
    let (_, v) = call(&app, Method::GET, &uri, None).await;
    let page = v["content"]["documents"].as_array().map_or(0, Vec::len);
    if page != 4 || v["content"]["page_size"] != 4 {
        failures.push(format!("L6 default page held {page} documents"));
    }
    let (_, v) = call(&app, Method::GET, &format!("{uri}&page_size=8"), None).await;
    let page8 = v["content"]["documents"].as_array().map_or(0, Vec::len);
    let (s, _) = call(&app, Method::GET, &format!("{uri}&page_size=9"), None).await;
    if page8 != 8 || s != StatusCode::UNPROCESSABLE_ENTITY {
        failures.push(format!("L6 page of 8 held {page8}, page of 9 returned {s}"));
    }
    let pass = failures.is_empty();
    let detail = if pass {
        "L1 refused above 262144 cells, L6 pages 4 by default and at most 8".into()
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let checks: Vec<(&str, Check)> = vec![
        ("laplacian oracle equivalence", Box::new(laplacian)),
        ("gradient check", Box::new(gradient)),
        ("link prediction quality", Box::new(quality)),
        ("warm start", Box::new(warm_start)),
        ("feedback semantics", Box::new(feedback)),
        ("seriation", Box::new(seriation)),
        ("determinism and replay", Box::new(replay)),
        ("latency", Box::new(|| rt.block_on(latency()))),
        ("level budgets", Box::new(|| rt.block_on(budgets()))),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
