use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

use tafa_core::dataset::{generate_cube, split, CostModel, Dataset};
use tafa_core::eval::{Experiment, SearchParams};
use tafa_core::policy::{Action, PolicyBundle};
use tafa_service::payload::{
    LibraryList, SessionCreated, SessionStatus, SessionView, StepPayload, StepResult, Versioned,
};
use tafa_service::AppState;

const SEED: u64 = 3;
const TEST_FRACTION: f64 = 0.2;

struct Fixture {
    raw: Dataset,
    test_rows: Vec<usize>,
    exp: Experiment,
    bundle: PolicyBundle,
    addr: SocketAddr,
}

fn start(app: Arc<AppState>) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let (addr, listener) = tafa_service::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
            tx.send(addr).unwrap();
            axum::serve(listener, tafa_service::router(app)).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let raw = generate_cube(1500, 0.1, SEED).unwrap();
        let costs = CostModel::uniform(20, 1.0);
        let mut exp = Experiment::prepare(&raw, &costs, TEST_FRACTION, SEED).unwrap();
        let params = SearchParams {
            templates: 6,
            candidates: 200,
            rounds: 1,
            drop_probability: 0.5,
        };
        let cfg = exp.search_config(&params, 0.04, 1);
        let (library, _) = exp.search(&cfg).unwrap();
        let bundle = exp.bundle("cube", library, 10).unwrap();
        let test_rows = split(&raw.labels, TEST_FRACTION, SEED).unwrap().test;
        let addr = start(AppState::new([("cube".to_string(), bundle.clone())]));
        Fixture {
            raw,
            test_rows,
            exp,
            bundle,
            addr,
        }
    })
}

fn url(addr: SocketAddr, path: &str) -> String {
    format!("http://{addr}{path}")
}

async fn create(client: &Client, addr: SocketAddr, body: Value) -> (StatusCode, Value) {
    let r = client.post(url(addr, "/sessions")).json(&body).send().await.unwrap();
    let status = r.status();
    (status, r.json().await.unwrap())
}

async fn observe(client: &Client, addr: SocketAddr, id: &str, feature: usize, value: Value) -> (StatusCode, Value) {
    let r = client
        .post(url(addr, &format!("/sessions/{id}/observe")))
        .json(&json!({ "feature": feature, "value": value }))
        .send()
        .await
        .unwrap();
    let status = r.status();
    (status, r.json().await.unwrap())
}

async fn view(client: &Client, addr: SocketAddr, id: &str) -> Versioned<SessionView> {
    let r = client.get(url(addr, &format!("/sessions/{id}"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.json().await.unwrap()
}

fn parse<T: serde::de::DeserializeOwned>(v: Value) -> Versioned<T> {
    serde_json::from_value(v).unwrap()
}

/// Feeds every requested raw value of `row` and returns the step payloads.
async fn run_row(client: &Client, addr: SocketAddr, raw: &[f64]) -> (String, Vec<StepPayload>) {
    let (status, body) = create(client, addr, json!({ "library_id": "cube" })).await;
    assert_eq!(status, StatusCode::CREATED);
    let created: Versioned<SessionCreated> = parse(body);
    let id = created.body.session.id.clone();
    let mut next = Some(created.body.request.feature);
    let mut steps = Vec::new();
    while let Some(f) = next {
        let (status, body) = observe(client, addr, &id, f, json!(raw[f])).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let step: Versioned<StepPayload> = parse(body);
        next = match &step.body.result {
            StepResult::Acquire { request } => Some(request.feature),
            StepResult::Terminate { .. } => None,
        };
        steps.push(step.body);
    }
    (id, steps)
}

#[tokio::test]
async fn health_and_library_listing() {
    let f = fixture();
    let client = Client::new();
    let health: Value = client.get(url(f.addr, "/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health["schema"], "tafa.health");
    assert_eq!(health["version"], 1);
    assert_eq!(health["status"], "ok");

    let body: Value = client.get(url(f.addr, "/libraries")).send().await.unwrap().json().await.unwrap();
    for key in ["train_features", "train_labels", "model"] {
        assert!(body["libraries"][0].get(key).is_none(), "summary leaks {key}");
    }
    let list: Versioned<LibraryList> = parse(body);
    assert_eq!(list.schema, "tafa.libraries");
    assert_eq!(list.body.libraries.len(), 1);
    let s = &list.body.libraries[0];
    assert_eq!(s.id, "cube");
    assert_eq!(s.template_count, f.bundle.library.templates.len());
    assert_eq!(s.feature_names.len(), 20);
    assert_eq!(s.lambda, f.bundle.library.lambda);
}

#[tokio::test]
async fn empty_service_lists_no_libraries() {
    let addr = start(AppState::new(Vec::<(String, PolicyBundle)>::new()));
    let list: Versioned<LibraryList> = Client::new()
        .get(url(addr, "/libraries"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(list.body.libraries.is_empty());
}

#[tokio::test]
async fn create_requests_initial_feature_by_name() {
    let f = fixture();
    let client = Client::new();
    let (status, a) = create(&client, f.addr, json!({ "library_id": "cube" })).await;
    assert_eq!(status, StatusCode::CREATED);
    let a: Versioned<SessionCreated> = parse(a);
    let o = f.bundle.library.o_init;
    assert_eq!(a.body.request.feature, o);
    assert_eq!(a.body.request.feature_name, f.bundle.feature_names[o]);
    assert_eq!(a.body.session.status, SessionStatus::AwaitingValue);
    assert!(a.body.session.trace.is_empty());

    let (_, b) = create(&client, f.addr, json!({ "library_id": "cube" })).await;
    let b: Versioned<SessionCreated> = parse(b);
    assert_ne!(a.body.session.id, b.body.session.id);

    let fresh = view(&client, f.addr, &a.body.session.id).await;
    assert_eq!(fresh.schema, "tafa.session");
    assert_eq!(fresh.body.trace.len(), 0);
    assert_eq!(fresh.body.status, SessionStatus::AwaitingValue);
}

#[tokio::test]
async fn error_codes_are_distinct() {
    let f = fixture();
    let client = Client::new();
    let (status, body) = create(&client, f.addr, json!({ "library_id": "nope" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "library_not_found");
    assert!(body.get("message").is_some() && body.get("detail").is_some());

    let (status, body) = create(&client, f.addr, json!({ "library_id": "cube", "k": 0 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_request");

    let (status, body) = observe(&client, f.addr, "missing", 0, json!(1.0)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "session_not_found");

    let (_, created) = create(&client, f.addr, json!({ "library_id": "cube" })).await;
    let created: Versioned<SessionCreated> = parse(created);
    let id = created.body.session.id;
    let o = created.body.request.feature;

    let (status, body) = observe(&client, f.addr, &id, (o + 1) % 20, json!(0.5)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "unexpected_feature");
    assert_eq!(body["detail"]["expected"], o);

    let (status, body) = observe(&client, f.addr, &id, o, json!("NaN")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "non_finite_value");
    let (_, body) = observe(&client, f.addr, &id, o, json!("-inf")).await;
    assert_eq!(body["code"], "non_finite_value");

    let r = client
        .post(url(f.addr, &format!("/sessions/{id}/observe")))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["code"], "invalid_request");

    // rejected submissions leave no trace
    assert!(view(&client, f.addr, &id).await.body.trace.is_empty());

    let r = client.delete(url(f.addr, &format!("/sessions/{id}"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let aborted: Versioned<SessionView> = r.json().await.unwrap();
    assert_eq!(aborted.body.status, SessionStatus::Terminated);
    assert!(aborted.body.aborted);
    assert!(aborted.body.prediction.is_none());
    assert!(aborted.body.pending_request.is_none());

    let (status, body) = observe(&client, f.addr, &id, o, json!(0.5)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "session_terminated");
}

#[tokio::test]
async fn replay_reproduces_batch_rollouts() {
    let f = fixture();
    let client = Client::new();
    let policy = f.bundle.policy(None, None).unwrap();
    for (i, &row) in f.test_rows.iter().take(40).enumerate() {
        let raw = f.raw.features.row(row);
        let batch = policy.rollout(f.exp.test.features.row(i), None).unwrap();
        let (id, steps) = run_row(&client, f.addr, raw).await;
        assert_eq!(steps.len(), batch.steps.len());
        for (api, b) in steps.iter().zip(&batch.steps) {
            assert_eq!(api.explanation.next_action.to_action(), b.action);
            assert_eq!(api.explanation.selected_template, b.selected_template);
            let totals: Vec<f64> = api.explanation.templates.iter().map(|t| t.total).collect();
            let losses: Vec<f64> = api.explanation.templates.iter().map(|t| t.estimated_loss).collect();
            assert_eq!(totals, b.scores.total);
            assert_eq!(losses, b.scores.estimated_loss);
        }
        let last = steps.last().unwrap();
        let StepResult::Terminate { prediction } = &last.result else {
            panic!("session did not terminate");
        };
        assert_eq!(prediction.probabilities, batch.final_prediction);
        assert_eq!(prediction.predicted_class, batch.predicted_class);
        assert_eq!(prediction.probabilities.len(), 8);
        assert!((prediction.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let v = view(&client, f.addr, &id).await.body;
        assert_eq!(v.status, SessionStatus::Terminated);
        assert_eq!(v.trace.len(), steps.len());
        assert!(v.prediction.is_some());
        let requested: Vec<usize> = v.observations.iter().map(|o| o.feature).collect();
        assert_eq!(requested, batch.acquired);
        for o in &v.observations {
            assert_eq!(o.raw_value, raw[o.feature]);
            assert_eq!(o.standardized_value, f.exp.test.features.get(i, o.feature));
        }
    }
}

#[tokio::test]
async fn explanation_argmin_and_weighted_cost() {
    let f = fixture();
    let client = Client::new();
    let (_, created) = create(&client, f.addr, json!({ "library_id": "cube", "lambda": 0.5, "k": 3 })).await;
    let created: Versioned<SessionCreated> = parse(created);
    assert_eq!(created.body.session.lambda, 0.5);
    assert_eq!(created.body.session.k, 3);
    let id = created.body.session.id;
    let raw = f.raw.features.row(f.test_rows[0]);
    let (_, body) = observe(&client, f.addr, &id, created.body.request.feature, json!(raw[created.body.request.feature])).await;
    let step: Versioned<StepPayload> = parse(body);
    let e = &step.body.explanation;
    assert_eq!(e.templates.len(), f.bundle.library.templates.len());
    let min = e.templates.iter().map(|t| t.total).fold(f64::INFINITY, f64::min);
    let first_min = e.templates.iter().position(|t| t.total == min).unwrap();
    assert_eq!(e.selected_template, first_min);
    for t in &e.templates {
        assert_eq!(t.weighted_cost, 0.5 * t.remaining_cost);
        assert_eq!(t.features, f.bundle.library.templates[t.index].indices());
    }
    if let Action::Acquire { feature } = e.next_action.to_action() {
        assert!(e.templates[e.selected_template].features.contains(&feature));
    }
}

#[tokio::test]
async fn interleaved_sessions_are_isolated() {
    let f = fixture();
    let client = Client::new();
    let rows: Vec<&[f64]> = f.test_rows[..6].iter().map(|&r| f.raw.features.row(r)).collect();

    // sequential reference
    let mut reference = Vec::new();
    for raw in &rows {
        reference.push(run_row(&client, f.addr, raw).await.1);
    }

    // round-robin across all six sessions, one observation at a time
    let mut ids = Vec::new();
    let mut next = Vec::new();
    for _ in &rows {
        let (_, c) = create(&client, f.addr, json!({ "library_id": "cube" })).await;
        let c: Versioned<SessionCreated> = parse(c);
        ids.push(c.body.session.id);
        next.push(Some(c.body.request.feature));
    }
    let mut got: Vec<Vec<StepPayload>> = vec![Vec::new(); rows.len()];
    while next.iter().any(Option::is_some) {
        for s in 0..rows.len() {
            let Some(feat) = next[s] else { continue };
            let (status, body) = observe(&client, f.addr, &ids[s], feat, json!(rows[s][feat])).await;
            assert_eq!(status, StatusCode::OK);
            let step: Versioned<StepPayload> = parse(body);
            next[s] = match &step.body.result {
                StepResult::Acquire { request } => Some(request.feature),
                StepResult::Terminate { .. } => None,
            };
            got[s].push(step.body);
        }
    }
    for (a, b) in got.iter().zip(&reference) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.result, y.result);
            assert_eq!(x.explanation, y.explanation);
        }
    }
}

#[tokio::test]
async fn concurrent_submissions_never_corrupt_a_session() {
    let f = fixture();
    let client = Client::new();
    let (_, c) = create(&client, f.addr, json!({ "library_id": "cube" })).await;
    let c: Versioned<SessionCreated> = parse(c);
    let id = c.body.session.id;
    let feat = c.body.request.feature;
    let raw = f.raw.features.row(f.test_rows[1])[feat];
    let calls = (0..8).map(|_| {
        let (client, id) = (client.clone(), id.clone());
        async move { observe(&client, f.addr, &id, feat, json!(raw)).await }
    });
    let results = futures_join(calls).await;
    let ok = results.iter().filter(|(s, _)| *s == StatusCode::OK).count();
    assert_eq!(ok, 1);
    for (s, body) in &results {
        if *s != StatusCode::OK {
            let code = body["code"].as_str().unwrap();
            assert!(["session_busy", "unexpected_feature", "session_terminated"].contains(&code), "{code}");
        }
    }
    assert_eq!(view(&client, f.addr, &id).await.body.trace.len(), 1);
}

async fn futures_join<F: std::future::Future>(fs: impl Iterator<Item = F>) -> Vec<F::Output>
where
    F: Send + 'static,
    F::Output: Send + 'static,
{
    let handles: Vec<_> = fs.map(tokio::spawn).collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test]
async fn snapshot_written_on_shutdown() {
    let f = fixture();
    let app = AppState::new([("cube".to_string(), f.bundle.clone())]);
    let (addr, listener) = tafa_service::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.json");
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(tafa_service::serve_until(
        listener,
        Arc::clone(&app),
        async {
            let _ = rx.await;
        },
        Some(path.clone()),
    ));
    let client = Client::new();
    let raw = f.raw.features.row(f.test_rows[2]);
    let (_, c) = create(&client, addr, json!({ "library_id": "cube" })).await;
    let c: Versioned<SessionCreated> = parse(c);
    let feat = c.body.request.feature;
    observe(&client, addr, &c.body.session.id, feat, json!(raw[feat])).await;
    let live = view(&client, addr, &c.body.session.id).await.body;
    drop(client);
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();

    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["schema"], "tafa.session_snapshot");
    let saved: Vec<SessionView> = serde_json::from_value(doc["sessions"].clone()).unwrap();
    assert_eq!(saved, vec![live]);
}
