use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

use serde_json::Value;

use tafa_core::artifact;
use tafa_core::dataset::read_csv;
use tafa_core::eval::parse_records;
use tafa_core::search::TemplateLibrary;

fn tafa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tafa"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// One small library shared by the rollout, distill and serve tests.
fn shared() -> &'static (tempfile::TempDir, PathBuf) {
    static S: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    S.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let o = tafa(
            dir.path(),
            &["search", "--cube", "1200", "--lambda", "0.04", "--T", "5", "--S", "200", "--R", "1", "--seed", "2", "--out", "lib"],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let bundle = dir.path().join("lib/bundle.json");
        (dir, bundle)
    })
}

#[test]
fn search_writes_library_and_manifest_and_replays_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["search", "--cube", "1500", "--lambda", "0.02", "--T", "6", "--S", "250", "--R", "2", "--seed", "0", "--out", "a"];
    let o = tafa(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("round 0: g = ") && stdout.contains("round 2: g = "), "{stdout}");

    let lib: TemplateLibrary = artifact::load(dir.path().join("a/library.json")).unwrap();
    assert!(lib.templates.len() <= 6);
    assert!(lib.templates.iter().all(|t| t.contains(lib.o_init)));
    assert_eq!(lib.search_meta.rounds, 2);

    let manifest = json(dir.path().join("a/manifest.json"));
    assert_eq!(manifest["schema"], "tafa.run_manifest");
    assert_eq!(manifest["command"], "search");
    assert_eq!(manifest["seeds"], serde_json::json!([0]));
    assert_eq!(manifest["config"]["lambda"], 0.02);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 2);
    assert!(manifest["tool_version"].is_string());
    assert!(manifest["started_at_ms"].as_u64().unwrap() <= manifest["finished_at_ms"].as_u64().unwrap());

    // replay from the manifest into another directory
    let o = tafa(dir.path(), &["search", "--config", "a/manifest.json", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["library.json", "bundle.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs on replay");
    }
}

#[test]
fn zero_rounds_is_greedy_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = tafa(
        dir.path(),
        &["search", "--cube", "800", "--lambda", "0.1", "--T", "4", "--S", "100", "--R", "0", "--o-init", "3", "--out", "g"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lib: TemplateLibrary = artifact::load(dir.path().join("g/library.json")).unwrap();
    assert_eq!(lib.search_meta.rounds, 0);
    assert_eq!(lib.search_meta.per_round_objective.len(), 1);
    assert_eq!(lib.o_init, 3);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["search", "--cube", "800", "--T", "4"],
        &["search", "--cube", "800", "--lambda", "0.1", "--o-init", "3", "--auto-init"],
        &["search", "--cube", "800", "--lambda", "-1"],
        &["search", "--lambda", "0.1"],
        &["search", "--cube", "800", "--lambda", "0.1", "--o-init", "20"],
        &["search", "--cube", "800", "--lambda", "0.1", "--bogus"],
        &["sweep", "--cube", "800", "--lambda-grid", "0,1"],
        &["sweep", "--cube", "800", "--methods", "nope"],
        &["distill", "--variant", "per-cardinality"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = tafa(dir.path(), args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tafa.toml"),
        "seed = 4\n\n[search]\nlambda = 0.05\nT = 3\nS = 120\nR = 0\ncube = 900\n",
    )
    .unwrap();
    let o = tafa(dir.path(), &["--config", "tafa.toml", "search", "--T", "4", "--out", "c"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lib: TemplateLibrary = artifact::load(dir.path().join("c/library.json")).unwrap();
    assert_eq!(lib.lambda, 0.05);
    assert_eq!(lib.search_meta.templates, 4);
    assert_eq!(lib.search_meta.candidates, 120);
    assert_eq!(lib.search_meta.seed, 4);
    let m = json(dir.path().join("c/manifest.json"));
    assert_eq!(m["config"]["k"], 10);
    assert_eq!(m["config"]["T"], 4);
}

#[test]
fn rollout_trace_costs_add_up() {
    let (dir, bundle) = shared();
    let b = bundle.to_str().unwrap();
    let o = tafa(dir.path(), &["rollout", "--bundle", b, "--cube", "1200", "--seed", "2", "--row", "7", "--out", "r7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = json(dir.path().join("r7/trace.json"));
    assert_eq!(t["schema"], "tafa.rollout_trace");
    let steps = t["trace"]["steps"].as_array().unwrap();
    assert!(!steps.is_empty());
    let costs: f64 = t["step_costs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert_eq!(costs, t["trace"]["total_cost"].as_f64().unwrap());
    assert_eq!(t["step_costs"].as_array().unwrap().len(), t["trace"]["acquired"].as_array().unwrap().len());
    let p: f64 = t["trace"]["final_prediction"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-12);

    // inline values in --json mode
    let values: Vec<String> = (0..20).map(|i| format!("{}", (i as f64) / 20.0)).collect();
    let o = tafa(dir.path(), &["--json", "rollout", "--bundle", b, "--values", &values.join(","), "--out", "rv"]);
    assert_eq!(code(&o), 0);
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary["acquired"].as_array().unwrap().len() >= 1);
}

#[test]
fn data_errors_exit_three() {
    let (dir, bundle) = shared();
    let b = bundle.to_str().unwrap();
    let o = tafa(dir.path(), &["rollout", "--bundle", b, "--values", "0.1,0.2,0.3"]);
    assert_eq!(code(&o), 3);
    let o = tafa(dir.path(), &["rollout", "--bundle", b, "--values", "0.1,abc"]);
    assert_eq!(code(&o), 3);
    let o = tafa(dir.path(), &["rollout", "--bundle", "missing.json", "--values", "1"]);
    assert_eq!(code(&o), 3);
    let o = tafa(dir.path(), &["search", "--data", "missing.csv", "--lambda", "0.1"]);
    assert_eq!(code(&o), 3);

    // a dataset whose width disagrees with the bundle
    let csv = dir.path().join("narrow.csv");
    std::fs::write(&csv, "a,b,label\n0.1,0.2,x\n0.3,0.4,y\n").unwrap();
    let o = tafa(dir.path(), &["rollout", "--bundle", b, "--data", csv.to_str().unwrap(), "--row", "0"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn distill_writes_ensemble_and_graphs() {
    let (dir, bundle) = shared();
    let b = bundle.to_str().unwrap();
    let o = tafa(
        dir.path(),
        &["distill", "--bundle", b, "--variant", "feature-act", "--iterations", "2", "--max-instances", "200", "--out", "fa"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e = json(dir.path().join("fa/ensemble.json"));
    assert_eq!(e["schema"], "tafa.tree_ensemble");
    assert_eq!(e["action_space"]["kind"], "features");
    assert_eq!(e["action_space"]["count"], 20);
    assert!(dir.path().join("fa/trees/tree_00.dot").exists());

    let o = tafa(
        dir.path(),
        &["distill", "--bundle", b, "--iterations", "2", "--max-instances", "200", "--out", "pc"],
    );
    assert_eq!(code(&o), 0);
    let e = json(dir.path().join("pc/ensemble.json"));
    assert_eq!(e["variant"], "per-cardinality");
    assert_eq!(e["action_space"]["kind"], "templates");
    let dots = std::fs::read_dir(dir.path().join("pc/trees")).unwrap().count();
    assert_eq!(dots, e["trees"].as_object().unwrap().len());
    let dot = std::fs::read_to_string(dir.path().join("pc/trees/tree_01.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
}

#[test]
fn certify_defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = tafa(dir.path(), &["--json", "certify"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["passed"], true);
    assert_eq!(s["violations"], 0);
    let report = json(dir.path().join("tafa-certify/certification.json"));
    assert_eq!(report["schema"], "tafa.certification");
    assert_eq!(report["greedy_bound"].as_array().unwrap().len(), 20);
    assert_eq!(report["bound_chain"].as_array().unwrap().len(), 5);
}

#[test]
fn sweep_over_table_grid_writes_sixteen_rows_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let o = tafa(
        dir.path(),
        &[
            "sweep", "--cube", "500", "--lambda-grid", "0.0,0.31,0.02", "--k", "5", "--methods", "tafa-greedy,static",
            "--seeds", "0", "--T", "2", "--S", "20", "--R", "0", "--out", "sw",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records = parse_records(dir.path().join("sw/records.csv")).unwrap();
    for m in ["tafa-greedy", "static"] {
        assert_eq!(records.iter().filter(|r| r.method == m).count(), 16);
    }
    assert!(dir.path().join("sw/accuracy_vs_acquisitions.csv").exists());
    assert!(dir.path().join("sw/log_time.csv").exists());
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["g1", "g2"] {
        let o = tafa(dir.path(), &["generate", "--cube", "300", "--seed", "9", "--out", out]);
        assert_eq!(code(&o), 0);
    }
    let a = std::fs::read(dir.path().join("g1/data.csv")).unwrap();
    let b = std::fs::read(dir.path().join("g2/data.csv")).unwrap();
    assert_eq!(a, b);
    let (data, costs) = read_csv(dir.path().join("g1/data.csv"), "label", Some(&dir.path().join("g1/costs.csv"))).unwrap();
    assert_eq!((data.n_rows(), data.n_features(), costs.dim()), (300, 20, 20));
}

#[test]
fn serve_answers_health_and_libraries() {
    let (dir, bundle) = shared();
    let mut child = Command::new(env!("CARGO_BIN_EXE_tafa"))
        .current_dir(dir.path())
        .args(["--json", "serve", "--bundle", &format!("demo={}", bundle.display()), "--port", "0", "--out", "srv"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let started: Value = serde_json::from_str(&line).unwrap();
    let addr = started["listening"].as_str().unwrap().to_string();

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let (health, libs) = rt.block_on(async {
        let c = reqwest::Client::new();
        let h: Value = c.get(format!("http://{addr}/health")).send().await.unwrap().json().await.unwrap();
        let l: Value = c.get(format!("http://{addr}/libraries")).send().await.unwrap().json().await.unwrap();
        (h, l)
    });
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(libs["libraries"][0]["id"], "demo");
    assert_eq!(libs["libraries"][0]["template_count"].as_u64().unwrap() as usize, {
        let lib: TemplateLibrary = artifact::load(dir.path().join("lib/library.json")).unwrap();
        lib.templates.len()
    });
}
