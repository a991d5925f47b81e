use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use tafa_core::artifact::{self, Artifact};
use tafa_core::distill::{dagger_train, export_tree_dot, teacher_agreement, DaggerConfig, Variant};
use tafa_core::eval::{
    budget_ablation, emit_curves, evaluate_policy, run_sweep, Experiment, Method, SearchParams, SweepConfig,
};
use tafa_core::policy::{PolicyBundle, RolloutTrace};
use tafa_core::TafaError;

use crate::config::Resolver;
use crate::data::{self, parse_list};
use crate::{AblationArgs, CliError, DataArgs, DistillArgs, Output, RolloutArgs, SearchArgs, ServeArgs, SweepArgs};

/// Core errors caused by bad settings are usage errors; the rest are data
/// errors.
fn core(e: TafaError) -> CliError {
    match e {
        TafaError::InvalidArgument(_) | TafaError::CandidateBudget { .. } | TafaError::EnumerationBudget { .. } => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Data(other.to_string()),
    }
}

fn out_dir(r: &mut Resolver, flag: Option<PathBuf>, default: &str) -> Result<PathBuf, CliError> {
    let dir = r.or("out", flag, PathBuf::from(default))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn check_lambda(lambda: f64) -> Result<f64, CliError> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(lambda)
    } else {
        Err(CliError::Usage(format!("--lambda must be finite and >= 0, got {lambda}")))
    }
}

fn load_bundle(path: &Path) -> Result<PolicyBundle, CliError> {
    PolicyBundle::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn generate(
    out: &Output,
    cfg: Option<&Path>,
    data_args: DataArgs,
    seed: Option<u64>,
    dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut r = Resolver::load("generate", cfg)?;
    let seed = r.or("seed", seed, 0)?;
    let src = data::resolve(&mut r, data_args, seed)?;
    let dir = out_dir(&mut r, dir, "tafa-generate")?;
    let data_path = dir.join("data.csv");
    let cost_path = dir.join("costs.csv");
    src.data.write_csv(&data_path, "label")?;
    src.costs.write_csv(&cost_path, &src.data.feature_names)?;
    let manifest = r.finish(&dir, vec![data_path.clone(), cost_path.clone()])?;
    out.line(format!(
        "wrote {} rows x {} features to {}",
        src.data.n_rows(),
        src.data.n_features(),
        data_path.display()
    ));
    out.summary(&json!({
        "rows": src.data.n_rows(),
        "features": src.data.n_features(),
        "data": data_path,
        "costs": cost_path,
        "manifest": manifest,
    }));
    Ok(())
}

pub fn search(out: &Output, cfg: Option<&Path>, a: SearchArgs) -> Result<(), CliError> {
    let mut r = Resolver::load("search", cfg)?;
    let lambda = check_lambda(r.req("lambda", a.lambda)?)?;
    let seed = r.or("seed", a.seed, 0)?;
    r.seed(seed);
    let params = SearchParams {
        templates: r.or("T", a.templates, 16)?,
        candidates: r.or("S", a.candidates, 2500)?,
        rounds: r.or("R", a.rounds, 3)?,
        drop_probability: r.or("drop-probability", a.drop_probability, 0.5)?,
    };
    let k = r.or("k", a.k, 10)?;
    let test_fraction = r.or("test-fraction", a.test_fraction, 0.2)?;
    let o_init: Option<usize> = r.opt("o-init", a.o_init)?;
    let auto = r.flag("auto-init", a.auto_init)?;
    if o_init.is_some() && auto {
        return Err(CliError::Usage("--o-init and --auto-init are exclusive".into()));
    }
    let src = data::resolve(&mut r, a.data, seed)?;
    let dir = out_dir(&mut r, a.out, "tafa-search")?;

    let mut exp = Experiment::prepare(&src.data, &src.costs, test_fraction, seed).map_err(core)?;
    let mut config = exp.search_config(&params, lambda, params.rounds);
    if let Some(o) = o_init {
        if o >= src.data.n_features() {
            return Err(CliError::Usage(format!(
                "--o-init {o} out of range for {} features",
                src.data.n_features()
            )));
        }
        config.o_init = o;
    }
    let (library, outcome) = exp.search(&config).map_err(core)?;
    for (round, g) in outcome.per_round_objective.iter().enumerate() {
        out.line(format!("round {round}: g = {g:.6}"));
    }
    let bundle = exp.bundle(&src.name, library.clone(), k).map_err(core)?;
    let policy = bundle.policy(None, None).map_err(core)?;
    let eval = evaluate_policy(&policy, &exp.test.features, &exp.test.labels, lambda)?;

    let library_path = dir.join("library.json");
    let bundle_path = dir.join("bundle.json");
    artifact::save(&library, &library_path)?;
    bundle.save(&bundle_path)?;
    let manifest = r.finish(&dir, vec![library_path.clone(), bundle_path.clone()])?;

    let names = &src.data.feature_names;
    out.line(format!(
        "o_init = {} ({}), {} templates, best round {}",
        library.o_init,
        names[library.o_init],
        library.templates.len(),
        outcome.best_round
    ));
    for (b, t) in library.templates.iter().enumerate() {
        let feats: Vec<&str> = t.indices().iter().map(|&d| names[d].as_str()).collect();
        out.line(format!("  b{b}: {}", feats.join(" ")));
    }
    out.line(format!(
        "test accuracy {:.4}, mean acquisitions {:.3}, full-feature accuracy {:.4}",
        eval.accuracy,
        eval.mean_acquisitions,
        exp.full_feature_accuracy()?
    ));
    out.line(format!("wrote {} and {}", library_path.display(), bundle_path.display()));
    out.summary(&json!({
        "o_init": library.o_init,
        "templates": library.templates,
        "objective": outcome.objective,
        "per_round_objective": outcome.per_round_objective,
        "accuracy": eval.accuracy,
        "mean_acquisitions": eval.mean_acquisitions,
        "library": library_path,
        "bundle": bundle_path,
        "manifest": manifest,
    }));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub bundle: String,
    pub raw_values: Vec<f64>,
    pub label: Option<usize>,
    pub feature_names: Vec<String>,
    pub step_costs: Vec<f64>,
    pub trace: RolloutTrace,
}

impl Artifact for TraceFile {
    const SCHEMA: &'static str = "tafa.rollout_trace";
    const VERSION: u32 = 1;
}

pub fn rollout(out: &Output, cfg: Option<&Path>, a: RolloutArgs) -> Result<(), CliError> {
    let mut r = Resolver::load("rollout", cfg)?;
    let bundle_path: PathBuf = r.req("bundle", a.bundle)?;
    let seed = r.or("seed", a.seed, 0)?;
    let bundle = load_bundle(&bundle_path)?;
    let dim = bundle.dim();
    let row: Option<usize> = r.opt("row", a.row)?;
    let values: Option<String> = r.opt("values", a.values)?;
    let (raw, label) = match (row, values) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --row or --values".into())),
        (None, None) => return Err(CliError::Usage("an instance is required: --row N or --values".into())),
        (None, Some(text)) => {
            let raw = parse_list::<f64>("values", &text).map_err(|e| CliError::Data(e.to_string()))?;
            (raw, None)
        }
        (Some(i), None) => {
            let src = data::resolve(&mut r, a.data, seed)?;
            if src.data.n_features() != dim {
                return Err(CliError::Data(format!(
                    "dataset has {} features, bundle expects {dim}",
                    src.data.n_features()
                )));
            }
            if i >= src.data.n_rows() {
                return Err(CliError::Data(format!("row {i} out of range for {} rows", src.data.n_rows())));
            }
            (src.data.features.row(i).to_vec(), Some(src.data.labels[i]))
        }
    };
    if raw.len() != dim {
        return Err(CliError::Data(format!("instance has {} values, bundle expects {dim}", raw.len())));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Data("instance values must be finite".into()));
    }
    let lambda = r.opt("lambda", a.lambda)?.map(check_lambda).transpose()?;
    let k: Option<usize> = r.opt("k", a.k)?;
    let max_steps: Option<usize> = r.opt("max-steps", a.max_steps)?;
    let dir = out_dir(&mut r, a.out, "tafa-rollout")?;

    let policy = bundle.policy(lambda, k).map_err(core)?;
    let z = bundle.scaling.apply_row(&raw);
    let trace = policy.rollout(&z, max_steps)?;
    let step_costs: Vec<f64> = trace.acquired.iter().map(|&d| bundle.costs.cost(d)).collect();
    let names = &bundle.feature_names;
    for (i, &d) in trace.acquired.iter().enumerate() {
        out.line(format!(
            "{i:>3}  acquire {:<8} = {:<12} cost {}",
            names[d], raw[d], step_costs[i]
        ));
    }
    let class = &bundle.class_names[trace.predicted_class];
    out.line(format!(
        "predict {class} (p = {:.4}), total cost {}{}",
        trace.final_prediction[trace.predicted_class],
        trace.total_cost,
        if trace.capped { ", step cap reached" } else { "" }
    ));
    if let Some(y) = label {
        out.line(format!("true label {}", bundle.class_names[y]));
    }
    let file = TraceFile {
        bundle: bundle_path.display().to_string(),
        raw_values: raw,
        label,
        feature_names: names.clone(),
        step_costs,
        trace,
    };
    let trace_path = dir.join("trace.json");
    artifact::save(&file, &trace_path)?;
    let manifest = r.finish(&dir, vec![trace_path.clone()])?;
    out.summary(&json!({
        "acquired": file.trace.acquired,
        "predicted_class": file.trace.predicted_class,
        "class_name": class,
        "probabilities": file.trace.final_prediction,
        "total_cost": file.trace.total_cost,
        "trace": trace_path,
        "manifest": manifest,
    }));
    Ok(())
}

pub fn distill(out: &Output, cfg: Option<&Path>, a: DistillArgs) -> Result<(), CliError> {
    let mut r = Resolver::load("distill", cfg)?;
    let bundle_path: PathBuf = r.req("bundle", a.bundle)?;
    let variant_name = r.or("variant", a.variant, Variant::PerCardinality.name().to_string())?;
    let variant: Variant = variant_name.parse().map_err(core)?;
    let leaf_limit = r.or("leaves", a.leaves, 4)?;
    let iterations = r.or("iterations", a.iterations, 5)?;
    let max_instances = r.or("max-instances", a.max_instances, 2000)?;
    let seed = r.or("seed", a.seed, 0)?;
    r.seed(seed);
    let dir = out_dir(&mut r, a.out, "tafa-distill")?;
    let bundle = load_bundle(&bundle_path)?;
    let policy = bundle.policy(None, None).map_err(core)?;
    let config = DaggerConfig {
        variant,
        leaf_limit,
        iterations,
        seed,
        max_instances: (max_instances > 0).then_some(max_instances),
    };
    let outcome = dagger_train(&policy, &bundle.train_features, &config).map_err(core)?;
    let ensemble = &outcome.ensemble;

    let sample: Vec<usize> = (0..bundle.train_features.rows().min(500)).collect();
    let agreement = teacher_agreement(ensemble, &policy, &bundle.train_features.select_rows(&sample));

    let ensemble_path = dir.join("ensemble.json");
    artifact::save(ensemble, &ensemble_path)?;
    let tree_dir = dir.join("trees");
    std::fs::create_dir_all(&tree_dir)?;
    let descriptions: Vec<String> = bundle
        .library
        .templates
        .iter()
        .map(|t| {
            t.indices()
                .iter()
                .map(|&d| bundle.feature_names[d].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let mut artifacts = vec![ensemble_path.clone()];
    for (m, tree) in &ensemble.trees {
        let p = tree_dir.join(format!("tree_{m:02}.dot"));
        std::fs::write(&p, export_tree_dot(tree, &bundle.feature_names, &descriptions))?;
        artifacts.push(p);
    }
    let manifest = r.finish(&dir, artifacts)?;

    out.line(format!(
        "{} student: {} trees, {} leaves in total",
        variant.name(),
        ensemble.trees.len(),
        ensemble.complexity()
    ));
    out.line(format!("aggregated states per iteration: {:?}", outcome.dataset_sizes));
    out.line(format!(
        "teacher agreement on {} training rows: label {:.3}, action {:.3} over {} states",
        sample.len(),
        agreement.label,
        agreement.action,
        agreement.states
    ));
    out.line(format!("wrote {} and {}", ensemble_path.display(), tree_dir.display()));
    out.summary(&json!({
        "variant": variant.name(),
        "action_space": ensemble.action_space,
        "trees": ensemble.trees.len(),
        "leaves": ensemble.complexity(),
        "dataset_sizes": outcome.dataset_sizes,
        "label_agreement": agreement.label,
        "action_agreement": agreement.action,
        "ensemble": ensemble_path,
        "manifest": manifest,
    }));
    Ok(())
}

pub fn sweep(out: &Output, cfg: Option<&Path>, a: SweepArgs) -> Result<(), CliError> {
    let mut r = Resolver::load("sweep", cfg)?;
    let defaults = SweepConfig::default();
    let grid: Vec<f64> = r.list(
        "lambda-grid",
        a.lambda_grid,
        vec![defaults.lambda_low, defaults.lambda_high, defaults.lambda_step],
    )?;
    let [lambda_low, lambda_high, lambda_step] = grid[..] else {
        return Err(CliError::Usage("--lambda-grid takes low,high,step".into()));
    };
    let methods: Vec<Method> = r.list("methods", a.methods, defaults.methods.clone())?;
    let seeds: Vec<u64> = r.list("seeds", a.seeds, defaults.seeds.clone())?;
    for &s in &seeds {
        r.seed(s);
    }
    let config = SweepConfig {
        lambda_low,
        lambda_high,
        lambda_step,
        k: r.or("k", a.k, defaults.k)?,
        seeds: seeds.clone(),
        methods,
        search: SearchParams {
            templates: r.or("T", a.templates, defaults.search.templates)?,
            candidates: r.or("S", a.candidates, defaults.search.candidates)?,
            rounds: r.or("R", a.rounds, defaults.search.rounds)?,
            drop_probability: defaults.search.drop_probability,
        },
        test_fraction: r.or("test-fraction", a.test_fraction, defaults.test_fraction)?,
        leaf_limit: r.or("leaves", a.leaves, defaults.leaf_limit)?,
        dagger_iterations: r.or("dagger-iterations", a.dagger_iterations, defaults.dagger_iterations)?,
        dagger_instances: defaults.dagger_instances,
    };
    config.validate().map_err(core)?;
    let first = *seeds.first().expect("validated nonempty");
    let src = data::resolve(&mut r, a.data, first)?;
    let dir = out_dir(&mut r, a.out, "tafa-sweep")?;
    out.line(format!(
        "sweeping {} methods x {} lambdas x {} seeds (test fraction {})",
        config.methods.len(),
        config.lambdas().map_err(core)?.len(),
        seeds.len(),
        config.test_fraction
    ));
    let result = run_sweep(&src.data, &src.costs, &config).map_err(core)?;
    let mut artifacts = Vec::new();
    if !result.records.is_empty() {
        emit_curves(&result.records, &dir)?;
        for f in ["records.csv", "accuracy_vs_acquisitions.csv", "log_time.csv"] {
            artifacts.push(dir.join(f));
        }
    }
    if !result.failures.is_empty() {
        let p = dir.join("failures.json");
        std::fs::write(
            &p,
            serde_json::to_string_pretty(&result.failures).map_err(|e| CliError::Data(e.to_string()))?,
        )?;
        artifacts.push(p);
    }
    let manifest = r.finish(&dir, artifacts)?;
    out.line(format!("{:<12} {:>6} {:>5} {:>9} {:>8} {:>10}", "method", "lambda", "seed", "accuracy", "acq", "reward"));
    for rec in &result.records {
        out.line(format!(
            "{:<12} {:>6.2} {:>5} {:>9.4} {:>8.3} {:>10.4}",
            rec.method, rec.lambda, rec.seed, rec.accuracy, rec.mean_acquisitions, rec.mean_reward
        ));
    }
    for f in &result.failures {
        eprintln!("cell {} lambda {} seed {} failed: {}", f.method, f.lambda, f.seed, f.message);
    }
    out.summary(&json!({
        "records": result.records.len(),
        "failures": result.failures,
        "out": dir,
        "manifest": manifest,
    }));
    if result.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} sweep cells failed", result.failures.len())))
    }
}

pub fn ablation(out: &Output, cfg: Option<&Path>, a: AblationArgs) -> Result<(), CliError> {
    let mut r = Resolver::load("ablation", cfg)?;
    let budgets: Vec<usize> = r.list("budgets", a.budgets, vec![2500, 5000, 7500, 10000])?;
    let rounds = r.or("R", a.rounds, 3)?;
    let templates = r.or("T", a.templates, 16)?;
    let lambda = check_lambda(r.or("lambda", a.lambda, 0.02)?)?;
    let k = r.or("k", a.k, 10)?;
    let test_fraction = r.or("test-fraction", a.test_fraction, 0.2)?;
    let seeds: Vec<u64> = r.list("seeds", a.seeds, vec![0, 1, 2, 3, 4])?;
    if seeds.is_empty() || budgets.is_empty() {
        return Err(CliError::Usage("ablation needs at least one seed and one budget".into()));
    }
    for &s in &seeds {
        r.seed(s);
    }
    let src = data::resolve(&mut r, a.data, seeds[0])?;
    let dir = out_dir(&mut r, a.out, "tafa-ablation")?;
    let mut rows = Vec::new();
    for &seed in &seeds {
        let exp = Experiment::prepare(&src.data, &src.costs, test_fraction, seed).map_err(core)?;
        rows.extend(budget_ablation(&exp, &budgets, rounds, templates, lambda, k).map_err(core)?);
    }
    let path = dir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Data(e.to_string()))?;
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush()?;
    let manifest = r.finish(&dir, vec![path.clone()])?;
    out.line(format!("{:>7} {:<10} {:>5} {:>10} {:>9} {:>8}", "budget", "arm", "seed", "g", "accuracy", "acq"));
    for row in &rows {
        out.line(format!(
            "{:>7} {:<10} {:>5} {:>10.5} {:>9.4} {:>8.3}",
            row.budget, row.arm, row.seed, row.objective, row.accuracy, row.mean_acquisitions
        ));
    }
    out.summary(&json!({ "rows": rows, "csv": path, "manifest": manifest }));
    Ok(())
}

pub fn serve(out: &Output, cfg: Option<&Path>, a: ServeArgs) -> Result<(), CliError> {
    let mut r = Resolver::load("serve", cfg)?;
    let entries: Vec<String> = r.or("bundle", (!a.bundle.is_empty()).then_some(a.bundle), Vec::new())?;
    let bind = r.or("bind", a.bind, "127.0.0.1".to_string())?;
    let port = r.or("port", a.port, 8080u16)?;
    let snapshot: Option<PathBuf> = r.opt("snapshot", a.snapshot)?;
    let dir = out_dir(&mut r, a.out, "tafa-serve")?;
    let mut libraries = Vec::new();
    for entry in &entries {
        let (id, path) = match entry.split_once('=') {
            Some((id, path)) => (Some(id.to_string()), PathBuf::from(path)),
            None => (None, PathBuf::from(entry)),
        };
        let bundle = load_bundle(&path)?;
        let id = id.unwrap_or_else(|| bundle.name.clone());
        if libraries.iter().any(|(other, _)| *other == id) {
            return Err(CliError::Usage(format!("duplicate library id `{id}`; use id=path")));
        }
        libraries.push((id, bundle));
    }
    let addr: std::net::SocketAddr = format!("{bind}:{port}")
        .parse()
        .map_err(|_| CliError::Usage(format!("cannot parse address {bind}:{port}")))?;
    let ids: Vec<String> = libraries.iter().map(|(id, _)| id.clone()).collect();
    let app = tafa_service::AppState::new(libraries);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    rt.block_on(async {
        let (local, listener) = tafa_service::bind(addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        out.line(format!("listening on http://{local} with libraries {ids:?}"));
        out.summary(&json!({ "listening": local.to_string(), "libraries": ids }));
        use std::io::Write;
        let _ = std::io::stdout().flush();
        tafa_service::serve(listener, Arc::clone(&app), snapshot.clone())
            .await
            .map_err(|e| CliError::Failed(e.to_string()))
    })?;
    r.finish(&dir, snapshot.into_iter().collect())?;
    Ok(())
}
