//! Evaluation protocol: per-seed experiment preparation, lambda sweeps,
//! the static-selection baseline, the candidate-budget ablation and
//! decision-time scaling.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split, CostModel, Dataset, Matrix, Scaling};
use crate::distill::{dagger_train, student_rollout, DaggerConfig, TreeEnsemble, Variant};
use crate::error::{Result, TafaError};
use crate::policy::{PolicyBundle, PolicyState, TafaPolicy, TemplateLossCache};
use crate::predictor::{fit_gaussian_nb, task_loss, GaussianNB, NbScorer, SubsetScorer, TaskLoss};
use crate::search::{
    empirical_objective, iterative_mutate_search, practical_search, select_initial_feature, LossCache, LossMatrix,
    SearchConfig, SearchOutcome, Template, TemplateLibrary,
};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TafaGreedy,
    TafaMutate,
    TafaInterp,
    Static,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::TafaGreedy => "tafa-greedy",
            Method::TafaMutate => "tafa-mutate",
            Method::TafaInterp => "tafa-interp",
            Method::Static => "static",
        }
    }

    pub const ALL: [Method; 4] = [Method::TafaGreedy, Method::TafaMutate, Method::TafaInterp, Method::Static];
}

impl std::str::FromStr for Method {
    type Err = TafaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tafa-greedy" => Ok(Method::TafaGreedy),
            "tafa-mutate" | "tafa" => Ok(Method::TafaMutate),
            "tafa-interp" => Ok(Method::TafaInterp),
            "static" => Ok(Method::Static),
            other => Err(TafaError::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// `low, low + step, ...` up to and including `high`.
pub fn lambda_grid(low: f64, high: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !low.is_finite() || !high.is_finite() || low < 0.0 || high < low {
        return Err(TafaError::invalid("lambda grid needs 0 <= low <= high and step > 0"));
    }
    let mut out = Vec::new();
    let mut i = 0u32;
    loop {
        let v = low + f64::from(i) * step;
        if v > high + 1e-12 {
            break;
        }
        out.push((v * 1e12).round() / 1e12);
        i += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub templates: usize,
    pub candidates: usize,
    pub rounds: usize,
    pub drop_probability: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            templates: 16,
            candidates: 2500,
            rounds: 3,
            drop_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub lambda_step: f64,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub search: SearchParams,
    pub test_fraction: f64,
    pub leaf_limit: usize,
    pub dagger_iterations: usize,
    pub dagger_instances: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lambda_low: 0.0,
            lambda_high: 0.31,
            lambda_step: 0.02,
            k: 10,
            seeds: vec![0, 1, 2, 3, 4],
            methods: vec![Method::TafaMutate, Method::Static],
            search: SearchParams::default(),
            test_fraction: 0.2,
            leaf_limit: 4,
            dagger_iterations: 5,
            dagger_instances: Some(2000),
        }
    }
}

impl SweepConfig {
    pub fn lambdas(&self) -> Result<Vec<f64>> {
        lambda_grid(self.lambda_low, self.lambda_high, self.lambda_step)
    }

    pub fn validate(&self) -> Result<()> {
        self.lambdas()?;
        if self.k < 1 || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(TafaError::invalid("sweep needs k >= 1, a seed and a method"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    pub lambda: f64,
    pub accuracy: f64,
    pub mean_acquisitions: f64,
    pub mean_decision_time: f64,
    pub mean_reward: f64,
    pub seed: u64,
}

pub const EVAL_COLUMNS: [&str; 7] = [
    "method",
    "lambda",
    "accuracy",
    "mean_acquisitions",
    "mean_decision_time",
    "mean_reward",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub method: String,
    pub lambda: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub records: Vec<EvalRecord>,
    pub failures: Vec<SweepFailure>,
}

/// One rollout's metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub correct: bool,
    pub acquisitions: usize,
    pub total_cost: f64,
    pub cross_entropy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_acquisitions: f64,
    pub mean_decision_time: f64,
    pub mean_reward: f64,
    pub outcomes: Vec<InstanceOutcome>,
}

impl Evaluation {
    /// Aggregates with reward `-cross_entropy - lambda * total_cost`.
    pub fn from_outcomes(outcomes: Vec<InstanceOutcome>, lambda: f64) -> Self {
        let n = outcomes.len().max(1) as f64;
        Evaluation {
            accuracy: outcomes.iter().filter(|o| o.correct).count() as f64 / n,
            mean_acquisitions: outcomes.iter().map(|o| o.acquisitions as f64).sum::<f64>() / n,
            mean_decision_time: outcomes.iter().map(|o| o.seconds).sum::<f64>() / n,
            mean_reward: outcomes
                .iter()
                .map(|o| -o.cross_entropy - lambda * o.total_cost)
                .sum::<f64>()
                / n,
            outcomes,
        }
    }

    pub fn record(&self, method: Method, lambda: f64, seed: u64) -> EvalRecord {
        EvalRecord {
            method: method.name().to_string(),
            lambda,
            accuracy: self.accuracy,
            mean_acquisitions: self.mean_acquisitions,
            mean_decision_time: self.mean_decision_time,
            mean_reward: self.mean_reward,
            seed,
        }
    }
}

/// Loss columns kept across searches before the cache is dropped.
const CACHE_BYTES: usize = 1 << 30;

/// One seed's split, scaling and fitted predictor. Features are
/// standardized with statistics of the training rows only.
pub struct Experiment {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub scaling: Scaling,
    pub model: GaussianNB,
    pub costs: CostModel,
    pub cache: LossCache,
}

impl Experiment {
    pub fn prepare(data: &Dataset, costs: &CostModel, test_fraction: f64, seed: u64) -> Result<Self> {
        if costs.dim() != data.n_features() {
            return Err(TafaError::DimensionMismatch {
                expected: data.n_features(),
                actual: costs.dim(),
            });
        }
        let sp = split(&data.labels, test_fraction, seed)?;
        let raw_train = data.subset(&sp.train);
        let scaling = Scaling::fit(&raw_train.features);
        let mut train = raw_train;
        train.features = scaling.apply(&train.features);
        let mut test = data.subset(&sp.test);
        test.features = scaling.apply(&test.features);
        let all: Vec<usize> = (0..train.n_rows()).collect();
        let model = fit_gaussian_nb(&train, &all, VARIANCE_FLOOR)?;
        Ok(Experiment {
            seed,
            train,
            test,
            scaling,
            model,
            costs: costs.clone(),
            cache: LossCache::new(),
        })
    }

    pub fn scorer(&self, loss: TaskLoss) -> NbScorer<'_> {
        NbScorer::new(&self.model, &self.train.features, &self.train.labels, loss)
    }

    pub fn o_init(&self, lambda: f64) -> usize {
        select_initial_feature(&self.scorer(TaskLoss::CrossEntropy), &self.costs, lambda)
    }

    pub fn search_config(&self, params: &SearchParams, lambda: f64, rounds: usize) -> SearchConfig {
        SearchConfig {
            templates: params.templates,
            candidates: params.candidates,
            rounds,
            lambda,
            o_init: self.o_init(lambda),
            seed: self.seed,
            drop_probability: params.drop_probability,
        }
    }

    /// Greedy-only (`rounds = 0`) or iterated-mutation search with the
    /// cross-entropy objective. Loss columns are shared across calls.
    pub fn search(&mut self, config: &SearchConfig) -> Result<(TemplateLibrary, SearchOutcome)> {
        let column_bytes = 8 * self.train.n_rows().max(1);
        if self.cache.len() * column_bytes > CACHE_BYTES {
            self.cache = LossCache::new();
        }
        let scorer = NbScorer::new(&self.model, &self.train.features, &self.train.labels, TaskLoss::CrossEntropy);
        let outcome = if config.rounds == 0 {
            practical_search(&scorer, &self.costs, config, None, &mut self.cache)?
        } else {
            iterative_mutate_search(&scorer, &self.costs, config, &mut self.cache)?
        };
        let lib = TemplateLibrary::from_search(config, &outcome, self.train.feature_names.clone());
        Ok((lib, outcome))
    }

    pub fn bundle(&self, name: &str, library: TemplateLibrary, k: usize) -> Result<PolicyBundle> {
        PolicyBundle::new(
            name,
            library,
            self.model.clone(),
            self.train.features.clone(),
            self.train.labels.clone(),
            self.costs.clone(),
            self.scaling.clone(),
            self.train.feature_names.clone(),
            self.train.class_names.clone(),
            k,
        )
    }

    /// Full-feature predictor accuracy on the test rows.
    pub fn full_feature_accuracy(&self) -> Result<f64> {
        let all: Vec<usize> = (0..self.test.n_features()).collect();
        let scorer = NbScorer::new(&self.model, &self.test.features, &self.test.labels, TaskLoss::ShiftedZeroOne {
            shift: 0.0,
        });
        let losses = scorer.prediction_losses(&all);
        Ok(-losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Greedy forward selection for the static baseline on training rows.
    pub fn static_template(&self, lambda: f64, o_init: usize, budget: usize) -> Result<Template> {
        static_baseline(&self.scorer(TaskLoss::CrossEntropy), &self.costs, lambda, o_init, budget)
    }
}

/// Rolls the policy out on every row of `instances`, sequentially, timing
/// each rollout.
pub fn evaluate_policy(policy: &TafaPolicy<'_>, instances: &Matrix, labels: &[usize], lambda: f64) -> Result<Evaluation> {
    let mut outcomes = Vec::with_capacity(instances.rows());
    for i in 0..instances.rows() {
        let start = Instant::now();
        let trace = policy.rollout(instances.row(i), None)?;
        let seconds = start.elapsed().as_secs_f64();
        outcomes.push(InstanceOutcome {
            correct: trace.predicted_class == labels[i],
            acquisitions: trace.acquired.len(),
            total_cost: trace.total_cost,
            cross_entropy: task_loss(&trace.final_prediction, labels[i]),
            seconds,
        });
    }
    Ok(Evaluation::from_outcomes(outcomes, lambda))
}

pub fn evaluate_student(
    ensemble: &TreeEnsemble,
    policy: &TafaPolicy<'_>,
    instances: &Matrix,
    labels: &[usize],
    lambda: f64,
) -> Result<Evaluation> {
    let mut outcomes = Vec::with_capacity(instances.rows());
    for i in 0..instances.rows() {
        let start = Instant::now();
        let trace = student_rollout(instances.row(i), ensemble, policy, None)?;
        let seconds = start.elapsed().as_secs_f64();
        outcomes.push(InstanceOutcome {
            correct: trace.predicted_class == labels[i],
            acquisitions: trace.acquired.len(),
            total_cost: trace.total_cost,
            cross_entropy: task_loss(&trace.final_prediction, labels[i]),
            seconds,
        });
    }
    Ok(Evaluation::from_outcomes(outcomes, lambda))
}

/// Greedy forward selection of one feature set: starting from `{o_init}`,
/// add the feature that most lowers the mean subset loss, stopping at
/// `budget` features or when no addition lowers it.
pub fn static_baseline(
    scorer: &dyn SubsetScorer,
    costs: &CostModel,
    lambda: f64,
    o_init: usize,
    budget: usize,
) -> Result<Template> {
    let dim = scorer.n_features();
    if budget < 1 {
        return Err(TafaError::invalid("budget must be >= 1"));
    }
    let mean_e = |set: &[usize]| {
        let losses = scorer.prediction_losses(set);
        let pen = lambda * costs.total(set);
        losses.iter().map(|l| l + pen).sum::<f64>() / losses.len() as f64
    };
    let mut current = Template::new(vec![o_init], o_init, dim)?;
    let mut current_value = mean_e(current.indices());
    while current.len() < budget.min(dim) {
        let options: Vec<Template> = (0..dim)
            .filter(|d| !current.contains(*d))
            .map(|d| {
                let mut v = current.indices().to_vec();
                v.push(d);
                Template::new(v, o_init, dim)
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = options.par_iter().map(|t| mean_e(t.indices())).collect();
        let mut pick = 0;
        for i in 1..values.len() {
            if values[i] < values[pick] {
                pick = i;
            }
        }
        if values[pick] >= current_value {
            break;
        }
        current_value = values[pick];
        current = options[pick].clone();
    }
    Ok(current)
}

fn run_cell(exp: &mut Experiment, config: &SweepConfig, method: Method, lambda: f64) -> Result<EvalRecord> {
    let test_x = exp.test.features.clone();
    let test_y = exp.test.labels.clone();
    let library = match method {
        Method::Static => {
            let o_init = exp.o_init(lambda);
            let t = exp.static_template(lambda, o_init, exp.train.n_features())?;
            TemplateLibrary::with_templates(o_init, lambda, vec![t])
        }
        Method::TafaGreedy => exp.search(&exp.search_config(&config.search, lambda, 0))?.0,
        Method::TafaMutate | Method::TafaInterp => {
            exp.search(&exp.search_config(&config.search, lambda, config.search.rounds))?.0
        }
    };
    let scorer = exp.scorer(TaskLoss::CrossEntropy);
    let cache = TemplateLossCache::build(&scorer, &library.templates);
    let policy = TafaPolicy::new(
        &library,
        &exp.model,
        &cache,
        &exp.train.features,
        &exp.costs,
        lambda,
        config.k,
    )?;
    let eval = if method == Method::TafaInterp {
        let dagger = DaggerConfig {
            variant: Variant::PerCardinality,
            leaf_limit: config.leaf_limit,
            iterations: config.dagger_iterations,
            seed: exp.seed,
            max_instances: config.dagger_instances,
        };
        let out = dagger_train(&policy, &exp.train.features, &dagger)?;
        evaluate_student(&out.ensemble, &policy, &test_x, &test_y, lambda)?
    } else {
        evaluate_policy(&policy, &test_x, &test_y, lambda)?
    };
    Ok(eval.record(method, lambda, exp.seed))
}

/// Every `(seed, method, lambda)` cell. Failing cells are collected and
/// the sweep continues. Cells within a seed run sequentially so rollout
/// timings are not contended.
pub fn run_sweep(data: &Dataset, costs: &CostModel, config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let lambdas = config.lambdas()?;
    let mut result = SweepResult::default();
    for &seed in &config.seeds {
        let mut exp = match Experiment::prepare(data, costs, config.test_fraction, seed) {
            Ok(e) => e,
            Err(e) => {
                for m in &config.methods {
                    for &lambda in &lambdas {
                        result.failures.push(SweepFailure {
                            method: m.name().into(),
                            lambda,
                            seed,
                            message: e.to_string(),
                        });
                    }
                }
                continue;
            }
        };
        for &method in &config.methods {
            for &lambda in &lambdas {
                match run_cell(&mut exp, config, method, lambda) {
                    Ok(r) => result.records.push(r),
                    Err(e) => result.failures.push(SweepFailure {
                        method: method.name().into(),
                        lambda,
                        seed,
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    Ok(result)
}

/// Writes `records.csv`, `accuracy_vs_acquisitions.csv` and
/// `log_time.csv` under `out_dir`.
pub fn emit_curves(records: &[EvalRecord], out_dir: impl AsRef<Path>) -> Result<()> {
    if records.is_empty() {
        return Err(TafaError::invalid("no records to write"));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_records(records, dir.join("records.csv"))?;

    let mut w = csv::Writer::from_path(dir.join("accuracy_vs_acquisitions.csv"))?;
    w.write_record(["method", "seed", "lambda", "mean_acquisitions", "accuracy"])?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.lambda.to_string(),
            r.mean_acquisitions.to_string(),
            r.accuracy.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("log_time.csv"))?;
    w.write_record(["method", "seed", "lambda", "log10_mean_decision_time", "accuracy"])?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.lambda.to_string(),
            r.mean_decision_time.max(f64::MIN_POSITIVE).log10().to_string(),
            r.accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records(records: &[EvalRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(EVAL_COLUMNS) {
        return Err(TafaError::invalid(format!(
            "unexpected columns {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize().map(|row| row.map_err(TafaError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub budget: usize,
    pub arm: String,
    pub seed: u64,
    /// Empirical `g` of the returned collection on the training rows.
    pub objective: f64,
    pub accuracy: f64,
    pub mean_acquisitions: f64,
}

/// Practical search with `S` candidates in one round against iterated
/// mutation with `R` rounds of `S / R` candidates (rounded down).
pub fn budget_ablation(
    exp: &Experiment,
    budgets: &[usize],
    rounds: usize,
    templates: usize,
    lambda: f64,
    k: usize,
) -> Result<Vec<AblationRow>> {
    if rounds < 1 {
        return Err(TafaError::invalid("ablation needs R >= 1"));
    }
    let scorer = exp.scorer(TaskLoss::CrossEntropy);
    let o_init = exp.o_init(lambda);
    let mut rows = Vec::new();
    for &budget in budgets {
        for (arm, candidates, mutation_rounds) in [("practical", budget, 0), ("iterative", budget / rounds, rounds - 1)] {
            let config = SearchConfig {
                templates,
                candidates,
                rounds: mutation_rounds,
                lambda,
                o_init,
                seed: exp.seed,
                drop_probability: 0.5,
            };
            let mut cache = LossCache::new();
            let outcome = if mutation_rounds == 0 {
                practical_search(&scorer, &exp.costs, &config, None, &mut cache)?
            } else {
                iterative_mutate_search(&scorer, &exp.costs, &config, &mut cache)?
            };
            let library = TemplateLibrary::from_search(&config, &outcome, exp.train.feature_names.clone());
            let tcache = TemplateLossCache::build(&scorer, &library.templates);
            let policy = TafaPolicy::new(&library, &exp.model, &tcache, &exp.train.features, &exp.costs, lambda, k)?;
            let eval = evaluate_policy(&policy, &exp.test.features, &exp.test.labels, lambda)?;
            rows.push(AblationRow {
                budget,
                arm: arm.to_string(),
                seed: exp.seed,
                objective: outcome.objective,
                accuracy: eval.accuracy,
                mean_acquisitions: eval.mean_acquisitions,
            });
        }
    }
    Ok(rows)
}

/// Empirical `g` of `templates` on the experiment's training rows.
pub fn training_objective(exp: &Experiment, templates: &[Template], lambda: f64) -> f64 {
    let scorer = exp.scorer(TaskLoss::CrossEntropy);
    let mut cache = LossCache::new();
    let m = LossMatrix::build(&scorer, &exp.costs, lambda, templates.to_vec(), &mut cache);
    let all: Vec<usize> = (0..templates.len()).collect();
    empirical_objective(&m, &all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r_squared = if syy > 0.0 && sxx > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub templates: usize,
    pub seconds_per_decision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    pub fit: LinearFit,
}

/// Times one decision per state for libraries made of the first `size`
/// templates of `library`, taking the fastest of `repeats` passes. Passes
/// interleave the sizes so drift affects all of them alike.
#[allow(clippy::too_many_arguments)]
pub fn decision_time_scaling(
    library: &TemplateLibrary,
    model: &GaussianNB,
    train: &Matrix,
    train_labels: &[usize],
    costs: &CostModel,
    lambda: f64,
    k: usize,
    states: &[PolicyState],
    sizes: &[usize],
    repeats: usize,
) -> Result<ScalingReport> {
    if states.is_empty() || sizes.is_empty() || repeats == 0 {
        return Err(TafaError::invalid("scaling needs states, sizes and repeats"));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > library.templates.len()) {
        return Err(TafaError::invalid(format!(
            "size {s} not in 1..={}",
            library.templates.len()
        )));
    }
    let scorer = NbScorer::new(model, train, train_labels, TaskLoss::CrossEntropy);
    let libs: Vec<TemplateLibrary> = sizes
        .iter()
        .map(|&s| TemplateLibrary::with_templates(library.o_init, lambda, library.templates[..s].to_vec()))
        .collect();
    let caches: Vec<TemplateLossCache> = libs
        .iter()
        .map(|l| TemplateLossCache::build(&scorer, &l.templates))
        .collect();
    let policies: Vec<TafaPolicy<'_>> = libs
        .iter()
        .zip(&caches)
        .map(|(l, c)| TafaPolicy::new(l, model, c, train, costs, lambda, k))
        .collect::<Result<_>>()?;
    let mut best = vec![f64::INFINITY; sizes.len()];
    for _ in 0..repeats {
        for (i, p) in policies.iter().enumerate() {
            let start = Instant::now();
            for s in states {
                std::hint::black_box(p.decide(std::hint::black_box(s)));
            }
            let per = start.elapsed().as_secs_f64() / states.len() as f64;
            best[i] = best[i].min(per);
        }
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let fit = linear_fit(&xs, &best);
    Ok(ScalingReport {
        points: sizes
            .iter()
            .zip(&best)
            .map(|(&templates, &seconds_per_decision)| ScalingPoint {
                templates,
                seconds_per_decision,
            })
            .collect(),
        fit,
    })
}
