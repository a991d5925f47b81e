use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use tafa_core::artifact::{self, Artifact};
use tafa_core::dataset::{generate_cube, CostModel, Dataset, Matrix};
use tafa_core::eval::Experiment;
use tafa_core::oracle::{
    certify_submodularity, check_bound_chain, exhaustive_candidates, greedy_bound_check, CertificationReport,
    ToyDistribution,
};
use tafa_core::predictor::{fit_gaussian_nb, NbScorer, TaskLoss};
use tafa_core::search::{greedy_search, sample_candidates, LossCache, LossMatrix};

use crate::config::Resolver;
use crate::{CertifyArgs, CliError, Output};

struct ReportFile(CertificationReport);

impl serde::Serialize for ReportFile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for ReportFile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        CertificationReport::deserialize(d).map(ReportFile)
    }
}

impl Artifact for ReportFile {
    const SCHEMA: &'static str = "tafa.certification";
    const VERSION: u32 = 1;
}

/// Gaussian-ish classes with one shifted coordinate per class.
pub fn random_problem(dim: usize, rows: usize, classes: usize, rng: &mut impl Rng) -> Dataset {
    let labels: Vec<usize> = (0..rows).map(|i| i % classes).collect();
    let mut values = Vec::with_capacity(rows * dim);
    for &y in &labels {
        for d in 0..dim {
            let signal = if d % classes == y { 1.0 } else { 0.0 };
            values.push(signal + rng.random_range(-1.0..1.0));
        }
    }
    Dataset::new(
        Matrix::new(rows, dim, values).expect("sized above"),
        labels,
        (0..dim).map(|d| format!("x{d}")).collect(),
        (0..classes).map(|c| format!("c{c}")).collect(),
    )
    .expect("consistent by construction")
}

pub fn certify(out: &Output, cfg: Option<&Path>, a: CertifyArgs) -> Result<(), CliError> {
    let mut r = Resolver::load("certify", cfg)?;
    let trials = r.or("trials", a.trials, 1000)?;
    let bound_instances = r.or("bound-instances", a.bound_instances, 20)?;
    let toys = r.or("toys", a.toys, 5)?;
    let cube_rows = r.or("cube-rows", a.cube_rows, 2000)?;
    let seed = r.or("seed", a.seed, 0)?;
    r.seed(seed);
    let dir = r.or("out", a.out, std::path::PathBuf::from("tafa-certify"))?;
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // diminishing returns on random matrices and on one CUBE-derived matrix
    let mut submodularity = Vec::new();
    for i in 0..3u64 {
        let n = 60;
        let candidates = sample_candidates(10, 0, 25, seed.wrapping_add(i))?;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..candidates.len()).map(|_| rng.random_range(-1.0..2.0)).collect())
            .collect();
        let m = LossMatrix::from_values(candidates, &rows);
        submodularity.push(certify_submodularity(&m, trials, seed.wrapping_add(100 + i)));
    }
    if cube_rows > 0 {
        let data = generate_cube(cube_rows, 0.1, seed)?;
        let costs = CostModel::uniform(20, 1.0);
        let exp = Experiment::prepare(&data, &costs, 0.2, seed)?;
        let scorer = exp.scorer(TaskLoss::CrossEntropy);
        let candidates = sample_candidates(20, exp.o_init(0.02), 40, seed)?;
        let m = LossMatrix::build(&scorer, &costs, 0.02, candidates, &mut LossCache::new());
        submodularity.push(certify_submodularity(&m, trials, seed.wrapping_add(200)));
    }

    // greedy against the exhaustive optimum in the monotone setting
    let mut greedy_bound = Vec::new();
    for _ in 0..bound_instances {
        let dim = rng.random_range(3..=7);
        let count = rng.random_range(1..=3);
        let lambda = rng.random_range(0.0..1.0);
        let data = random_problem(dim, 40, 3, &mut rng);
        let all: Vec<usize> = (0..data.n_rows()).collect();
        let model = fit_gaussian_nb(&data, &all, 1e-6)?;
        let costs = CostModel::uniform(dim, 1.0 / dim as f64);
        let scorer = NbScorer::new(&model, &data.features, &data.labels, TaskLoss::ShiftedZeroOne { shift: lambda });
        let m = LossMatrix::build(
            &scorer,
            &costs,
            lambda,
            exhaustive_candidates(dim, 0)?,
            &mut LossCache::new(),
        );
        let g = greedy_search(&m, count)?;
        greedy_bound.push(greedy_bound_check(&m, &g.selected, count)?);
    }

    // value bound chain on enumerable toys
    let mut bound_chain = Vec::new();
    for i in 0..toys {
        let dim = 3 + i % 2;
        let dist = ToyDistribution::random_binary(dim, 2 + i % 2, seed.wrapping_add(i as u64))?;
        let costs = CostModel::uniform(dim, 1.0 / dim as f64);
        let lambda = rng.random_range(0.0..0.5);
        let loss = if i % 2 == 0 {
            TaskLoss::CrossEntropy
        } else {
            TaskLoss::ShiftedZeroOne { shift: 0.0 }
        };
        bound_chain.push(check_bound_chain(&dist, &costs, lambda, 3, loss)?);
    }

    let report = CertificationReport::new(submodularity, greedy_bound, bound_chain);
    let path = dir.join("certification.json");
    let file = ReportFile(report);
    artifact::save(&file, &path)?;
    let manifest = r.finish(&dir, vec![path.clone()])?;
    let report = file.0;
    for (i, s) in report.submodularity.iter().enumerate() {
        out.line(format!(
            "submodularity matrix {i}: {} checks, {} violations (max excess {:.3e})",
            s.checked, s.violations, s.max_violation
        ));
    }
    let held = report.greedy_bound.iter().filter(|g| g.holds).count();
    let worst = report.greedy_bound.iter().map(|g| g.ratio).fold(f64::INFINITY, f64::min);
    out.line(format!(
        "greedy bound: {held}/{} instances hold, lowest ratio {worst:.4}",
        report.greedy_bound.len()
    ));
    for (i, c) in report.bound_chain.iter().enumerate() {
        out.line(format!(
            "bound chain toy {i}: {} states, {} comparisons, {} violations",
            c.states, c.comparisons, c.violations
        ));
    }
    out.line(format!(
        "{}: {} violations, report in {}",
        if report.passed { "PASS" } else { "FAIL" },
        report.violations,
        path.display()
    ));
    out.summary(&json!({
        "passed": report.passed,
        "violations": report.violations,
        "report": path,
        "manifest": manifest,
    }));
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} violations", report.violations)))
    }
}
