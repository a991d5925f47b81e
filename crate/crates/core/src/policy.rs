//! The deployable nearest-neighbour template policy.
//!
//! At each step every template is scored by the mean cached prediction
//! loss of the `k` training rows closest on the observed coordinates, plus
//! `lambda` times the cost of its still-unobserved features. The cheapest
//! unobserved feature of the best template is acquired next; once the best
//! template is fully observed the policy terminates and predicts.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::artifact::{self, Artifact};
use crate::dataset::{CostModel, Matrix, Scaling};
use crate::error::{Result, TafaError};
use crate::predictor::{argmax, GaussianNB, NbScorer, Predictor, SubsetScorer, TaskLoss};
use crate::search::{Template, TemplateLibrary};

/// Observed features in acquisition order with their values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub observed: Vec<usize>,
    pub values: Vec<f64>,
    pub step: usize,
}

impl PolicyState {
    pub fn initial(o_init: usize, value: f64) -> Self {
        PolicyState {
            observed: vec![o_init],
            values: vec![value],
            step: 0,
        }
    }

    pub fn is_observed(&self, feature: usize) -> bool {
        self.observed.contains(&feature)
    }

    pub fn observe(&mut self, feature: usize, value: f64) {
        debug_assert!(!self.is_observed(feature));
        self.observed.push(feature);
        self.values.push(value);
        self.step += 1;
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }
}

/// Prediction loss of every template on every training row, `[row][template]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLossCache {
    losses: Vec<f64>,
    n_rows: usize,
    n_templates: usize,
}

impl TemplateLossCache {
    pub fn build(scorer: &dyn SubsetScorer, templates: &[Template]) -> Self {
        let n_rows = scorer.n_rows();
        let n_templates = templates.len();
        let columns: Vec<Vec<f64>> = templates
            .iter()
            .map(|t| scorer.prediction_losses(t.indices()))
            .collect();
        let mut losses = Vec::with_capacity(n_rows * n_templates);
        for n in 0..n_rows {
            for col in &columns {
                losses.push(col[n]);
            }
        }
        TemplateLossCache {
            losses,
            n_rows,
            n_templates,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_templates = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_templates) {
            return Err(TafaError::invalid("ragged loss rows"));
        }
        Ok(TemplateLossCache {
            losses: rows.concat(),
            n_rows: rows.len(),
            n_templates,
        })
    }

    #[inline]
    pub fn loss(&self, row: usize, template: usize) -> f64 {
        self.losses[row * self.n_templates + template]
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_templates(&self) -> usize {
        self.n_templates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Acquire { feature: usize },
    Terminate,
}

/// Per-template terms of the selection score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateScores {
    pub estimated_loss: Vec<f64>,
    pub remaining_cost: Vec<f64>,
    pub total: Vec<f64>,
}

impl TemplateScores {
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.total.iter().enumerate().skip(1) {
            if s < self.total[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub selected_template: usize,
    pub action: Action,
    pub scores: TemplateScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Number of observed features when the decision was taken.
    pub observed_count: usize,
    pub selected_template: usize,
    pub action: Action,
    pub scores: TemplateScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub steps: Vec<TraceStep>,
    /// Acquired features in order, the initial feature first.
    pub acquired: Vec<usize>,
    pub values: Vec<f64>,
    pub total_cost: f64,
    pub final_prediction: Vec<f64>,
    pub predicted_class: usize,
    /// The step cap ended the rollout rather than a terminate action.
    pub capped: bool,
}

/// Outcome of the acquisition loop before the final prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub state: PolicyState,
    pub steps: Vec<TraceStep>,
    pub capped: bool,
}

/// The next action for `template`: the cheapest unobserved feature (lowest
/// index on ties), or terminate once the template is fully observed.
pub fn next_action(state: &PolicyState, template: &Template, costs: &CostModel) -> Action {
    let mut best: Option<usize> = None;
    for &d in template.indices() {
        if state.is_observed(d) {
            continue;
        }
        match best {
            Some(b) if costs.cost(d) >= costs.cost(b) => {}
            _ => best = Some(d),
        }
    }
    match best {
        Some(feature) => Action::Acquire { feature },
        None => Action::Terminate,
    }
}

fn cmp_neighbor(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Borrowing view over everything the kNN policy needs at inference.
#[derive(Clone)]
pub struct TafaPolicy<'a> {
    pub library: &'a TemplateLibrary,
    pub predictor: &'a dyn Predictor,
    pub cache: &'a TemplateLossCache,
    /// Training features the cache rows refer to.
    pub train: &'a Matrix,
    pub costs: &'a CostModel,
    pub lambda: f64,
    pub k: usize,
    /// `train` in column-major order for the distance scan.
    columns: Arc<[f64]>,
}

impl<'a> TafaPolicy<'a> {
    pub fn new(
        library: &'a TemplateLibrary,
        predictor: &'a dyn Predictor,
        cache: &'a TemplateLossCache,
        train: &'a Matrix,
        costs: &'a CostModel,
        lambda: f64,
        k: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(TafaError::invalid("k must be >= 1"));
        }
        if cache.n_rows() == 0 {
            return Err(TafaError::invalid("empty template loss cache"));
        }
        if cache.n_rows() != train.rows() || cache.n_templates() != library.templates.len() {
            return Err(TafaError::invalid("loss cache does not match library/training data"));
        }
        if train.cols() != costs.dim() {
            return Err(TafaError::DimensionMismatch {
                expected: train.cols(),
                actual: costs.dim(),
            });
        }
        library.validate(train.cols())?;
        let (rows, cols) = (train.rows(), train.cols());
        let mut columns = vec![0.0; rows * cols];
        for n in 0..rows {
            for (d, &x) in train.row(n).iter().enumerate() {
                columns[d * rows + n] = x;
            }
        }
        Ok(TafaPolicy {
            columns: columns.into(),
            library,
            predictor,
            cache,
            train,
            costs,
            lambda,
            k,
        })
    }

    pub fn dim(&self) -> usize {
        self.train.cols()
    }

    /// Training rows nearest to the observed coordinates, nearest first,
    /// ties by row index. `exclude` drops one row (leave-one-out queries).
    pub fn neighbors(&self, state: &PolicyState, exclude: Option<usize>) -> Vec<usize> {
        let rows = self.train.rows();
        let mut dist = vec![0.0; rows];
        for (&d, &v) in state.observed.iter().zip(&state.values) {
            for (s, &x) in dist.iter_mut().zip(&self.columns[d * rows..(d + 1) * rows]) {
                let z = v - x;
                *s += z * z;
            }
        }
        let available = rows - usize::from(exclude.is_some_and(|e| e < rows));
        let k = self.k.min(available);
        // rows arrive in index order, so an equal distance never displaces
        // an earlier row
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (n, &s) in dist.iter().enumerate() {
            if Some(n) == exclude || (best.len() == k && cmp_neighbor(&(s, n), &best[k - 1]) != Ordering::Less) {
                continue;
            }
            let pos = best.partition_point(|e| cmp_neighbor(e, &(s, n)) == Ordering::Less);
            best.insert(pos, (s, n));
            best.truncate(k);
        }
        best.into_iter().map(|(_, n)| n).collect()
    }

    /// Mean cached loss of template `template` over the `k` nearest rows.
    pub fn knn_loss_estimate(&self, state: &PolicyState, template: usize) -> f64 {
        let nb = self.neighbors(state, None);
        nb.iter().map(|&n| self.cache.loss(n, template)).sum::<f64>() / nb.len() as f64
    }

    fn scores_with(&self, state: &PolicyState, exclude: Option<usize>) -> TemplateScores {
        let nb = self.neighbors(state, exclude);
        let b = self.library.templates.len();
        let mut sums = vec![0.0; b];
        for &n in &nb {
            for (j, s) in sums.iter_mut().enumerate() {
                *s += self.cache.loss(n, j);
            }
        }
        let estimated_loss: Vec<f64> = sums.iter().map(|s| s / nb.len() as f64).collect();
        let remaining_cost: Vec<f64> = self
            .library
            .templates
            .iter()
            .map(|t| {
                t.indices()
                    .iter()
                    .filter(|&&d| !state.is_observed(d))
                    .map(|&d| self.costs.cost(d))
                    .sum()
            })
            .collect();
        let total = estimated_loss
            .iter()
            .zip(&remaining_cost)
            .map(|(l, c)| l + self.lambda * c)
            .collect();
        TemplateScores {
            estimated_loss,
            remaining_cost,
            total,
        }
    }

    /// Template index minimizing estimated loss plus weighted remaining
    /// cost, with all scores.
    pub fn select_template(&self, state: &PolicyState) -> (usize, TemplateScores) {
        let scores = self.scores_with(state, None);
        (scores.argmin(), scores)
    }

    pub fn decide(&self, state: &PolicyState) -> Decision {
        self.decide_excluding(state, None)
    }

    /// [`decide`](Self::decide) with one training row left out of the
    /// neighbour search.
    pub fn decide_excluding(&self, state: &PolicyState, exclude: Option<usize>) -> Decision {
        let scores = self.scores_with(state, exclude);
        let selected_template = scores.argmin();
        let action = next_action(state, &self.library.templates[selected_template], self.costs);
        Decision {
            selected_template,
            action,
            scores,
        }
    }

    /// Runs the decision loop on a standardized instance. `max_steps` caps
    /// the number of acquired features (including the initial one).
    pub fn acquire(&self, instance: &[f64], max_steps: usize) -> Acquisition {
        let o_init = self.library.o_init;
        let mut state = PolicyState::initial(o_init, instance[o_init]);
        let mut steps = Vec::new();
        let mut capped = false;
        loop {
            let d = self.decide(&state);
            if matches!(d.action, Action::Acquire { .. }) && state.len() >= max_steps {
                capped = true;
                break;
            }
            steps.push(TraceStep {
                observed_count: state.len(),
                selected_template: d.selected_template,
                action: d.action,
                scores: d.scores,
            });
            match d.action {
                Action::Terminate => break,
                Action::Acquire { feature } => state.observe(feature, instance[feature]),
            }
        }
        Acquisition { state, steps, capped }
    }

    pub fn finish(&self, acq: Acquisition) -> Result<RolloutTrace> {
        let probs = self.predictor.predict_proba(&acq.state.observed, &acq.state.values)?;
        Ok(RolloutTrace {
            total_cost: self.costs.total(&acq.state.observed),
            predicted_class: argmax(&probs),
            final_prediction: probs,
            acquired: acq.state.observed,
            values: acq.state.values,
            steps: acq.steps,
            capped: acq.capped,
        })
    }

    pub fn rollout(&self, instance: &[f64], max_steps: Option<usize>) -> Result<RolloutTrace> {
        if instance.len() != self.dim() {
            return Err(TafaError::DimensionMismatch {
                expected: self.dim(),
                actual: instance.len(),
            });
        }
        let max_steps = max_steps.unwrap_or(self.dim()).max(1);
        self.finish(self.acquire(instance, max_steps))
    }
}

/// One weighted point of a discrete joint distribution over `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedExample {
    pub x: Vec<f64>,
    pub y: usize,
    pub p: f64,
}

/// Upper bound on `|support| * |templates|` for exact criterion evaluation.
pub const CRITERION_TERM_LIMIT: u128 = 1_000_000;

/// Template-restricted value lower bound at an observed state:
/// `max_b -E[l(y_hat(x_{o+b}), y) | x_o] - lambda * c(b \ o)`, with the
/// expectation taken exactly over `support` conditioned on `state`.
pub fn tafa_criterion(
    state: &PolicyState,
    templates: &[Template],
    support: &[WeightedExample],
    predictor: &dyn Predictor,
    costs: &CostModel,
    lambda: f64,
    loss: TaskLoss,
) -> Result<f64> {
    let terms = support.len() as u128 * templates.len().max(1) as u128;
    if terms > CRITERION_TERM_LIMIT {
        return Err(TafaError::EnumerationBudget {
            requested: terms,
            limit: CRITERION_TERM_LIMIT,
        });
    }
    if templates.is_empty() {
        return Err(TafaError::invalid("criterion needs at least one template"));
    }
    let matching: Vec<&WeightedExample> = support
        .iter()
        .filter(|e| {
            state
                .observed
                .iter()
                .zip(&state.values)
                .all(|(&d, &v)| e.x[d] == v)
        })
        .collect();
    let mass: f64 = matching.iter().map(|e| e.p).sum();
    if !(mass > 0.0) {
        return Err(TafaError::invalid("state has zero probability under the support"));
    }
    let mut best = f64::NEG_INFINITY;
    for b in templates {
        let mut features = state.observed.clone();
        features.extend(b.indices().iter().filter(|&&d| !state.is_observed(d)));
        let mut expected = 0.0;
        for e in &matching {
            let values: Vec<f64> = features.iter().map(|&d| e.x[d]).collect();
            let probs = predictor.predict_proba(&features, &values)?;
            expected += e.p * loss.eval(&probs, e.y);
        }
        let remaining: f64 = b
            .indices()
            .iter()
            .filter(|&&d| !state.is_observed(d))
            .map(|&d| costs.cost(d))
            .sum();
        best = best.max(-expected / mass - lambda * remaining);
    }
    Ok(best)
}

/// Self-contained deployable policy: library, predictor, training rows and
/// the scaling that maps raw operator input onto the training coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub name: String,
    pub library: TemplateLibrary,
    pub model: GaussianNB,
    pub train_features: Matrix,
    pub train_labels: Vec<usize>,
    pub costs: CostModel,
    pub scaling: Scaling,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub k: usize,
    #[serde(skip)]
    cache: Option<TemplateLossCache>,
}

impl Artifact for PolicyBundle {
    const SCHEMA: &'static str = "tafa.policy_bundle";
    const VERSION: u32 = 1;
}

impl PolicyBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        library: TemplateLibrary,
        model: GaussianNB,
        train_features: Matrix,
        train_labels: Vec<usize>,
        costs: CostModel,
        scaling: Scaling,
        feature_names: Vec<String>,
        class_names: Vec<String>,
        k: usize,
    ) -> Result<Self> {
        let mut b = PolicyBundle {
            name: name.into(),
            library,
            model,
            train_features,
            train_labels,
            costs,
            scaling,
            feature_names,
            class_names,
            k,
            cache: None,
        };
        b.prepare()?;
        Ok(b)
    }

    fn prepare(&mut self) -> Result<()> {
        let dim = self.train_features.cols();
        if self.train_labels.len() != self.train_features.rows() {
            return Err(TafaError::DimensionMismatch {
                expected: self.train_features.rows(),
                actual: self.train_labels.len(),
            });
        }
        if self.model.n_features != dim || self.costs.dim() != dim || self.feature_names.len() != dim {
            return Err(TafaError::invalid("bundle components disagree on the feature count"));
        }
        self.library.validate(dim)?;
        self.model.rebuild_cache();
        let scorer = NbScorer::new(&self.model, &self.train_features, &self.train_labels, TaskLoss::CrossEntropy);
        self.cache = Some(TemplateLossCache::build(&scorer, &self.library.templates));
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut b: PolicyBundle = artifact::load(path)?;
        b.prepare()?;
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        artifact::save(self, path)
    }

    pub fn dim(&self) -> usize {
        self.train_features.cols()
    }

    pub fn cache(&self) -> &TemplateLossCache {
        self.cache.as_ref().expect("bundle prepared on construction")
    }

    pub fn policy(&self, lambda: Option<f64>, k: Option<usize>) -> Result<TafaPolicy<'_>> {
        TafaPolicy::new(
            &self.library,
            &self.model,
            self.cache(),
            &self.train_features,
            &self.costs,
            lambda.unwrap_or(self.library.lambda),
            k.unwrap_or(self.k),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform(usize, usize);

    impl Predictor for Uniform {
        fn n_classes(&self) -> usize {
            self.0
        }
        fn n_features(&self) -> usize {
            self.1
        }
        fn predict_proba(&self, _: &[usize], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![1.0 / self.0 as f64; self.0])
        }
    }

    fn tpl(v: &[usize]) -> Template {
        Template::new(v.to_vec(), v[0], 3).unwrap()
    }

    fn setup() -> (TemplateLibrary, TemplateLossCache, Matrix, CostModel) {
        let lib = TemplateLibrary::with_templates(0, 0.0, vec![tpl(&[0]), tpl(&[0, 1]), tpl(&[0, 1, 2])]);
        let cache = TemplateLossCache::from_rows(&[
            vec![1.0, 0.5, 0.1],
            vec![2.0, 0.4, 0.2],
            vec![3.0, 0.3, 0.3],
        ])
        .unwrap();
        let train = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![5.0, 0.0, 0.0]]).unwrap();
        (lib, cache, train, CostModel::uniform(3, 1.0))
    }

    #[test]
    fn knn_estimates() {
        let (lib, cache, train, costs) = setup();
        let pred = Uniform(2, 3);
        let mut p = TafaPolicy::new(&lib, &pred, &cache, &train, &costs, 0.0, 1).unwrap();
        let s = PolicyState::initial(0, 1.0);
        assert_eq!(p.knn_loss_estimate(&s, 0), 2.0);
        // k = 2 at x = 4: distances 16, 9, 1 -> rows 2 and 1
        p.k = 2;
        let s = PolicyState::initial(0, 4.0);
        assert_eq!(p.neighbors(&s, None), vec![2, 1]);
        assert_eq!(p.knn_loss_estimate(&s, 0), 2.5);
        // k larger than N averages everything
        p.k = 10;
        assert_eq!(p.knn_loss_estimate(&s, 1), (0.5 + 0.4 + 0.3) / 3.0);
    }

    #[test]
    fn distance_ties_break_by_index() {
        let (lib, cache, _, costs) = setup();
        let train = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let pred = Uniform(2, 3);
        let p = TafaPolicy::new(&lib, &pred, &cache, &train, &costs, 0.0, 2).unwrap();
        assert_eq!(p.neighbors(&PolicyState::initial(0, 0.0), None), vec![0, 1]);
        assert_eq!(p.neighbors(&PolicyState::initial(0, 0.0), Some(0)), vec![1, 2]);
    }

    #[test]
    fn next_action_rules() {
        let costs = CostModel::new(vec![5.0, 1.0, 2.0]).unwrap();
        let t = Template::new(vec![0, 1, 2], 0, 3).unwrap();
        let mut s = PolicyState {
            observed: vec![],
            values: vec![],
            step: 0,
        };
        assert_eq!(next_action(&s, &t, &costs), Action::Acquire { feature: 1 });
        let uniform = CostModel::uniform(8, 1.0);
        let t2 = Template::new(vec![0, 3, 7], 0, 8).unwrap();
        s.observe(0, 0.0);
        assert_eq!(next_action(&s, &t2, &uniform), Action::Acquire { feature: 3 });
        s.observe(3, 0.0);
        s.observe(7, 0.0);
        assert_eq!(next_action(&s, &t2, &uniform), Action::Terminate);
    }

    #[test]
    fn selection_uses_lambda_weighted_remaining_cost() {
        let (mut lib, cache, train, costs) = setup();
        let pred = Uniform(2, 3);
        let s = PolicyState::initial(0, 0.0);
        let p = TafaPolicy::new(&lib, &pred, &cache, &train, &costs, 0.0, 1).unwrap();
        assert_eq!(p.select_template(&s).0, 2);
        let p = TafaPolicy::new(&lib, &pred, &cache, &train, &costs, 1.0, 1).unwrap();
        let (i, sc) = p.select_template(&s);
        assert_eq!(sc.remaining_cost, vec![0.0, 1.0, 2.0]);
        assert_eq!(sc.total, vec![1.0, 1.5, 2.1]);
        assert_eq!(i, 0);

        lib.templates.truncate(1);
        let one = TemplateLossCache::from_rows(&[vec![9.0], vec![9.0], vec![9.0]]).unwrap();
        let p = TafaPolicy::new(&lib, &pred, &one, &train, &costs, 0.0, 1).unwrap();
        assert_eq!(p.select_template(&s).0, 0);
    }

    #[test]
    fn single_init_template_terminates_immediately() {
        let (_, _, train, costs) = setup();
        let lib = TemplateLibrary::with_templates(0, 0.1, vec![tpl(&[0])]);
        let cache = TemplateLossCache::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let pred = Uniform(2, 3);
        let p = TafaPolicy::new(&lib, &pred, &cache, &train, &costs, 0.1, 2).unwrap();
        let tr = p.rollout(&[0.3, 1.0, 2.0], None).unwrap();
        assert_eq!(tr.acquired, vec![0]);
        assert_eq!(tr.steps.len(), 1);
        assert_eq!(tr.steps[0].action, Action::Terminate);
        assert_eq!(tr.total_cost, 1.0);
        assert!(!tr.capped);
    }

    #[test]
    fn step_cap_is_flagged() {
        let (lib, cache, train, costs) = setup();
        let pred = Uniform(2, 3);
        let p = TafaPolicy::new(&lib, &pred, &cache, &train, &costs, 0.0, 1).unwrap();
        let full = p.rollout(&[0.0, 0.0, 0.0], None).unwrap();
        assert_eq!(full.acquired, vec![0, 1, 2]);
        assert!(!full.capped);
        let capped = p.rollout(&[0.0, 0.0, 0.0], Some(2)).unwrap();
        assert_eq!(capped.acquired, vec![0, 1]);
        assert!(capped.capped);
        assert!(p.rollout(&[0.0, 0.0], None).is_err());
    }

    #[test]
    fn criterion_with_covered_template_is_current_value() {
        let support = vec![
            WeightedExample { x: vec![0.0, 0.0], y: 0, p: 0.25 },
            WeightedExample { x: vec![0.0, 1.0], y: 1, p: 0.25 },
            WeightedExample { x: vec![1.0, 0.0], y: 1, p: 0.5 },
        ];
        let pred = Uniform(2, 2);
        let costs = CostModel::uniform(2, 1.0);
        let s = PolicyState::initial(0, 0.0);
        let t = Template::new(vec![0], 0, 2).unwrap();
        let v = tafa_criterion(&s, &[t], &support, &pred, &costs, 0.7, TaskLoss::CrossEntropy).unwrap();
        assert!((v + (0.5f64 + 1e-12).ln().abs()).abs() < 1e-12);
    }
}
