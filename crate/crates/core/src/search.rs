//! Template collection search.
//!
//! A template is a feature subset containing the initial feature. The
//! collection objective is `g(B) = mean_n min_{b in B} e(x_b, y)` where
//! `e` is prediction loss plus `lambda` times the template's total cost.
//! Two searches are provided: greedy selection over a sampled candidate
//! pool, and iterated greedy where each round's pool is built by mutating
//! the previous round's winners.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::dataset::CostModel;
use crate::error::{Result, TafaError};
use crate::predictor::{Predictor, SubsetScorer, TaskLoss};

/// Sorted, duplicate-free set of feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Template(Vec<usize>);

impl Template {
    /// Validates that `o_init` is present and every index is below `dim`.
    pub fn new(mut indices: Vec<usize>, o_init: usize, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&d| d >= dim) {
            return Err(TafaError::FeatureOutOfRange { index: bad, dim });
        }
        if indices.binary_search(&o_init).is_err() {
            return Err(TafaError::invalid(format!(
                "template {indices:?} does not contain the initial feature {o_init}"
            )));
        }
        Ok(Template(indices))
    }

    /// Builds a template from indices already known to be sorted and unique.
    pub(crate) fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Template(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.0.binary_search(&feature).is_ok()
    }

    pub fn cost(&self, costs: &CostModel) -> f64 {
        costs.total(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of templates to return (T).
    pub templates: usize,
    /// Candidate pool size per round (S).
    pub candidates: usize,
    /// Mutation rounds after the initial greedy round (R).
    pub rounds: usize,
    pub lambda: f64,
    pub o_init: usize,
    pub seed: u64,
    pub drop_probability: f64,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.templates < 1 {
            return Err(TafaError::invalid("T must be >= 1"));
        }
        if self.candidates < self.templates {
            return Err(TafaError::invalid("S must be >= T"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(TafaError::invalid("lambda must be a finite value >= 0"));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(TafaError::invalid("drop probability must be in [0, 1]"));
        }
        Ok(())
    }
}

/// `e(x_b, y)` for one instance: prediction loss on the template's
/// coordinates plus `lambda` times the template cost.
pub fn subset_loss(
    row: &[f64],
    label: usize,
    template: &Template,
    predictor: &dyn Predictor,
    costs: &CostModel,
    lambda: f64,
    loss: TaskLoss,
) -> Result<f64> {
    let values: Vec<f64> = template.indices().iter().map(|&d| row[d]).collect();
    let probs = predictor.predict_proba(template.indices(), &values)?;
    Ok(loss.eval(&probs, label) + lambda * template.cost(costs))
}

fn available_templates(dim: usize) -> Option<u128> {
    if dim == 0 {
        return Some(0);
    }
    1u128.checked_shl((dim - 1) as u32)
}

/// Every template over `dim` features containing `o_init`, ordered by the
/// bitmask of the non-initial features.
pub fn all_templates(dim: usize, o_init: usize) -> Vec<Template> {
    assert!(dim <= 25, "exhaustive enumeration limited to 25 features");
    let others: Vec<usize> = (0..dim).filter(|&d| d != o_init).collect();
    (0u64..1u64 << others.len())
        .map(|mask| template_from_mask(&others, o_init, mask))
        .collect()
}

fn template_from_mask(others: &[usize], o_init: usize, mask: u64) -> Template {
    let mut v: Vec<usize> = others
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, &d)| d)
        .collect();
    v.push(o_init);
    v.sort_unstable();
    Template::from_sorted(v)
}

fn random_template(dim: usize, o_init: usize, rng: &mut impl Rng) -> Template {
    let v: Vec<usize> = (0..dim)
        .filter(|&d| d == o_init || rng.random_bool(0.5))
        .collect();
    Template::from_sorted(v)
}

/// Draws `count` distinct templates uniformly from those containing
/// `o_init`: each other feature is included independently with
/// probability 0.5 and duplicates are redrawn.
pub fn sample_candidates(dim: usize, o_init: usize, count: usize, seed: u64) -> Result<Vec<Template>> {
    if dim < 2 || o_init >= dim {
        return Err(TafaError::invalid("need dim >= 2 and o_init < dim"));
    }
    if count == 0 {
        return Err(TafaError::invalid("candidate count must be >= 1"));
    }
    let available = available_templates(dim);
    if let Some(avail) = available {
        if count as u128 > avail {
            return Err(TafaError::CandidateBudget {
                requested: count,
                available: avail,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Near-exhaustive draws: rejection would crawl, so shuffle the full set.
    if let Some(avail) = available {
        if dim <= 21 && (count as u128) * 2 > avail {
            let mut all = all_templates(dim, o_init);
            all.shuffle(&mut rng);
            all.truncate(count);
            return Ok(all);
        }
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = random_template(dim, o_init, &mut rng);
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    Ok(out)
}

/// One mutated child: keeps `o_init` and drops each other feature of the
/// parent independently with `drop_probability`.
pub fn mutate_template(parent: &Template, o_init: usize, drop_probability: f64, rng: &mut impl Rng) -> Template {
    let v = parent
        .indices()
        .iter()
        .copied()
        .filter(|&d| d == o_init || !rng.random_bool(drop_probability))
        .collect();
    Template::from_sorted(v)
}

/// Produces up to `count` distinct children by cycling over `parents`.
/// Duplicates are redrawn; the loop gives up after a bounded number of
/// draws when the parents cannot produce `count` distinct children.
pub fn mutate(parents: &[Template], o_init: usize, count: usize, drop_probability: f64, seed: u64) -> Vec<Template> {
    if parents.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let max_draws = count.saturating_mul(50).max(1000);
    let mut draws = 0;
    let mut i = 0;
    while out.len() < count && draws < max_draws {
        let child = mutate_template(&parents[i % parents.len()], o_init, drop_probability, &mut rng);
        i += 1;
        draws += 1;
        if seen.insert(child.clone()) {
            out.push(child);
        }
    }
    out
}

/// Prediction-loss columns keyed by template, shared across rounds (and
/// across `lambda` values, since the cost term is added afterwards).
#[derive(Default)]
pub struct LossCache {
    columns: HashMap<Template, Arc<Vec<f64>>>,
}

impl LossCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Returns columns for `templates`, evaluating missing ones in parallel.
    pub fn columns(&mut self, scorer: &dyn SubsetScorer, templates: &[Template]) -> Vec<Arc<Vec<f64>>> {
        let mut missing: Vec<&Template> = templates
            .iter()
            .filter(|t| !self.columns.contains_key(*t))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let fresh: Vec<(Template, Arc<Vec<f64>>)> = missing
            .par_iter()
            .map(|t| ((*t).clone(), Arc::new(scorer.prediction_losses(t.indices()))))
            .collect();
        self.columns.extend(fresh);
        templates.iter().map(|t| Arc::clone(&self.columns[t])).collect()
    }

    pub fn retain(&mut self, keep: impl Fn(&Template) -> bool) {
        self.columns.retain(|t, _| keep(t));
    }
}

/// Subset losses `e` for a set of candidates over the training rows.
/// Stored as prediction-loss columns plus a per-candidate cost penalty;
/// `value(n, s)` is bit-identical to [`subset_loss`].
pub struct LossMatrix {
    pub candidates: Vec<Template>,
    columns: Vec<Arc<Vec<f64>>>,
    penalties: Vec<f64>,
    pub lambda: f64,
    n_rows: usize,
}

impl LossMatrix {
    pub fn build(
        scorer: &dyn SubsetScorer,
        costs: &CostModel,
        lambda: f64,
        candidates: Vec<Template>,
        cache: &mut LossCache,
    ) -> Self {
        let columns = cache.columns(scorer, &candidates);
        Self::from_columns(candidates, columns, costs, lambda, scorer.n_rows())
    }

    pub fn from_columns(
        candidates: Vec<Template>,
        columns: Vec<Arc<Vec<f64>>>,
        costs: &CostModel,
        lambda: f64,
        n_rows: usize,
    ) -> Self {
        let penalties = candidates.iter().map(|t| lambda * t.cost(costs)).collect();
        LossMatrix {
            candidates,
            columns,
            penalties,
            lambda,
            n_rows,
        }
    }

    /// Builds directly from an `e` matrix given as rows (instances) by
    /// columns (candidates). Intended for tests and oracles.
    pub fn from_values(candidates: Vec<Template>, rows: &[Vec<f64>]) -> Self {
        let n_cols = candidates.len();
        let columns = (0..n_cols)
            .map(|s| Arc::new(rows.iter().map(|r| r[s]).collect::<Vec<_>>()))
            .collect();
        LossMatrix {
            candidates,
            columns,
            penalties: vec![0.0; n_cols],
            lambda: 0.0,
            n_rows: rows.len(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_candidates(&self) -> usize {
        self.candidates.len()
    }

    #[inline]
    pub fn value(&self, n: usize, s: usize) -> f64 {
        self.columns[s][n] + self.penalties[s]
    }

    pub fn column(&self, s: usize) -> Vec<f64> {
        (0..self.n_rows).map(|n| self.value(n, s)).collect()
    }

    /// Empirical `g` of the collection given by candidate indices.
    pub fn objective(&self, selected: &[usize]) -> f64 {
        empirical_objective(self, selected)
    }
}

/// `mean_n min_{s in selected} e[n][s]`.
pub fn empirical_objective(matrix: &LossMatrix, selected: &[usize]) -> f64 {
    assert!(!selected.is_empty(), "objective of an empty collection");
    let mut total = 0.0;
    for n in 0..matrix.n_rows() {
        let mut m = f64::INFINITY;
        for &s in selected {
            m = m.min(matrix.value(n, s));
        }
        total += m;
    }
    total / matrix.n_rows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyResult {
    /// Indices into the candidate list, in selection order.
    pub selected: Vec<usize>,
    pub templates: Vec<Template>,
    /// Empirical `g` after each selection.
    pub objective_trace: Vec<f64>,
}

impl GreedyResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("greedy selects at least one template")
    }
}

/// Greedy selection of `count` templates: the first pick minimizes mean
/// `e`, each later pick minimizes the mean of `min(current best, e)`.
/// Ties go to the lowest candidate index; duplicate candidates are
/// skipped after their first occurrence.
pub fn greedy_search(matrix: &LossMatrix, count: usize) -> Result<GreedyResult> {
    if matrix.n_candidates() == 0 {
        return Err(TafaError::EmptyCandidates);
    }
    let n_rows = matrix.n_rows();
    let mut seen = HashSet::new();
    let mut eligible: Vec<usize> = (0..matrix.n_candidates())
        .filter(|&s| seen.insert(&matrix.candidates[s]))
        .collect();
    let target = count.min(eligible.len());
    let mut best = vec![f64::INFINITY; n_rows];
    let mut selected = Vec::with_capacity(target);
    let mut trace = Vec::with_capacity(target);

    while selected.len() < target {
        let scores: Vec<f64> = eligible
            .par_iter()
            .map(|&s| {
                let col = &matrix.columns[s];
                let pen = matrix.penalties[s];
                let mut total = 0.0;
                for (b, &l) in best.iter().zip(col.iter()) {
                    total += b.min(l + pen);
                }
                total / n_rows as f64
            })
            .collect();
        let mut pick = 0;
        for i in 1..scores.len() {
            if scores[i] < scores[pick] {
                pick = i;
            }
        }
        let s = eligible.remove(pick);
        for (n, b) in best.iter_mut().enumerate() {
            *b = b.min(matrix.value(n, s));
        }
        selected.push(s);
        trace.push(scores[pick]);
    }
    Ok(GreedyResult {
        templates: selected.iter().map(|&s| matrix.candidates[s].clone()).collect(),
        selected,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub templates: Vec<Template>,
    /// Empirical `g` of the returned collection.
    pub objective: f64,
    /// Per-selection trace of the round that produced the result.
    pub objective_trace: Vec<f64>,
    /// Final empirical `g` of every round, round 0 first.
    pub per_round_objective: Vec<f64>,
    pub best_round: usize,
    /// Newly evaluated candidate columns per round.
    pub evaluated: Vec<usize>,
}

/// Greedy search over `candidates`, or over `config.candidates` random
/// templates drawn with `config.seed` when none are given.
pub fn practical_search(
    scorer: &dyn SubsetScorer,
    costs: &CostModel,
    config: &SearchConfig,
    candidates: Option<Vec<Template>>,
    cache: &mut LossCache,
) -> Result<SearchOutcome> {
    config.validate()?;
    let candidates = match candidates {
        Some(c) => c,
        None => sample_candidates(scorer.n_features(), config.o_init, config.candidates, config.seed)?,
    };
    if candidates.iter().any(|t| !t.contains(config.o_init)) {
        return Err(TafaError::invalid("every candidate must contain o_init"));
    }
    let before = cache.len();
    let matrix = LossMatrix::build(scorer, costs, config.lambda, candidates, cache);
    let evaluated = cache.len() - before;
    let res = greedy_search(&matrix, config.templates)?;
    Ok(SearchOutcome {
        objective: res.objective(),
        per_round_objective: vec![res.objective()],
        objective_trace: res.objective_trace,
        templates: res.templates,
        best_round: 0,
        evaluated: vec![evaluated],
    })
}

fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Greedy round on random candidates followed by `config.rounds` rounds of
/// mutation + greedy. Each mutation pool holds `config.candidates` children
/// of the previous round's templates plus the templates themselves. Returns
/// the best collection over all rounds.
pub fn iterative_mutate_search(
    scorer: &dyn SubsetScorer,
    costs: &CostModel,
    config: &SearchConfig,
    cache: &mut LossCache,
) -> Result<SearchOutcome> {
    let first = practical_search(scorer, costs, config, None, cache)?;
    let mut per_round = vec![first.objective];
    let mut evaluated = first.evaluated.clone();
    let mut best = first;
    let mut parents = best.templates.clone();

    for r in 1..=config.rounds {
        let mut pool = parents.clone();
        let parent_set: HashSet<&Template> = parents.iter().collect();
        let children = mutate(
            &parents,
            config.o_init,
            config.candidates,
            config.drop_probability,
            round_seed(config.seed, r),
        );
        pool.extend(children.into_iter().filter(|c| !parent_set.contains(c)));
        let keep: HashSet<Template> = pool.iter().cloned().collect();
        cache.retain(|t| keep.contains(t));
        let out = practical_search(scorer, costs, config, Some(pool), cache)?;
        per_round.push(out.objective);
        evaluated.push(out.evaluated[0]);
        parents = out.templates.clone();
        if out.objective < best.objective {
            best = SearchOutcome { best_round: r, ..out };
        }
    }
    best.per_round_objective = per_round;
    best.evaluated = evaluated;
    Ok(best)
}

/// The single feature whose singleton template has the lowest mean `e`.
pub fn select_initial_feature(scorer: &dyn SubsetScorer, costs: &CostModel, lambda: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for d in 0..scorer.n_features() {
        let col = scorer.prediction_losses(&[d]);
        let pen = lambda * costs.cost(d);
        let mean = col.iter().map(|l| l + pen).sum::<f64>() / col.len() as f64;
        if mean < best.0 {
            best = (mean, d);
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchMeta {
    #[serde(rename = "T")]
    pub templates: usize,
    #[serde(rename = "S")]
    pub candidates: usize,
    #[serde(rename = "R")]
    pub rounds: usize,
    pub seed: u64,
    pub objective_trace: Vec<f64>,
    #[serde(default)]
    pub per_round_objective: Vec<f64>,
}

/// Trained template collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateLibrary {
    pub o_init: usize,
    pub lambda: f64,
    pub templates: Vec<Template>,
    #[serde(default)]
    pub feature_names: Vec<String>,
    pub search_meta: SearchMeta,
}

impl Artifact for TemplateLibrary {
    const SCHEMA: &'static str = "tafa.template_library";
    const VERSION: u32 = 1;
}

impl TemplateLibrary {
    pub fn from_search(config: &SearchConfig, outcome: &SearchOutcome, feature_names: Vec<String>) -> Self {
        TemplateLibrary {
            o_init: config.o_init,
            lambda: config.lambda,
            templates: outcome.templates.clone(),
            feature_names,
            search_meta: SearchMeta {
                templates: config.templates,
                candidates: config.candidates,
                rounds: config.rounds,
                seed: config.seed,
                objective_trace: outcome.objective_trace.clone(),
                per_round_objective: outcome.per_round_objective.clone(),
            },
        }
    }

    /// Library with explicit templates and no search history.
    pub fn with_templates(o_init: usize, lambda: f64, templates: Vec<Template>) -> Self {
        TemplateLibrary {
            o_init,
            lambda,
            search_meta: SearchMeta {
                templates: templates.len(),
                candidates: templates.len(),
                rounds: 0,
                seed: 0,
                objective_trace: Vec::new(),
                per_round_objective: Vec::new(),
            },
            templates,
            feature_names: Vec::new(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.templates.is_empty() {
            return Err(TafaError::invalid("library has no templates"));
        }
        if self.o_init >= dim {
            return Err(TafaError::FeatureOutOfRange {
                index: self.o_init,
                dim,
            });
        }
        for t in &self.templates {
            Template::new(t.indices().to_vec(), self.o_init, dim)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[usize]) -> Template {
        Template::from_sorted(v.to_vec())
    }

    #[test]
    fn template_validation() {
        assert_eq!(Template::new(vec![3, 1, 3], 1, 4).unwrap().indices(), &[1, 3]);
        assert!(Template::new(vec![0, 2], 1, 4).is_err());
        assert!(Template::new(vec![1, 4], 1, 4).is_err());
    }

    #[test]
    fn sampling_small_space_is_exhaustive() {
        let mut c = sample_candidates(2, 0, 2, 7).unwrap();
        c.sort();
        assert_eq!(c, vec![t(&[0]), t(&[0, 1])]);
        assert!(matches!(
            sample_candidates(2, 0, 3, 7),
            Err(TafaError::CandidateBudget { .. })
        ));
    }

    #[test]
    fn sampling_contains_init_and_is_deterministic() {
        let a = sample_candidates(20, 7, 500, 3).unwrap();
        assert!(a.iter().all(|c| c.contains(7)));
        assert_eq!(a, sample_candidates(20, 7, 500, 3).unwrap());
        let distinct: HashSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 500);
    }

    #[test]
    fn mutation_keeps_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let only = t(&[4]);
        for _ in 0..100 {
            assert_eq!(mutate_template(&only, 4, 0.5, &mut rng), only);
        }
        let parent = t(&[9, 16, 42, 47]);
        for _ in 0..1000 {
            assert!(mutate_template(&parent, 9, 0.5, &mut rng).contains(9));
        }
    }

    #[test]
    fn mutate_cannot_exceed_distinct_children() {
        // {0, 1} has only two children: {0} and {0, 1}
        let kids = mutate(&[t(&[0, 1])], 0, 10, 0.5, 0);
        assert_eq!(kids.len(), 2);
    }

    #[test]
    fn greedy_on_hand_matrix() {
        // rows: instances, cols: candidates
        let rows = vec![
            vec![1.0, 5.0, 3.0],
            vec![4.0, 0.0, 3.0],
            vec![2.0, 5.0, 3.0],
            vec![4.0, 1.0, 3.0],
        ];
        let m = LossMatrix::from_values(vec![t(&[0]), t(&[0, 1]), t(&[0, 2])], &rows);
        let one = greedy_search(&m, 1).unwrap();
        // column means 2.75, 2.75, 3.0 -> tie, lowest index
        assert_eq!(one.selected, vec![0]);
        let two = greedy_search(&m, 2).unwrap();
        assert_eq!(two.selected, vec![0, 1]);
        assert_eq!(two.objective_trace, vec![2.75, (1.0 + 0.0 + 2.0 + 1.0) / 4.0]);
        assert_eq!(empirical_objective(&m, &[0, 1]), 1.0);
        assert_eq!(empirical_objective(&m, &[2]), 3.0);
        // fewer candidates than requested
        assert_eq!(greedy_search(&m, 10).unwrap().selected.len(), 3);
    }

    #[test]
    fn duplicate_candidates_are_never_reselected() {
        let rows = vec![vec![1.0, 1.0, 2.0], vec![3.0, 3.0, 0.5]];
        let m = LossMatrix::from_values(vec![t(&[0]), t(&[0]), t(&[0, 1])], &rows);
        let r = greedy_search(&m, 3).unwrap();
        assert_eq!(r.selected, vec![2, 0]);
    }

    #[test]
    fn empty_candidates_error() {
        let m = LossMatrix::from_values(vec![], &[vec![]]);
        assert!(matches!(greedy_search(&m, 1), Err(TafaError::EmptyCandidates)));
    }

    #[test]
    fn config_validation() {
        let ok = SearchConfig {
            templates: 2,
            candidates: 4,
            rounds: 0,
            lambda: 0.1,
            o_init: 0,
            seed: 0,
            drop_probability: 0.5,
        };
        assert!(ok.validate().is_ok());
        assert!(SearchConfig { candidates: 1, ..ok.clone() }.validate().is_err());
        assert!(SearchConfig { lambda: -1.0, ..ok.clone() }.validate().is_err());
        assert!(SearchConfig { drop_probability: 1.5, ..ok }.validate().is_err());
    }
}
