//! Exhaustive references for the search and policy guarantees.
//!
//! Everything here enumerates: template collections, nested pairs of
//! collections, and the observed states of small discrete distributions.
//! Sizes are bounded so a mistaken call fails fast instead of hanging.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CostModel, Matrix};
use crate::error::{Result, TafaError};
use crate::policy::{tafa_criterion, PolicyState, WeightedExample};
use crate::predictor::{Predictor, TaskLoss};
use crate::search::{all_templates, subset_loss, LossMatrix, Template};

pub const SUPPORT_LIMIT: usize = 1_000_000;
pub const COLLECTION_LIMIT: u128 = 5_000_000;
pub const TOLERANCE: f64 = 1e-9;

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Facility-location value `h(B) = -sum_n min_{b in B} e[n][b]`.
/// The empty collection has value 0.
pub fn facility_value(matrix: &LossMatrix, selected: &[usize]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    -(0..matrix.n_rows())
        .map(|n| {
            selected
                .iter()
                .map(|&s| matrix.value(n, s))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
}

fn mean_min(matrix: &LossMatrix, selected: &[usize]) -> f64 {
    -facility_value(matrix, selected) / matrix.n_rows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub selected: Vec<usize>,
    pub templates: Vec<Template>,
    pub objective: f64,
    pub collections_evaluated: u128,
}

/// Exact minimizer of the empirical objective over every collection of at
/// most `count` distinct candidates. Among equal objectives the smallest
/// collection, then the lexicographically smallest index list, wins.
pub fn brute_force_collection(matrix: &LossMatrix, count: usize) -> Result<BruteForceResult> {
    let s = matrix.n_candidates();
    if s == 0 {
        return Err(TafaError::EmptyCandidates);
    }
    let count = count.min(s);
    let total: u128 = (1..=count as u128).map(|k| binomial(s as u128, k)).sum();
    if total > COLLECTION_LIMIT {
        return Err(TafaError::EnumerationBudget {
            requested: total,
            limit: COLLECTION_LIMIT,
        });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for k in 1..=count {
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            let g = mean_min(matrix, &combo);
            if best.as_ref().is_none_or(|(b, _)| g < *b) {
                best = Some((g, combo.clone()));
            }
            // next combination in lexicographic order
            let mut i = k;
            while i > 0 && combo[i - 1] == s - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..k {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    let (objective, selected) = best.expect("at least one collection");
    Ok(BruteForceResult {
        templates: selected.iter().map(|&i| matrix.candidates[i].clone()).collect(),
        selected,
        objective,
        collections_evaluated: total,
    })
}

/// Plain greedy reference: each step evaluates every remaining candidate's
/// objective directly from [`subset_loss`] on every row.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_greedy(
    features: &Matrix,
    labels: &[usize],
    predictor: &dyn Predictor,
    costs: &CostModel,
    lambda: f64,
    loss: TaskLoss,
    candidates: &[Template],
    count: usize,
) -> Result<Vec<Template>> {
    let n = features.rows();
    let mut e = vec![vec![0.0; candidates.len()]; n];
    for (i, row) in e.iter_mut().enumerate() {
        for (s, t) in candidates.iter().enumerate() {
            row[s] = subset_loss(features.row(i), labels[i], t, predictor, costs, lambda, loss)?;
        }
    }
    let mut best = vec![f64::INFINITY; n];
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < count.min(candidates.len()) {
        let mut pick: Option<(usize, f64)> = None;
        for s in 0..candidates.len() {
            if chosen.contains(&s) || candidates[..s].contains(&candidates[s]) {
                continue;
            }
            let mut total = 0.0;
            for i in 0..n {
                total += best[i].min(e[i][s]);
            }
            let score = total / n as f64;
            if pick.is_none_or(|(_, b)| score < b) {
                pick = Some((s, score));
            }
        }
        let Some((s, _)) = pick else { break };
        for i in 0..n {
            best[i] = best[i].min(e[i][s]);
        }
        chosen.push(s);
    }
    Ok(chosen.into_iter().map(|s| candidates[s].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodularityReport {
    pub trials: usize,
    pub checked: usize,
    pub violations: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Samples nested nonempty collections `A ⊆ B` and a candidate `x ∉ B`
/// and checks `h(A + x) - h(A) >= h(B + x) - h(B)`.
pub fn certify_submodularity(matrix: &LossMatrix, trials: usize, seed: u64) -> SubmodularityReport {
    let s = matrix.n_candidates();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut violations = 0;
    let mut max_violation = 0.0f64;
    if s >= 2 {
        let mut order: Vec<usize> = (0..s).collect();
        for _ in 0..trials {
            order.shuffle(&mut rng);
            let b_len = rng.random_range(1..s);
            let a_len = rng.random_range(1..=b_len);
            let x = order[b_len];
            let b = &order[..b_len];
            let a_set: Vec<usize> = {
                let mut inner = b.to_vec();
                inner.shuffle(&mut rng);
                inner.truncate(a_len);
                inner
            };
            let gain = |set: &[usize]| {
                let mut with = set.to_vec();
                with.push(x);
                facility_value(matrix, &with) - facility_value(matrix, set)
            };
            let excess = gain(b) - gain(&a_set);
            checked += 1;
            if excess > TOLERANCE {
                violations += 1;
            }
            max_violation = max_violation.max(excess);
        }
    }
    SubmodularityReport {
        trials,
        checked,
        violations,
        max_violation,
        tolerance: TOLERANCE,
        passed: violations == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyBoundCheck {
    pub greedy_value: f64,
    pub optimal_value: f64,
    pub ratio: f64,
    pub holds: bool,
}

/// Compares greedy and exhaustive facility values for `count` templates.
/// The `1 - 1/e` ratio is only guaranteed when every `-e` is nonnegative.
pub fn greedy_bound_check(matrix: &LossMatrix, greedy_selected: &[usize], count: usize) -> Result<GreedyBoundCheck> {
    let opt = brute_force_collection(matrix, count)?;
    let greedy_value = facility_value(matrix, greedy_selected);
    let optimal_value = facility_value(matrix, &opt.selected);
    let bound = (1.0 - (-1.0f64).exp()) * optimal_value;
    Ok(GreedyBoundCheck {
        greedy_value,
        optimal_value,
        ratio: if optimal_value > 0.0 {
            greedy_value / optimal_value
        } else {
            1.0
        },
        holds: greedy_value >= bound - TOLERANCE,
    })
}

/// A discrete joint distribution over `(x, y)` given by its support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDistribution {
    pub dim: usize,
    pub n_classes: usize,
    pub support: Vec<WeightedExample>,
}

impl ToyDistribution {
    pub fn new(dim: usize, n_classes: usize, support: Vec<WeightedExample>) -> Result<Self> {
        if support.is_empty() || support.len() > SUPPORT_LIMIT {
            return Err(TafaError::EnumerationBudget {
                requested: support.len() as u128,
                limit: SUPPORT_LIMIT as u128,
            });
        }
        for e in &support {
            if e.x.len() != dim {
                return Err(TafaError::DimensionMismatch {
                    expected: dim,
                    actual: e.x.len(),
                });
            }
            if e.y >= n_classes || !(e.p >= 0.0) || e.x.iter().any(|v| !v.is_finite()) {
                return Err(TafaError::invalid("invalid support point"));
            }
        }
        let mass: f64 = support.iter().map(|e| e.p).sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(TafaError::invalid(format!("probabilities sum to {mass}")));
        }
        Ok(ToyDistribution {
            dim,
            n_classes,
            support,
        })
    }

    /// Random joint over binary features: every `(x, y)` cell gets weight
    /// `u^3` for `u ~ U(0, 1)`, so some cells dominate.
    pub fn random_binary(dim: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if dim == 0 || dim > 16 || n_classes == 0 {
            return Err(TafaError::invalid("random toys need 1..=16 features and a class"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut support = Vec::with_capacity((1 << dim) * n_classes);
        for bits in 0u32..1 << dim {
            let x: Vec<f64> = (0..dim).map(|d| f64::from((bits >> d) & 1)).collect();
            for y in 0..n_classes {
                let u: f64 = rng.random();
                support.push(WeightedExample {
                    x: x.clone(),
                    y,
                    p: u * u * u + 1e-3,
                });
            }
        }
        let mass: f64 = support.iter().map(|e| e.p).sum();
        for e in &mut support {
            e.p /= mass;
        }
        ToyDistribution::new(dim, n_classes, support)
    }

    fn matches(e: &WeightedExample, observed: &[usize], values: &[f64]) -> bool {
        observed.iter().zip(values).all(|(&d, &v)| e.x[d] == v)
    }

    pub fn mass(&self, observed: &[usize], values: &[f64]) -> f64 {
        self.support
            .iter()
            .filter(|e| Self::matches(e, observed, values))
            .map(|e| e.p)
            .sum()
    }
}

/// The distribution's own posterior `p(y | x_o)`. States of zero mass get
/// the class marginal.
pub struct ToyBayesPredictor<'a> {
    pub dist: &'a ToyDistribution,
}

impl Predictor for ToyBayesPredictor<'_> {
    fn n_classes(&self) -> usize {
        self.dist.n_classes
    }

    fn n_features(&self) -> usize {
        self.dist.dim
    }

    fn predict_proba(&self, observed: &[usize], values: &[f64]) -> Result<Vec<f64>> {
        if observed.len() != values.len() {
            return Err(TafaError::DimensionMismatch {
                expected: observed.len(),
                actual: values.len(),
            });
        }
        if let Some(&d) = observed.iter().find(|&&d| d >= self.dist.dim) {
            return Err(TafaError::FeatureOutOfRange {
                index: d,
                dim: self.dist.dim,
            });
        }
        let mut probs = vec![0.0; self.dist.n_classes];
        for e in &self.dist.support {
            if ToyDistribution::matches(e, observed, values) {
                probs[e.y] += e.p;
            }
        }
        let mut mass: f64 = probs.iter().sum();
        if mass <= 0.0 {
            for e in &self.dist.support {
                probs[e.y] += e.p;
            }
            mass = probs.iter().sum();
        }
        for p in &mut probs {
            *p /= mass;
        }
        Ok(probs)
    }
}

/// Observed assignment keyed independently of acquisition order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey {
    pub observed: Vec<usize>,
    pub bits: Vec<u64>,
}

impl StateKey {
    pub fn new(observed: &[usize], values: &[f64]) -> Self {
        let mut pairs: Vec<(usize, f64)> = observed.iter().copied().zip(values.iter().copied()).collect();
        pairs.sort_by_key(|p| p.0);
        StateKey {
            observed: pairs.iter().map(|p| p.0).collect(),
            bits: pairs.iter().map(|p| p.1.to_bits()).collect(),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from_bits(b)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEntry {
    pub state: StateKey,
    /// `v[t]` for `t = 0..=t_max`.
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub t_max: usize,
    pub entries: HashMap<StateKey, Vec<f64>>,
}

impl ValueTable {
    pub fn get(&self, observed: &[usize], values: &[f64], t: usize) -> Option<f64> {
        self.entries.get(&StateKey::new(observed, values)).and_then(|v| v.get(t).copied())
    }

    pub fn states(&self) -> Vec<StateKey> {
        let mut s: Vec<StateKey> = self.entries.keys().cloned().collect();
        s.sort();
        s
    }

    pub fn to_entries(&self) -> Vec<ValueEntry> {
        self.states()
            .into_iter()
            .map(|state| ValueEntry {
                v: self.entries[&state].clone(),
                state,
            })
            .collect()
    }
}

/// Every observed assignment with positive probability, for every subset
/// of features including the empty one.
pub fn reachable_states(dist: &ToyDistribution) -> Vec<StateKey> {
    let mut out = std::collections::BTreeSet::new();
    for mask in 0u64..1 << dist.dim {
        let observed: Vec<usize> = (0..dist.dim).filter(|d| mask >> d & 1 == 1).collect();
        for e in &dist.support {
            if e.p > 0.0 {
                let values: Vec<f64> = observed.iter().map(|&d| e.x[d]).collect();
                out.insert(StateKey::new(&observed, &values));
            }
        }
    }
    out.into_iter().collect()
}

/// `E[l(y_hat(x_{o+u}), y) | x_o]` under the joint, with `u` any set of
/// additional features.
fn expected_loss(
    dist: &ToyDistribution,
    state: &StateKey,
    extra: &[usize],
    predictor: &dyn Predictor,
    loss: TaskLoss,
) -> Result<f64> {
    let values = state.values();
    let mut features = state.observed.clone();
    features.extend_from_slice(extra);
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut cache: HashMap<Vec<u64>, Vec<f64>> = HashMap::new();
    for e in &dist.support {
        if e.p == 0.0 || !ToyDistribution::matches(e, &state.observed, &values) {
            continue;
        }
        let fv: Vec<f64> = features.iter().map(|&d| e.x[d]).collect();
        let key: Vec<u64> = fv.iter().map(|v| v.to_bits()).collect();
        let probs = match cache.get(&key) {
            Some(p) => p.clone(),
            None => {
                let p = predictor.predict_proba(&features, &fv)?;
                cache.insert(key, p.clone());
                p
            }
        };
        total += e.p * loss.eval(&probs, e.y);
        mass += e.p;
    }
    if mass <= 0.0 {
        return Err(TafaError::invalid("state has zero probability"));
    }
    Ok(total / mass)
}

fn check_enumerable(dist: &ToyDistribution, max_dim: usize) -> Result<()> {
    if dist.dim > max_dim {
        return Err(TafaError::EnumerationBudget {
            requested: dist.dim as u128,
            limit: max_dim as u128,
        });
    }
    Ok(())
}

/// Finite-horizon values by dynamic programming:
/// `V^0(x_o) = -E[l(y_hat(x_o), y) | x_o]` and
/// `V^t(x_o) = max(V^0, max_d -lambda c(d) + E[V^{t-1}(x_{o+d}) | x_o])`,
/// where the expectation is over `(y, x_d)` given `x_o`.
pub fn value_functions(
    dist: &ToyDistribution,
    predictor: &dyn Predictor,
    costs: &CostModel,
    lambda: f64,
    t_max: usize,
    loss: TaskLoss,
) -> Result<ValueTable> {
    check_enumerable(dist, 6)?;
    let states = reachable_states(dist);
    let v0: Vec<f64> = states
        .par_iter()
        .map(|s| expected_loss(dist, s, &[], predictor, loss).map(|l| -l))
        .collect::<Result<_>>()?;
    let mut layers: Vec<HashMap<StateKey, f64>> = vec![states.iter().cloned().zip(v0.iter().copied()).collect()];
    for _ in 1..=t_max {
        let prev = layers.last().unwrap();
        let next: Vec<f64> = states
            .par_iter()
            .zip(&v0)
            .map(|(s, &base)| {
                let values = s.values();
                let matching: Vec<&WeightedExample> = dist
                    .support
                    .iter()
                    .filter(|e| e.p > 0.0 && ToyDistribution::matches(e, &s.observed, &values))
                    .collect();
                let mass: f64 = matching.iter().map(|e| e.p).sum();
                let mut best = base;
                for d in (0..dist.dim).filter(|d| !s.observed.contains(d)) {
                    let mut by_value: HashMap<u64, f64> = HashMap::new();
                    for e in &matching {
                        *by_value.entry(e.x[d].to_bits()).or_default() += e.p;
                    }
                    let mut cont = 0.0;
                    let mut obs = s.observed.clone();
                    obs.push(d);
                    for (bits, p) in by_value {
                        let mut vals = values.clone();
                        vals.push(f64::from_bits(bits));
                        cont += p / mass * prev[&StateKey::new(&obs, &vals)];
                    }
                    best = best.max(-lambda * costs.cost(d) + cont);
                }
                best
            })
            .collect();
        layers.push(states.iter().cloned().zip(next).collect());
    }
    let entries = states
        .into_iter()
        .map(|s| {
            let v = layers.iter().map(|l| l[&s]).collect();
            (s, v)
        })
        .collect();
    Ok(ValueTable { t_max, entries })
}

fn subsets_up_to(pool: &[usize], max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u64..1 << pool.len() {
        if mask.count_ones() as usize <= max_len {
            out.push(
                pool.iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, &d)| d)
                    .collect(),
            );
        }
    }
    out
}

/// `max_u -E[l(y_hat(x_{o+u}), y) | x_o] - lambda c(u)` over unobserved
/// sets `u` with `|u| <= t_max`.
#[allow(clippy::too_many_arguments)]
pub fn aco_value(
    dist: &ToyDistribution,
    observed: &[usize],
    values: &[f64],
    predictor: &dyn Predictor,
    costs: &CostModel,
    lambda: f64,
    t_max: usize,
    loss: TaskLoss,
) -> Result<f64> {
    check_enumerable(dist, 6)?;
    let state = StateKey::new(observed, values);
    let pool: Vec<usize> = (0..dist.dim).filter(|d| !observed.contains(d)).collect();
    let mut best = f64::NEG_INFINITY;
    for u in subsets_up_to(&pool, t_max) {
        let l = expected_loss(dist, &state, &u, predictor, loss)?;
        best = best.max(-l - lambda * costs.total(&u));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundChainReport {
    pub states: usize,
    pub comparisons: usize,
    pub violations: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `V^t >= ACO^t >= criterion(B)` at every reachable state with at
/// least one observed feature and every `t <= t_max`. `B` ranges over each
/// single available set `u` (as the template `o + u`) and over the full
/// collection of available sets; the criterion is a max over `B`, so this
/// covers every sub-collection.
pub fn check_bound_chain(
    dist: &ToyDistribution,
    costs: &CostModel,
    lambda: f64,
    t_max: usize,
    loss: TaskLoss,
) -> Result<BoundChainReport> {
    check_enumerable(dist, 5)?;
    let predictor = ToyBayesPredictor { dist };
    let table = value_functions(dist, &predictor, costs, lambda, t_max, loss)?;
    let states: Vec<StateKey> = table.states().into_iter().filter(|s| !s.observed.is_empty()).collect();
    let results: Vec<(usize, usize, f64)> = states
        .par_iter()
        .map(|s| -> Result<(usize, usize, f64)> {
            let values = s.values();
            let policy_state = PolicyState {
                observed: s.observed.clone(),
                values: values.clone(),
                step: 0,
            };
            let pool: Vec<usize> = (0..dist.dim).filter(|d| !s.observed.contains(d)).collect();
            let (mut comparisons, mut violations, mut worst) = (0, 0, 0.0f64);
            let mut record = |upper: f64, lower: f64| {
                let excess = lower - upper;
                comparisons += 1;
                if excess > TOLERANCE {
                    violations += 1;
                }
                worst = worst.max(excess);
            };
            for t in 0..=t_max {
                let v = table.entries[s][t];
                let aco = aco_value(dist, &s.observed, &values, &predictor, costs, lambda, t, loss)?;
                record(v, aco);
                let available: Vec<Template> = subsets_up_to(&pool, t)
                    .into_iter()
                    .map(|u| {
                        let mut b = s.observed.clone();
                        b.extend(u);
                        Template::new(b, s.observed[0], dist.dim)
                    })
                    .collect::<Result<_>>()?;
                for b in &available {
                    let c = tafa_criterion(
                        &policy_state,
                        std::slice::from_ref(b),
                        &dist.support,
                        &predictor,
                        costs,
                        lambda,
                        loss,
                    )?;
                    record(aco, c);
                }
                let c = tafa_criterion(&policy_state, &available, &dist.support, &predictor, costs, lambda, loss)?;
                record(aco, c);
            }
            Ok((comparisons, violations, worst))
        })
        .collect::<Result<_>>()?;
    let comparisons = results.iter().map(|r| r.0).sum();
    let violations = results.iter().map(|r| r.1).sum();
    let max_violation = results.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(BoundChainReport {
        states: states.len(),
        comparisons,
        violations,
        max_violation,
        tolerance: TOLERANCE,
        passed: violations == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub submodularity: Vec<SubmodularityReport>,
    pub greedy_bound: Vec<GreedyBoundCheck>,
    pub bound_chain: Vec<BoundChainReport>,
    pub violations: usize,
    pub passed: bool,
}

impl CertificationReport {
    pub fn new(
        submodularity: Vec<SubmodularityReport>,
        greedy_bound: Vec<GreedyBoundCheck>,
        bound_chain: Vec<BoundChainReport>,
    ) -> Self {
        let violations = submodularity.iter().map(|r| r.violations).sum::<usize>()
            + greedy_bound.iter().filter(|r| !r.holds).count()
            + bound_chain.iter().map(|r| r.violations).sum::<usize>();
        CertificationReport {
            submodularity,
            greedy_bound,
            bound_chain,
            violations,
            passed: violations == 0,
        }
    }
}

/// Exhaustive candidates for small dimensions.
pub fn exhaustive_candidates(dim: usize, o_init: usize) -> Result<Vec<Template>> {
    if dim > 12 || o_init >= dim {
        return Err(TafaError::invalid("exhaustive candidates need dim <= 12 and a valid o_init"));
    }
    Ok(all_templates(dim, o_init))
}
