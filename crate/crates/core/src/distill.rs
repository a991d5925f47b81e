//! Distillation of the kNN template policy into small decision trees.
//!
//! The student sees observed values (zero where unobserved) concatenated
//! with the 0/1 observation mask. The default variant keeps one tree per
//! acquisition cardinality `m = |o|` and predicts a template index or
//! terminate; the `global` variant shares one tree across cardinalities,
//! and `feature-act` predicts feature indices directly. Training follows
//! DAgger: teacher demonstrations first, then student rollouts relabelled
//! by the teacher, aggregated across iterations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::dataset::Matrix;
use crate::error::{Result, TafaError};
use crate::policy::{next_action, Action, Decision, PolicyState, TafaPolicy};
use crate::predictor::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "index", rename_all = "snake_case")]
pub enum StudentAction {
    Template(usize),
    Feature(usize),
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    PerCardinality,
    Global,
    FeatureAct,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::PerCardinality => "per-cardinality",
            Variant::Global => "global",
            Variant::FeatureAct => "feature-act",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = TafaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-cardinality" | "interp" => Ok(Variant::PerCardinality),
            "global" => Ok(Variant::Global),
            "feature-act" => Ok(Variant::FeatureAct),
            other => Err(TafaError::invalid(format!("unknown variant `{other}`"))),
        }
    }
}

/// `[values with zeros for unobserved..., mask...]`, length `2 * dim`.
pub fn student_state(state: &PolicyState, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2 * dim];
    for (&d, &x) in state.observed.iter().zip(&state.values) {
        v[d] = x;
        v[dim + d] = 1.0;
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        label: StudentAction,
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub leaf_limit: usize,
}

impl DecisionTree {
    pub fn leaf(label: StudentAction) -> Self {
        DecisionTree {
            nodes: vec![Node::Leaf { label, samples: 0 }],
            leaf_limit: 1,
        }
    }

    pub fn predict(&self, x: &[f64]) -> StudentAction {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { label, .. } => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn root_split_feature(&self) -> Option<usize> {
        match self.nodes[0] {
            Node::Split { feature, .. } => Some(feature),
            Node::Leaf { .. } => None,
        }
    }

    pub fn labels(&self) -> BTreeSet<StudentAction> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { label, .. } => Some(*label),
                _ => None,
            })
            .collect()
    }
}

/// `n - sum(c^2) / n`, i.e. `n` times the Gini impurity.
fn weighted_gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - sq / n as f64
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn best_split(xs: &[Vec<f64>], ys: &[usize], n_classes: usize, idx: &[usize]) -> Option<BestSplit> {
    let n = idx.len();
    if n < 2 {
        return None;
    }
    let mut total = vec![0usize; n_classes];
    for &i in idx {
        total[ys[i]] += 1;
    }
    let parent = weighted_gini(&total, n);
    if parent <= 0.0 {
        return None;
    }
    let mut best: Option<BestSplit> = None;
    let mut order = idx.to_vec();
    let dim = xs[idx[0]].len();
    for f in 0..dim {
        order.sort_unstable_by(|&a, &b| xs[a][f].partial_cmp(&xs[b][f]).unwrap().then(a.cmp(&b)));
        let mut left = vec![0usize; n_classes];
        for pos in 0..n - 1 {
            let i = order[pos];
            left[ys[i]] += 1;
            let (v, next) = (xs[i][f], xs[order[pos + 1]][f]);
            if v == next {
                continue;
            }
            let nl = pos + 1;
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let gain = parent - weighted_gini(&left, nl) - weighted_gini(&right, n - nl);
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(BestSplit {
                    gain,
                    feature: f,
                    threshold: 0.5 * (v + next),
                });
            }
        }
    }
    best
}

fn majority(ys: &[usize], idx: &[usize], n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &i in idx {
        counts[ys[i]] += 1;
    }
    let mut best = 0;
    for c in 1..n_classes {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

/// CART with Gini impurity grown best-first: the leaf whose best split
/// removes the most impurity is split next, until `leaf_limit` leaves or
/// every leaf is pure. Thresholds are midpoints between consecutive
/// distinct values.
pub fn fit_tree(states: &[Vec<f64>], labels: &[StudentAction], leaf_limit: usize) -> Result<DecisionTree> {
    if states.is_empty() {
        return Err(TafaError::invalid("cannot fit a tree on no samples"));
    }
    if states.len() != labels.len() {
        return Err(TafaError::DimensionMismatch {
            expected: states.len(),
            actual: labels.len(),
        });
    }
    if leaf_limit < 2 {
        return Err(TafaError::invalid("leaf limit must be >= 2"));
    }
    let classes: Vec<StudentAction> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let ys: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label collected above"))
        .collect();
    let nc = classes.len();

    struct Open {
        node: usize,
        idx: Vec<usize>,
        split: Option<BestSplit>,
    }

    let all: Vec<usize> = (0..states.len()).collect();
    let mut nodes = vec![Node::Leaf {
        label: classes[majority(&ys, &all, nc)],
        samples: all.len(),
    }];
    let mut open = vec![Open {
        node: 0,
        split: best_split(states, &ys, nc, &all),
        idx: all,
    }];
    let mut leaves = 1;
    while leaves < leaf_limit {
        let mut pick: Option<usize> = None;
        for (i, o) in open.iter().enumerate() {
            if let Some(s) = &o.split {
                let better = match pick {
                    None => true,
                    Some(p) => s.gain > open[p].split.as_ref().unwrap().gain,
                };
                if better {
                    pick = Some(i);
                }
            }
        }
        let Some(p) = pick else { break };
        let o = open.remove(p);
        let s = o.split.unwrap();
        let (l_idx, r_idx): (Vec<usize>, Vec<usize>) =
            o.idx.iter().partition(|&&i| states[i][s.feature] <= s.threshold);
        let l = nodes.len();
        nodes.push(Node::Leaf {
            label: classes[majority(&ys, &l_idx, nc)],
            samples: l_idx.len(),
        });
        nodes.push(Node::Leaf {
            label: classes[majority(&ys, &r_idx, nc)],
            samples: r_idx.len(),
        });
        nodes[o.node] = Node::Split {
            feature: s.feature,
            threshold: s.threshold,
            left: l,
            right: l + 1,
        };
        leaves += 1;
        open.push(Open {
            node: l,
            split: best_split(states, &ys, nc, &l_idx),
            idx: l_idx,
        });
        open.push(Open {
            node: l + 1,
            split: best_split(states, &ys, nc, &r_idx),
            idx: r_idx,
        });
    }
    Ok(DecisionTree { nodes, leaf_limit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "count", rename_all = "snake_case")]
pub enum ActionSpace {
    /// Template indices plus terminate.
    Templates(usize),
    /// Feature indices plus terminate.
    Features(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub variant: Variant,
    pub action_space: ActionSpace,
    pub dim: usize,
    pub leaf_limit: usize,
    /// Keyed by cardinality for the per-cardinality variant, else slot 0.
    pub trees: BTreeMap<usize, DecisionTree>,
}

impl Artifact for TreeEnsemble {
    const SCHEMA: &'static str = "tafa.tree_ensemble";
    const VERSION: u32 = 1;
}

impl TreeEnsemble {
    pub fn tree_for(&self, cardinality: usize) -> Option<&DecisionTree> {
        match self.variant {
            Variant::PerCardinality => self.trees.get(&cardinality),
            Variant::Global | Variant::FeatureAct => self.trees.get(&0),
        }
    }

    /// Total leaves over all trees.
    pub fn complexity(&self) -> usize {
        self.trees.values().map(DecisionTree::n_leaves).sum()
    }

    pub fn predict(&self, state: &PolicyState) -> Option<StudentAction> {
        self.tree_for(state.len())
            .map(|t| t.predict(&student_state(state, self.dim)))
    }
}

/// The teacher's action at `state`, in the variant's action space.
pub fn teacher_label(policy: &TafaPolicy<'_>, state: &PolicyState, variant: Variant, exclude: Option<usize>) -> StudentAction {
    label_of(&policy.decide_excluding(state, exclude), variant)
}

fn label_of(d: &Decision, variant: Variant) -> StudentAction {
    match (d.action, variant) {
        (Action::Terminate, _) => StudentAction::Terminate,
        (Action::Acquire { feature }, Variant::FeatureAct) => StudentAction::Feature(feature),
        (Action::Acquire { .. }, _) => StudentAction::Template(d.selected_template),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentStep {
    pub observed_count: usize,
    /// `None` when no tree covers the current cardinality.
    pub label: Option<StudentAction>,
    pub action: Action,
    /// A feature-act prediction named an observed feature.
    pub invalid_prediction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentTrace {
    pub steps: Vec<StudentStep>,
    pub acquired: Vec<usize>,
    pub values: Vec<f64>,
    pub total_cost: f64,
    pub final_prediction: Vec<f64>,
    pub predicted_class: usize,
    pub capped: bool,
}

fn student_step(ensemble: &TreeEnsemble, policy: &TafaPolicy<'_>, state: &PolicyState) -> StudentStep {
    let label = ensemble.predict(state);
    let mut invalid_prediction = false;
    let action = match label {
        None | Some(StudentAction::Terminate) => Action::Terminate,
        Some(StudentAction::Template(b)) => match policy.library.templates.get(b) {
            Some(t) => next_action(state, t, policy.costs),
            None => Action::Terminate,
        },
        Some(StudentAction::Feature(a)) => {
            if a >= ensemble.dim || state.is_observed(a) {
                invalid_prediction = true;
                Action::Terminate
            } else {
                Action::Acquire { feature: a }
            }
        }
    };
    StudentStep {
        observed_count: state.len(),
        label,
        action,
        invalid_prediction,
    }
}

/// Runs the student on a standardized instance. Uses the policy only for
/// the library, costs and predictor; no neighbour search happens here.
pub fn student_rollout(
    instance: &[f64],
    ensemble: &TreeEnsemble,
    policy: &TafaPolicy<'_>,
    max_steps: Option<usize>,
) -> Result<StudentTrace> {
    if instance.len() != ensemble.dim {
        return Err(TafaError::DimensionMismatch {
            expected: ensemble.dim,
            actual: instance.len(),
        });
    }
    let max_steps = max_steps.unwrap_or(ensemble.dim).max(1);
    let (state, steps, capped) = run_student(instance, ensemble, policy, max_steps, |_| {});
    let probs = policy.predictor.predict_proba(&state.observed, &state.values)?;
    Ok(StudentTrace {
        steps,
        total_cost: policy.costs.total(&state.observed),
        predicted_class: argmax(&probs),
        final_prediction: probs,
        acquired: state.observed,
        values: state.values,
        capped,
    })
}

fn run_student(
    instance: &[f64],
    ensemble: &TreeEnsemble,
    policy: &TafaPolicy<'_>,
    max_steps: usize,
    mut visit: impl FnMut(&PolicyState),
) -> (PolicyState, Vec<StudentStep>, bool) {
    let o_init = policy.library.o_init;
    let mut state = PolicyState::initial(o_init, instance[o_init]);
    let mut steps = Vec::new();
    loop {
        visit(&state);
        let step = student_step(ensemble, policy, &state);
        if matches!(step.action, Action::Acquire { .. }) && state.len() >= max_steps {
            return (state, steps, true);
        }
        let action = step.action;
        steps.push(step);
        match action {
            Action::Terminate => return (state, steps, false),
            Action::Acquire { feature } => state.observe(feature, instance[feature]),
        }
    }
}

/// States visited by the teacher on one instance, with its labels and
/// executed actions.
fn teacher_trajectory(
    policy: &TafaPolicy<'_>,
    instance: &[f64],
    variant: Variant,
    exclude: Option<usize>,
) -> Vec<(PolicyState, StudentAction, Action)> {
    let dim = policy.dim();
    let mut state = PolicyState::initial(policy.library.o_init, instance[policy.library.o_init]);
    let mut out = Vec::new();
    loop {
        let d = policy.decide_excluding(&state, exclude);
        out.push((state.clone(), label_of(&d, variant), d.action));
        match d.action {
            Action::Acquire { feature } if state.len() < dim => state.observe(feature, instance[feature]),
            _ => return out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaggerConfig {
    pub variant: Variant,
    pub leaf_limit: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Cap on the number of training instances used for demonstrations.
    pub max_instances: Option<usize>,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        DaggerConfig {
            variant: Variant::PerCardinality,
            leaf_limit: 4,
            iterations: 5,
            seed: 0,
            max_instances: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DaggerOutcome {
    pub ensemble: TreeEnsemble,
    /// Student after each iteration, the first fitted on teacher data only.
    pub history: Vec<TreeEnsemble>,
    /// Aggregated dataset size after each iteration.
    pub dataset_sizes: Vec<usize>,
}

fn fit_ensemble(
    data: &[(PolicyState, StudentAction)],
    variant: Variant,
    dim: usize,
    n_templates: usize,
    leaf_limit: usize,
) -> Result<TreeEnsemble> {
    let mut groups: BTreeMap<usize, (Vec<Vec<f64>>, Vec<StudentAction>)> = BTreeMap::new();
    for (s, a) in data {
        let key = match variant {
            Variant::PerCardinality => s.len(),
            _ => 0,
        };
        let g = groups.entry(key).or_default();
        g.0.push(student_state(s, dim));
        g.1.push(*a);
    }
    let trees = groups
        .into_par_iter()
        .map(|(k, (xs, ys))| fit_tree(&xs, &ys, leaf_limit).map(|t| (k, t)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(TreeEnsemble {
        variant,
        action_space: match variant {
            Variant::FeatureAct => ActionSpace::Features(dim),
            _ => ActionSpace::Templates(n_templates),
        },
        dim,
        leaf_limit,
        trees,
    })
}

/// DAgger with the kNN policy as expert. `train_rows[i]` must be row `i`
/// of the policy's training matrix: teacher queries on that instance leave
/// row `i` out of the neighbour search so demonstrations match what the
/// teacher would do on unseen data.
pub fn dagger_train(policy: &TafaPolicy<'_>, train_rows: &Matrix, config: &DaggerConfig) -> Result<DaggerOutcome> {
    if config.iterations < 1 {
        return Err(TafaError::invalid("DAgger needs at least one iteration"));
    }
    if train_rows.rows() != policy.train.rows() || train_rows.cols() != policy.dim() {
        return Err(TafaError::invalid("training rows must be the policy's training matrix"));
    }
    let dim = policy.dim();
    let n_templates = policy.library.templates.len();
    let mut rows: Vec<usize> = (0..train_rows.rows()).collect();
    if let Some(cap) = config.max_instances {
        if cap < rows.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rows.shuffle(&mut rng);
            rows.truncate(cap);
            rows.sort_unstable();
        }
    }

    let first: Vec<Vec<(PolicyState, StudentAction)>> = rows
        .par_iter()
        .map(|&i| {
            teacher_trajectory(policy, train_rows.row(i), config.variant, Some(i))
                .into_iter()
                .map(|(s, a, _)| (s, a))
                .collect()
        })
        .collect();
    let mut data: Vec<(PolicyState, StudentAction)> = first.into_iter().flatten().collect();
    let mut ensemble = fit_ensemble(&data, config.variant, dim, n_templates, config.leaf_limit)?;
    let mut history = vec![ensemble.clone()];
    let mut sizes = vec![data.len()];

    for _ in 1..config.iterations {
        let batch: Vec<Vec<(PolicyState, StudentAction)>> = rows
            .par_iter()
            .map(|&i| {
                let mut visited = Vec::new();
                run_student(train_rows.row(i), &ensemble, policy, dim, |s| visited.push(s.clone()));
                visited
                    .into_iter()
                    .map(|s| {
                        let label = teacher_label(policy, &s, config.variant, Some(i));
                        (s, label)
                    })
                    .collect()
            })
            .collect();
        data.extend(batch.into_iter().flatten());
        ensemble = fit_ensemble(&data, config.variant, dim, n_templates, config.leaf_limit)?;
        history.push(ensemble.clone());
        sizes.push(data.len());
    }
    Ok(DaggerOutcome {
        ensemble,
        history,
        dataset_sizes: sizes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Student label equals the teacher's label.
    pub label: f64,
    /// Student's executed action (acquired feature or terminate) equals the
    /// teacher's.
    pub action: f64,
    pub states: usize,
}

/// Agreement with the teacher over the states the teacher visits on
/// `instances`. A missing tree counts as terminate.
pub fn teacher_agreement(ensemble: &TreeEnsemble, policy: &TafaPolicy<'_>, instances: &Matrix) -> Agreement {
    let (labels, actions, total) = (0..instances.rows())
        .into_par_iter()
        .map(|i| {
            let demo = teacher_trajectory(policy, instances.row(i), ensemble.variant, None);
            let mut hits = (0, 0);
            for (s, label, action) in &demo {
                let step = student_step(ensemble, policy, s);
                hits.0 += usize::from(step.label.unwrap_or(StudentAction::Terminate) == *label);
                hits.1 += usize::from(step.action == *action);
            }
            (hits.0, hits.1, demo.len())
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let n = total.max(1) as f64;
    Agreement {
        label: labels as f64 / n,
        action: actions as f64 / n,
        states: total,
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz description of one tree. Positions below `dim` are feature
/// values, the rest are observation-mask bits.
pub fn export_tree_dot(tree: &DecisionTree, feature_names: &[String], template_descriptions: &[String]) -> String {
    let dim = feature_names.len();
    let mut out = String::from("digraph tree {\n  node [shape=box];\n");
    for (i, node) in tree.nodes.iter().enumerate() {
        match node {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let cond = if *feature < dim {
                    format!("{} ≤ {:.3}", feature_names[*feature], threshold)
                } else {
                    format!("observed({}) ≤ {:.1}", feature_names[feature - dim], threshold)
                };
                let _ = writeln!(out, "  n{i} [label=\"{}\"];", escape(&cond));
                let _ = writeln!(out, "  n{i} -> n{left} [label=\"yes\"];");
                let _ = writeln!(out, "  n{i} -> n{right} [label=\"no\"];");
            }
            Node::Leaf { label, samples } => {
                let text = match label {
                    StudentAction::Terminate => "terminate".to_string(),
                    StudentAction::Template(b) => match template_descriptions.get(*b) {
                        Some(d) => format!("template {b}: {d}"),
                        None => format!("template {b}"),
                    },
                    StudentAction::Feature(a) => {
                        format!("acquire {}", feature_names.get(*a).map_or("?", String::as_str))
                    }
                };
                let _ = writeln!(
                    out,
                    "  n{i} [label=\"{}\\n({samples} samples)\", style=rounded];",
                    escape(&text)
                );
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_encoding() {
        let mut s = PolicyState::initial(2, 0.5);
        s.observe(0, -1.0);
        assert_eq!(student_state(&s, 3), vec![-1.0, 0.0, 0.5, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pure_labels_give_one_leaf() {
        let xs = vec![vec![0.0], vec![1.0], vec![2.0]];
        let ys = vec![StudentAction::Template(2); 3];
        let t = fit_tree(&xs, &ys, 4).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.predict(&[5.0]), StudentAction::Template(2));
    }

    #[test]
    fn xor_with_four_leaves() {
        // one extra (0, 0) point breaks the symmetry that leaves XOR with no
        // positive-gain first split
        let cells = [(0.0, 0.0, 3), (0.0, 1.0, 2), (1.0, 0.0, 2), (1.0, 1.0, 2)];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &(a, b, reps) in &cells {
            for _ in 0..reps {
                xs.push(vec![a, b]);
                ys.push(if a != b {
                    StudentAction::Terminate
                } else {
                    StudentAction::Template(0)
                });
            }
        }
        let t = fit_tree(&xs, &ys, 4).unwrap();
        assert_eq!(t.n_leaves(), 4);
        let acc = xs.iter().zip(&ys).filter(|(x, y)| t.predict(x) == **y).count();
        assert_eq!(acc, xs.len());
    }

    #[test]
    fn fit_errors() {
        assert!(fit_tree(&[], &[], 4).is_err());
        assert!(fit_tree(&[vec![0.0]], &[StudentAction::Terminate], 1).is_err());
    }

    #[test]
    fn dot_export() {
        let t = DecisionTree::leaf(StudentAction::Terminate);
        let dot = export_tree_dot(&t, &["a".into()], &[]);
        assert!(dot.contains("terminate"));
        assert_eq!(dot.matches("[label=").count(), 1);
    }
}
