//! Class-probability prediction from an arbitrary observed subset.
//!
//! The reference model is Gaussian naive Bayes: conditioning on a subset is
//! exact marginalization, so no retraining is needed per mask.

use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::dataset::{Dataset, Matrix};
use crate::error::{Result, TafaError};

/// Clamp added inside the log of the cross-entropy.
pub const CE_EPSILON: f64 = 1e-12;

pub trait Predictor: Send + Sync {
    fn n_classes(&self) -> usize;
    fn n_features(&self) -> usize;

    /// Posterior over classes given `values[i]` observed at feature
    /// `observed[i]`. Unlisted features are marginalized out.
    fn predict_proba(&self, observed: &[usize], values: &[f64]) -> Result<Vec<f64>>;
}

/// Index of the largest probability; ties go to the lowest class.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy `-ln(p[label] + eps)`.
#[inline]
pub fn task_loss(probs: &[f64], label: usize) -> f64 {
    -(probs[label] + CE_EPSILON).ln()
}

/// `-1(argmax = label) - shift`.
#[inline]
pub fn zero_one_loss(probs: &[f64], label: usize, shift: f64) -> f64 {
    let hit = if argmax(probs) == label { 1.0 } else { 0.0 };
    -hit - shift
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskLoss {
    CrossEntropy,
    ShiftedZeroOne { shift: f64 },
}

impl TaskLoss {
    #[inline]
    pub fn eval(&self, probs: &[f64], label: usize) -> f64 {
        match *self {
            TaskLoss::CrossEntropy => task_loss(probs, label),
            TaskLoss::ShiftedZeroOne { shift } => zero_one_loss(probs, label, shift),
        }
    }
}

/// In-place softmax of log joint probabilities.
#[inline]
fn normalize_log_joint(lj: &mut [f64]) {
    let m = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in lj.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in lj.iter_mut() {
        *v /= s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNB {
    pub priors: Vec<f64>,
    /// `n_classes x n_features`, row-major.
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub variance_floor: f64,
    pub n_features: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(skip)]
    cache: NbCache,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct NbCache {
    log_priors: Vec<f64>,
    log_norm: Vec<f64>,
    inv_two_var: Vec<f64>,
}

impl Artifact for GaussianNB {
    const SCHEMA: &'static str = "tafa.gaussian_nb";
    const VERSION: u32 = 1;
}

impl GaussianNB {
    pub fn from_parts(
        priors: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        variance_floor: f64,
        n_features: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let c = priors.len();
        if means.len() != c * n_features || variances.len() != c * n_features {
            return Err(TafaError::DimensionMismatch {
                expected: c * n_features,
                actual: means.len().min(variances.len()),
            });
        }
        if !(variance_floor > 0.0) || variances.iter().any(|&v| !(v >= variance_floor)) {
            return Err(TafaError::invalid("variances must be >= variance_floor > 0"));
        }
        let mut nb = GaussianNB {
            priors,
            means,
            variances,
            variance_floor,
            n_features,
            class_names,
            cache: NbCache::default(),
        };
        nb.rebuild_cache();
        Ok(nb)
    }

    /// Restores derived tables after deserialization.
    pub fn rebuild_cache(&mut self) {
        self.cache = NbCache {
            log_priors: self.priors.iter().map(|p| p.ln()).collect(),
            log_norm: self
                .variances
                .iter()
                .map(|v| -0.5 * (2.0 * std::f64::consts::PI * v).ln())
                .collect(),
            inv_two_var: self.variances.iter().map(|v| 1.0 / (2.0 * v)).collect(),
        };
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut nb: GaussianNB = crate::artifact::load(path)?;
        nb.validate()?;
        nb.rebuild_cache();
        Ok(nb)
    }

    fn validate(&self) -> Result<()> {
        Self::from_parts(
            self.priors.clone(),
            self.means.clone(),
            self.variances.clone(),
            self.variance_floor,
            self.n_features,
            Vec::new(),
        )
        .map(|_| ())
    }

    #[inline]
    pub fn log_density(&self, class: usize, feature: usize, x: f64) -> f64 {
        let k = class * self.n_features + feature;
        let z = x - self.means[k];
        self.cache.log_norm[k] - z * z * self.cache.inv_two_var[k]
    }

    pub fn log_priors(&self) -> &[f64] {
        &self.cache.log_priors
    }

    pub fn mean(&self, class: usize, feature: usize) -> f64 {
        self.means[class * self.n_features + feature]
    }

    pub fn variance(&self, class: usize, feature: usize) -> f64 {
        self.variances[class * self.n_features + feature]
    }
}

/// Maximum-likelihood fit on the rows in `train`.
pub fn fit_gaussian_nb(dataset: &Dataset, train: &[usize], variance_floor: f64) -> Result<GaussianNB> {
    if !(variance_floor > 0.0) {
        return Err(TafaError::invalid("variance floor must be positive"));
    }
    let c = dataset.n_classes;
    let d = dataset.n_features();
    let mut counts = vec![0usize; c];
    let mut sums = vec![0.0; c * d];
    for &i in train {
        let y = dataset.labels[i];
        counts[y] += 1;
        for (j, &x) in dataset.features.row(i).iter().enumerate() {
            sums[y * d + j] += x;
        }
    }
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
        return Err(TafaError::ClassTooSmall { class, count });
    }
    let means: Vec<f64> = sums
        .iter()
        .enumerate()
        .map(|(k, s)| s / counts[k / d] as f64)
        .collect();
    let mut sq = vec![0.0; c * d];
    for &i in train {
        let y = dataset.labels[i];
        for (j, &x) in dataset.features.row(i).iter().enumerate() {
            let z = x - means[y * d + j];
            sq[y * d + j] += z * z;
        }
    }
    let variances = sq
        .iter()
        .enumerate()
        .map(|(k, s)| (s / counts[k / d] as f64).max(variance_floor))
        .collect();
    let n = train.len() as f64;
    let priors = counts.iter().map(|&k| k as f64 / n).collect();
    GaussianNB::from_parts(
        priors,
        means,
        variances,
        variance_floor,
        d,
        dataset.class_names.clone(),
    )
}

impl Predictor for GaussianNB {
    fn n_classes(&self) -> usize {
        self.priors.len()
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, observed: &[usize], values: &[f64]) -> Result<Vec<f64>> {
        if observed.len() != values.len() {
            return Err(TafaError::DimensionMismatch {
                expected: observed.len(),
                actual: values.len(),
            });
        }
        if let Some(&bad) = observed.iter().find(|&&d| d >= self.n_features) {
            return Err(TafaError::FeatureOutOfRange {
                index: bad,
                dim: self.n_features,
            });
        }
        if observed.is_empty() {
            return Ok(self.priors.clone());
        }
        let mut lj = self.cache.log_priors.clone();
        for (&d, &x) in observed.iter().zip(values) {
            for (c, v) in lj.iter_mut().enumerate() {
                *v += self.log_density(c, d, x);
            }
        }
        normalize_log_joint(&mut lj);
        Ok(lj)
    }
}

/// Batch evaluation of per-row prediction losses for one feature subset.
pub trait SubsetScorer: Sync {
    fn n_rows(&self) -> usize;
    fn n_features(&self) -> usize;
    fn task_loss(&self) -> TaskLoss;

    /// `l(y_hat(x_b), y)` for every row, in row order.
    fn prediction_losses(&self, template: &[usize]) -> Vec<f64>;
}

/// Scores rows by calling [`Predictor::predict_proba`] row by row.
pub struct GenericScorer<'a> {
    pub predictor: &'a dyn Predictor,
    pub features: &'a Matrix,
    pub labels: &'a [usize],
    pub loss: TaskLoss,
}

impl SubsetScorer for GenericScorer<'_> {
    fn n_rows(&self) -> usize {
        self.features.rows()
    }

    fn n_features(&self) -> usize {
        self.features.cols()
    }

    fn task_loss(&self) -> TaskLoss {
        self.loss
    }

    fn prediction_losses(&self, template: &[usize]) -> Vec<f64> {
        let mut values = vec![0.0; template.len()];
        (0..self.features.rows())
            .map(|n| {
                let row = self.features.row(n);
                for (v, &d) in values.iter_mut().zip(template) {
                    *v = row[d];
                }
                let probs = self
                    .predictor
                    .predict_proba(template, &values)
                    .expect("template validated by caller");
                self.loss.eval(&probs, self.labels[n])
            })
            .collect()
    }
}

/// Naive Bayes scorer with per-row log-density tables precomputed, so a
/// subset costs `|b| * C` additions per row. Produces the same bits as
/// [`GaussianNB::predict_proba`] followed by the loss.
pub struct NbScorer<'a> {
    model: &'a GaussianNB,
    labels: &'a [usize],
    n_rows: usize,
    /// `[row][feature][class]`
    table: Vec<f64>,
    loss: TaskLoss,
}

impl<'a> NbScorer<'a> {
    pub fn new(model: &'a GaussianNB, features: &Matrix, labels: &'a [usize], loss: TaskLoss) -> Self {
        let c = model.n_classes();
        let d = features.cols();
        let mut table = Vec::with_capacity(features.rows() * d * c);
        for n in 0..features.rows() {
            for (j, &x) in features.row(n).iter().enumerate() {
                for k in 0..c {
                    table.push(model.log_density(k, j, x));
                }
            }
        }
        NbScorer {
            model,
            labels,
            n_rows: features.rows(),
            table,
            loss,
        }
    }
}

impl SubsetScorer for NbScorer<'_> {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_features(&self) -> usize {
        self.model.n_features
    }

    fn task_loss(&self) -> TaskLoss {
        self.loss
    }

    fn prediction_losses(&self, template: &[usize]) -> Vec<f64> {
        let c = self.model.n_classes();
        let d = self.model.n_features;
        let mut lj = vec![0.0; c];
        let mut out = Vec::with_capacity(self.n_rows);
        for n in 0..self.n_rows {
            if template.is_empty() {
                out.push(self.loss.eval(&self.model.priors, self.labels[n]));
                continue;
            }
            lj.copy_from_slice(self.model.log_priors());
            let base = n * d * c;
            for &f in template {
                let cell = &self.table[base + f * c..base + f * c + c];
                for (v, &l) in lj.iter_mut().zip(cell) {
                    *v += l;
                }
            }
            normalize_log_joint(&mut lj);
            out.push(self.loss.eval(&lj, self.labels[n]));
        }
        out
    }
}
