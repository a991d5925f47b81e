//! Template-based active feature acquisition.
//!
//! A policy acquires features one at a time, at a cost, before predicting.
//! Instead of reasoning over every feature subset, it chooses among a small
//! learned library of templates (jointly informative feature sets), guided
//! by nearest-neighbour estimates of each template's prediction loss.
//!
//! - [`dataset`]: data, costs, splits, the CUBE generator, CSV ingestion
//! - [`predictor`]: subset predictors (Gaussian naive Bayes) and losses
//! - [`search`]: greedy and iterated-mutation template search
//! - [`policy`]: the kNN template policy and its rollout
//! - [`distill`]: DAgger distillation into per-cardinality decision trees
//! - [`oracle`]: brute-force references for the theoretical guarantees
//! - [`eval`]: sweeps, baselines and ablations

pub mod artifact;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod policy;
pub mod predictor;
pub mod search;

pub use dataset::{generate_cube, load_csv, read_csv, split, CostModel, Dataset, Matrix, Scaling, Split};
pub use error::{Result, TafaError};
pub use policy::{Action, PolicyBundle, PolicyState, RolloutTrace, TafaPolicy, TemplateLossCache};
pub use predictor::{fit_gaussian_nb, GaussianNB, NbScorer, Predictor, SubsetScorer, TaskLoss};
pub use search::{SearchConfig, Template, TemplateLibrary};
