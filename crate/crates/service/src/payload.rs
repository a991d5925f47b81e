//! Wire types. Every response body carries `schema` and `version`.

use serde::{Deserialize, Serialize};

use tafa_core::policy::{Action, Decision};

pub const VERSION: u32 = 1;

pub mod schema {
    pub const HEALTH: &str = "tafa.health";
    pub const LIBRARIES: &str = "tafa.libraries";
    pub const SESSION: &str = "tafa.session";
    pub const CREATED: &str = "tafa.session_created";
    pub const STEP: &str = "tafa.step";
    pub const ERROR: &str = "tafa.error";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema: String,
    pub version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(schema: &str, body: T) -> Self {
        Versioned {
            schema: schema.to_string(),
            version: VERSION,
            body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub service_version: String,
    pub libraries: usize,
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySummary {
    pub id: String,
    pub dataset: String,
    pub lambda: f64,
    pub k: usize,
    pub template_count: usize,
    pub o_init: usize,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub feature_costs: Vec<f64>,
    pub templates: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryList {
    pub libraries: Vec<LibrarySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub library_id: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub k: Option<usize>,
}

/// `value` is kept loose so that `"NaN"` or `"inf"` strings reach the
/// finiteness check instead of failing as malformed JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observe {
    pub feature: usize,
    pub value: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingValue,
    Active,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRequest {
    pub feature: usize,
    pub feature_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateScore {
    pub index: usize,
    pub features: Vec<usize>,
    pub feature_names: Vec<String>,
    pub estimated_loss: f64,
    pub remaining_cost: f64,
    pub weighted_cost: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NextAction {
    Acquire { feature: usize, feature_name: String },
    Terminate,
}

impl NextAction {
    pub fn to_action(&self) -> Action {
        match self {
            NextAction::Acquire { feature, .. } => Action::Acquire { feature: *feature },
            NextAction::Terminate => Action::Terminate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub lambda: f64,
    pub templates: Vec<TemplateScore>,
    pub selected_template: usize,
    pub next_action: NextAction,
}

impl Explanation {
    pub fn from_decision(d: &Decision, lambda: f64, templates: &[Vec<usize>], names: &[String]) -> Self {
        let rows = templates
            .iter()
            .enumerate()
            .map(|(b, feats)| TemplateScore {
                index: b,
                features: feats.clone(),
                feature_names: feats.iter().map(|&f| names[f].clone()).collect(),
                estimated_loss: d.scores.estimated_loss[b],
                remaining_cost: d.scores.remaining_cost[b],
                weighted_cost: lambda * d.scores.remaining_cost[b],
                total: d.scores.total[b],
            })
            .collect();
        let next_action = match d.action {
            Action::Acquire { feature } => NextAction::Acquire {
                feature,
                feature_name: names[feature].clone(),
            },
            Action::Terminate => NextAction::Terminate,
        };
        Explanation {
            lambda,
            templates: rows,
            selected_template: d.selected_template,
            next_action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
    pub class_name: String,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub feature: usize,
    pub feature_name: String,
    pub raw_value: f64,
    pub standardized_value: f64,
}

/// One submitted value and the decision taken right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub observation: Observation,
    pub observed_count: usize,
    pub explanation: Explanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub library_id: String,
    pub status: SessionStatus,
    pub aborted: bool,
    pub lambda: f64,
    pub k: usize,
    pub observations: Vec<Observation>,
    pub trace: Vec<TraceRow>,
    pub pending_request: Option<FeatureRequest>,
    pub explanation: Option<Explanation>,
    pub prediction: Option<Prediction>,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session: SessionView,
    pub request: FeatureRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepResult {
    Acquire { request: FeatureRequest },
    Terminate { prediction: Prediction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPayload {
    pub session_id: String,
    pub step: usize,
    pub status: SessionStatus,
    pub result: StepResult,
    pub explanation: Explanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: serde_json::Value,
}
