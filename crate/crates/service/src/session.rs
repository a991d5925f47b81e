use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use tafa_core::policy::{Action, PolicyBundle, PolicyState};
use tafa_core::predictor::argmax;

use crate::error::ApiError;
use crate::payload::{
    Explanation, FeatureRequest, Observation, Prediction, SessionStatus, SessionView, StepPayload, StepResult,
    TraceRow,
};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One live acquisition. Owned by a per-session mutex, so every method
/// here runs with exclusive access.
pub struct Session {
    pub id: String,
    pub library_id: String,
    bundle: Arc<PolicyBundle>,
    lambda: f64,
    k: usize,
    state: Option<PolicyState>,
    status: SessionStatus,
    aborted: bool,
    pending: Option<usize>,
    observations: Vec<Observation>,
    trace: Vec<TraceRow>,
    prediction: Option<Prediction>,
    created_at_ms: u64,
    updated_at_ms: u64,
}

impl Session {
    pub fn new(
        id: String,
        library_id: String,
        bundle: Arc<PolicyBundle>,
        lambda: Option<f64>,
        k: Option<usize>,
    ) -> Result<Self, ApiError> {
        let lambda = lambda.unwrap_or(bundle.library.lambda);
        let k = k.unwrap_or(bundle.k);
        // validates the overrides the same way a rollout would
        bundle
            .policy(Some(lambda), Some(k))
            .map_err(|e| ApiError::invalid_request(e.to_string()))?;
        let t = now_ms();
        Ok(Session {
            id,
            library_id,
            pending: Some(bundle.library.o_init),
            bundle,
            lambda,
            k,
            state: None,
            status: SessionStatus::AwaitingValue,
            aborted: false,
            observations: Vec::new(),
            trace: Vec::new(),
            prediction: None,
            created_at_ms: t,
            updated_at_ms: t,
        })
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    fn request(&self, feature: usize) -> FeatureRequest {
        FeatureRequest {
            feature,
            feature_name: self.bundle.feature_names[feature].clone(),
        }
    }

    pub fn pending_request(&self) -> Option<FeatureRequest> {
        self.pending.map(|f| self.request(f))
    }

    pub fn observe(&mut self, feature: usize, raw: f64) -> Result<StepPayload, ApiError> {
        if self.status == SessionStatus::Terminated {
            return Err(ApiError::session_terminated(&self.id));
        }
        let expected = self.pending.expect("non-terminated sessions always wait for a value");
        if feature != expected {
            return Err(ApiError::unexpected_feature(expected, feature, &self.bundle.feature_names));
        }
        if !raw.is_finite() {
            return Err(ApiError::non_finite(feature, raw));
        }
        self.status = SessionStatus::Active;
        let result = self.advance(feature, raw);
        if result.is_err() {
            self.status = SessionStatus::AwaitingValue;
        }
        result
    }

    fn advance(&mut self, feature: usize, raw: f64) -> Result<StepPayload, ApiError> {
        let bundle = Arc::clone(&self.bundle);
        let policy = bundle
            .policy(Some(self.lambda), Some(self.k))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let z = bundle.scaling.apply_value(feature, raw);
        let state = match self.state.take() {
            Some(mut s) => {
                s.observe(feature, z);
                s
            }
            None => PolicyState::initial(feature, z),
        };
        let decision = policy.decide(&state);
        let templates: Vec<Vec<usize>> = bundle.library.templates.iter().map(|t| t.indices().to_vec()).collect();
        let explanation = Explanation::from_decision(&decision, self.lambda, &templates, &bundle.feature_names);
        let observation = Observation {
            feature,
            feature_name: bundle.feature_names[feature].clone(),
            raw_value: raw,
            standardized_value: z,
        };
        let result = match decision.action {
            Action::Acquire { feature: next } => {
                self.pending = Some(next);
                self.status = SessionStatus::AwaitingValue;
                StepResult::Acquire {
                    request: self.request(next),
                }
            }
            Action::Terminate => {
                let probs = policy
                    .predictor
                    .predict_proba(&state.observed, &state.values)
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                let predicted_class = argmax(&probs);
                let prediction = Prediction {
                    class_name: bundle.class_names[predicted_class].clone(),
                    predicted_class,
                    total_cost: bundle.costs.total(&state.observed),
                    probabilities: probs,
                };
                self.pending = None;
                self.status = SessionStatus::Terminated;
                self.prediction = Some(prediction.clone());
                StepResult::Terminate { prediction }
            }
        };
        let step = self.trace.len();
        self.observations.push(observation.clone());
        self.trace.push(TraceRow {
            step,
            observation,
            observed_count: state.len(),
            explanation: explanation.clone(),
        });
        self.state = Some(state);
        self.updated_at_ms = now_ms();
        Ok(StepPayload {
            session_id: self.id.clone(),
            step,
            status: self.status,
            result,
            explanation,
        })
    }

    /// Terminates without a prediction. Aborting twice is an error like any
    /// other call on a terminated session.
    pub fn abort(&mut self) -> Result<(), ApiError> {
        if self.status == SessionStatus::Terminated {
            return Err(ApiError::session_terminated(&self.id));
        }
        self.status = SessionStatus::Terminated;
        self.aborted = true;
        self.pending = None;
        self.updated_at_ms = now_ms();
        Ok(())
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            library_id: self.library_id.clone(),
            status: self.status,
            aborted: self.aborted,
            lambda: self.lambda,
            k: self.k,
            observations: self.observations.clone(),
            trace: self.trace.clone(),
            pending_request: self.pending_request(),
            explanation: self.trace.last().map(|r| r.explanation.clone()),
            prediction: self.prediction.clone(),
            created_at_ms: self.created_at_ms,
            updated_at_ms: self.updated_at_ms,
        }
    }
}

pub(crate) fn parse_value(value: &serde_json::Value) -> Result<f64, ApiError> {
    match value {
        serde_json::Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| ApiError::invalid_request(format!("value {n} is not representable"))),
        serde_json::Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "nan" => Ok(f64::NAN),
            "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| ApiError::invalid_request(format!("value {s:?} is not a number"))),
        },
        other => Err(ApiError::new(
            axum::http::StatusCode::BAD_REQUEST,
            "invalid_request",
            "value must be a number",
            json!({ "value": other }),
        )),
    }
}
