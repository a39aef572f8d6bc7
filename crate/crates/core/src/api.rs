//! Request and response bodies of the planning service, shared by the server
//! and its clients. All bodies are JSON.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::generative::{DesignInputEstimate, EstimationOptions, GenerativeSpec};

/// Body of `POST /calibrate`: a model plus optional Monte Carlo controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRequest {
    pub spec: GenerativeSpec,
    #[serde(default)]
    pub options: EstimationOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

/// Body of `POST /calibrate` (202) and `GET /calibrate/{id}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<DesignInputEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

/// Error payload of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// `invalid_request`, `invalid_parameter`, `invalid_data`, `infeasible`,
    /// `undefined`, `numerical`, `not_found` or `internal`.
    pub kind: String,
    pub message: String,
    /// Offending field, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    /// `(M, variance)` points visited by a failed cluster search.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<(u64, f64)>,
}

impl ErrorBody {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        ErrorBody { kind: kind.into(), message: message.into(), field: None, trajectory: Vec::new() }
    }

    /// HTTP status for this kind of error.
    pub fn status(&self) -> u16 {
        match self.kind.as_str() {
            "infeasible" | "undefined" | "numerical" => 422,
            "not_found" => 404,
            "internal" => 500,
            _ => 400,
        }
    }
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        let mut b = match e {
            Error::Parameter { field, .. } => {
                ErrorBody { field: Some((*field).into()), ..ErrorBody::new("invalid_parameter", "") }
            }
            Error::Infeasible { trajectory, .. } => {
                ErrorBody { trajectory: trajectory.clone(), ..ErrorBody::new("infeasible", "") }
            }
            Error::Undefined(_) => ErrorBody::new("undefined", ""),
            Error::Numerical(_) => ErrorBody::new("numerical", ""),
            Error::Json(_) => ErrorBody::new("invalid_request", ""),
            Error::Io(_) => ErrorBody::new("internal", ""),
            Error::Data(_) | Error::TierMismatch { .. } | Error::Parse { .. } => ErrorBody::new("invalid_data", ""),
        };
        b.message = e.to_string();
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_errors_map_to_statuses() {
        let b = ErrorBody::from(&Error::param("nbar", "must be >= 1"));
        assert_eq!((b.status(), b.field.as_deref()), (400, Some("nbar")));
        let b = ErrorBody::from(&Error::Infeasible { reason: "x".into(), trajectory: vec![(4, 0.1)] });
        assert_eq!((b.status(), b.trajectory.len()), (422, 1));
        assert_eq!(ErrorBody::new("not_found", "gone").status(), 404);
    }

    #[test]
    fn calibration_request_defaults_options() {
        let r: CalibrationRequest = serde_json::from_str(
            r#"{"spec":{"model":"ordinal","control_probs":[0.5,0.5],"beta_effect":0.3,"sigma_b2":0.1,
                "cluster_size":{"type":"fixed","size":10}}}"#,
        )
        .unwrap();
        assert_eq!(r.options, EstimationOptions::default());
    }
}
