//! Config-driven runs, verification suites and reports for grflab.

pub mod config;
pub mod report;
pub mod run;
pub mod suites;

pub use config::{ConfigError, ExperimentConfig};
pub use report::{Bound, Check, RunReport};
pub use run::{execute, RunOutcome};
pub use suites::{verify, Suite};

use grflab::LabError;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Library errors that describe a bad request rather than a failed solve.
fn is_config_error(e: &LabError) -> bool {
    matches!(
        e,
        LabError::InvalidBackend(_)
            | LabError::UnsupportedDegree { .. }
            | LabError::MissingField(_)
            | LabError::NotClosed { .. }
            | LabError::RangeError { .. }
            | LabError::RicciFlowOnly
            | LabError::Unsupported(_)
            | LabError::Serialization(_)
    )
}

/// Exit code for an error: 3 for numerical aborts, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<LabError>()) {
        Some(e) if !is_config_error(e) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

/// Machine-readable diagnostics; numerical aborts carry their location.
pub fn error_payload(err: &anyhow::Error) -> serde_json::Value {
    let kind = if exit_code(err) == EXIT_NUMERICAL { "numerical" } else { "config" };
    let mut v = serde_json::json!({ "error": kind, "message": format!("{err:#}") });
    if let Some(e) = err.chain().find_map(|e| e.downcast_ref::<LabError>()) {
        let (variant, t, node) = match e {
            LabError::MetricDegenerate { t, node, .. } => ("MetricDegenerate", Some(*t), Some(*node)),
            LabError::PositivityLoss { t, node } => ("PositivityLoss", Some(*t), Some(*node)),
            LabError::StiffnessAbort { t, .. } => ("StiffnessAbort", Some(*t), None),
            LabError::MaxPrincipleViolation { t, .. } => ("MaxPrincipleViolation", Some(*t), None),
            LabError::DegenerateMetric { node, .. } => ("DegenerateMetric", None, Some(*node)),
            other => (variant_name(other), None, None),
        };
        v["variant"] = variant.into();
        if let Some(t) = t {
            v["t"] = t.into();
        }
        if let Some(node) = node {
            v["node"] = node.into();
        }
    }
    v
}

fn variant_name(e: &LabError) -> &'static str {
    match e {
        LabError::InvalidBackend(_) => "InvalidBackend",
        LabError::DegenerateMetric { .. } => "DegenerateMetric",
        LabError::UnsupportedDegree { .. } => "UnsupportedDegree",
        LabError::AnsatzBreak { .. } => "AnsatzBreak",
        LabError::MissingField(_) => "MissingField",
        LabError::NotClosed { .. } => "NotClosed",
        LabError::MetricDegenerate { .. } => "MetricDegenerate",
        LabError::StiffnessAbort { .. } => "StiffnessAbort",
        LabError::RangeError { .. } => "RangeError",
        LabError::MaxPrincipleViolation { .. } => "MaxPrincipleViolation",
        LabError::PositivityLoss { .. } => "PositivityLoss",
        LabError::MassDrift { .. } => "MassDrift",
        LabError::PositivityRequired => "PositivityRequired",
        LabError::RicciFlowOnly => "RicciFlowOnly",
        LabError::NormalizationError { .. } => "NormalizationError",
        LabError::EigenFail { .. } => "EigenFail",
        LabError::TooSmall(_) => "TooSmall",
        LabError::ZeroFunction => "ZeroFunction",
        LabError::FixtureBroken(_) => "FixtureBroken",
        LabError::NoConvergence(_) => "NoConvergence",
        LabError::Unsupported(_) => "Unsupported",
        LabError::Serialization(_) => "Serialization",
    }
}
