use thiserror::Error;

use crate::plan::StageId;

/// Problems with a logical plan file or its structure.
#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read plan file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed plan: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid plan: {0}")]
    Empty(String),
    #[error("invalid plan at stage {stage}: {reason}")]
    Validation { stage: StageId, reason: String },
}

/// Problems with a calibration profile.
#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read profile file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed profile: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid profile field `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl ProfileError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ProfileError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// A stage configuration the cost model cannot price.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("stage {stage}: {reason}")]
    Config { stage: StageId, reason: String },
    #[error("stage {stage}: operator {operator} has no calibration entry")]
    OperatorUnprofiled { stage: StageId, operator: String },
    #[error("stage {stage}: storage service {service} is not in the profile")]
    UnknownStorage { stage: StageId, service: String },
}

/// Failures of the frontier search.
#[derive(Debug, Error)]
pub enum SearchError {
    #[error("stage {stage}: no configuration survives the pruning heuristics")]
    EmptySpace { stage: StageId },
    #[error("the search space has {size} configurations, above the cap of {cap}")]
    SpaceTooLarge { size: u128, cap: u128 },
    #[error("stage {stage}: local space of {size} plans exceeds the cap of {cap}")]
    LocalSpaceCap {
        stage: StageId,
        size: usize,
        cap: usize,
    },
    #[error("no complete plan satisfies the partition alignment constraints")]
    NoFeasiblePlan,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A preference that no frontier point satisfies.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("no frontier point satisfies {preference}; nearest is point {nearest_index} (cost {nearest_cost}, latency {nearest_latency_s} s)")]
pub struct BudgetInfeasibleError {
    pub preference: String,
    pub nearest_index: usize,
    pub nearest_cost: f64,
    pub nearest_latency_s: f64,
}

/// Errors reading or writing the versioned artifact documents.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format_version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid document: {0}")]
    Invalid(String),
}
