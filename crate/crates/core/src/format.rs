//! Versioned JSON documents exchanged between the command line, the local
//! service and the browser explorer.
//!
//! Every document carries `format_version` and the [`RunManifest`] of the
//! command that produced it. Documents embed the logical plan they refer to,
//! so a selected plan can be simulated without the original plan file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::pareto::{CandidatePlan, ParetoFrontier};
use crate::plan::{LogicalPlan, StageId};
use crate::sim::{SimulationConfig, SimulationResult, ValidationReport};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Plan,
    Select,
    Simulate,
    Serve,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Plan => "plan",
            Command::Select => "select",
            Command::Simulate => "simulate",
            Command::Serve => "serve",
        })
    }
}

/// How an artifact was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub plan_path: Option<String>,
    pub profile_path: Option<String>,
    pub options: BTreeMap<String, String>,
    /// Unix seconds from `SOURCE_DATE_EPOCH`; absent otherwise so reruns
    /// produce identical bytes.
    pub timestamp: Option<u64>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: Command) -> Self {
        RunManifest {
            command,
            plan_path: None,
            profile_path: None,
            options: BTreeMap::new(),
            timestamp: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn option(mut self, key: &str, value: impl ToString) -> Self {
        self.options.insert(key.to_string(), value.to_string());
        self
    }
}

/// Pruning statistics of a planning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningSummary {
    pub stage_order: Vec<StageId>,
    pub pruned_sizes: Vec<usize>,
    pub space_size: u128,
    pub evaluated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierDocument<T> {
    pub format_version: u32,
    pub manifest: RunManifest,
    pub plan: LogicalPlan,
    pub planning: PlanningSummary,
    pub frontier: ParetoFrontier<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectedPlanDocument<T> {
    pub format_version: u32,
    pub manifest: RunManifest,
    pub preference: String,
    pub index: usize,
    pub plan: LogicalPlan,
    pub selected: CandidatePlan<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationReport<T> {
    pub format_version: u32,
    pub manifest: RunManifest,
    pub config: SimulationConfig,
    pub validation: ValidationReport<T>,
    pub result: SimulationResult<T>,
}

/// Serializes `doc` exactly as files and service responses carry it.
pub fn to_document_string<D: Serialize>(doc: &D) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
    s.push('\n');
    s
}

/// Parses a document, checking `format_version` before the body.
pub fn from_document_str<D: DeserializeOwned>(text: &str) -> Result<D, FormatError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| FormatError::Invalid("missing numeric format_version".into()))?;
    if found != FORMAT_VERSION as u64 {
        return Err(FormatError::Version {
            found: found.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn write_document<D: Serialize>(path: impl AsRef<Path>, doc: &D) -> Result<(), FormatError> {
    let path = path.as_ref();
    std::fs::write(path, to_document_string(doc)).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_document<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D, FormatError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_document_str(&text)
}

impl<T: crate::scalar::Scalar> FrontierDocument<T> {
    /// Checks the frontier shape and that every point configures the plan.
    pub fn validate(&self) -> Result<(), FormatError> {
        self.plan
            .validate()
            .map_err(|e| FormatError::Invalid(e.to_string()))?;
        if self.frontier.is_empty() {
            return Err(FormatError::Invalid("frontier has no points".into()));
        }
        if !self.frontier.is_well_formed() {
            return Err(FormatError::Invalid(
                "frontier points must have ascending cost and descending latency".into(),
            ));
        }
        for (i, p) in self.frontier.points.iter().enumerate() {
            crate::cost::check_plan_configs(&self.plan, &p.stage_configs)
                .map_err(|e| FormatError::Invalid(format!("point {i}: {e}")))?;
        }
        Ok(())
    }
}
