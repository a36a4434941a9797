//! Logical query-stage DAG: the planner's input.
//!
//! A plan is an ordered list of stages numbered `1..=N`. Each stage names the
//! stages it consumes from; producers always carry a lower id, so the input
//! order is already topological. Cardinalities are byte counts and are taken
//! as given.

use std::collections::{BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::PlanError;

/// Version written into plan documents produced by this crate.
pub const PLAN_FORMAT_VERSION: u32 = 1;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct StageId(pub u32);

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum OperatorKind {
    Scan,
    Join,
    Aggregate,
    GlobalAggregate,
    Sort,
    Project,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 6] = [
        OperatorKind::Scan,
        OperatorKind::Join,
        OperatorKind::Aggregate,
        OperatorKind::GlobalAggregate,
        OperatorKind::Sort,
        OperatorKind::Project,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Scan => "Scan",
            OperatorKind::Join => "Join",
            OperatorKind::Aggregate => "Aggregate",
            OperatorKind::GlobalAggregate => "GlobalAggregate",
            OperatorKind::Sort => "Sort",
            OperatorKind::Project => "Project",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operator `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicalStage {
    pub id: StageId,
    pub operator: OperatorKind,
    #[serde(default)]
    pub producers: Vec<StageId>,
    pub input_bytes: u64,
    pub output_bytes: u64,
    /// Metadata only; the cardinalities are authoritative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicalPlan {
    #[serde(default = "plan_format_version")]
    pub format_version: u32,
    pub name: String,
    pub stages: Vec<LogicalStage>,
}

fn plan_format_version() -> u32 {
    PLAN_FORMAT_VERSION
}

impl LogicalPlan {
    /// Builds and validates a plan.
    pub fn new(name: impl Into<String>, stages: Vec<LogicalStage>) -> Result<Self, PlanError> {
        let plan = LogicalPlan {
            format_version: PLAN_FORMAT_VERSION,
            name: name.into(),
            stages,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let plan: LogicalPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Stage by id. Ids are contiguous, so this is an index lookup.
    pub fn stage(&self, id: StageId) -> &LogicalStage {
        &self.stages[id.0 as usize - 1]
    }

    /// Ids of the stages that consume `id`'s output, ascending.
    pub fn consumers(&self, id: StageId) -> Vec<StageId> {
        self.stages
            .iter()
            .filter(|s| s.producers.contains(&id))
            .map(|s| s.id)
            .collect()
    }

    pub fn is_terminal(&self, id: StageId) -> bool {
        !self.stages.iter().any(|s| s.producers.contains(&id))
    }

    pub fn terminals(&self) -> Vec<StageId> {
        self.stages
            .iter()
            .map(|s| s.id)
            .filter(|&id| self.is_terminal(id))
            .collect()
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.stages.is_empty() {
            return Err(PlanError::Empty("a plan needs at least one stage".into()));
        }
        for (pos, stage) in self.stages.iter().enumerate() {
            let bad = |reason: String| PlanError::Validation {
                stage: stage.id,
                reason,
            };
            let expected = pos as u32 + 1;
            if stage.id.0 != expected {
                return Err(bad(format!(
                    "stage ids must be contiguous from 1; expected id {expected}"
                )));
            }
            let mut seen = BTreeSet::new();
            for &p in &stage.producers {
                if p.0 == 0 || p.0 as usize > self.stages.len() {
                    return Err(bad(format!("producer {p} does not exist")));
                }
                if p >= stage.id {
                    return Err(bad(format!(
                        "producer {p} does not precede its consumer (cycle or unordered input)"
                    )));
                }
                if !seen.insert(p) {
                    return Err(bad(format!("producer {p} listed twice")));
                }
            }
            match stage.operator {
                OperatorKind::Scan if !stage.producers.is_empty() => {
                    return Err(bad("scan stages cannot have producers".into()));
                }
                OperatorKind::GlobalAggregate if stage.producers.len() != 1 => {
                    return Err(bad("a global aggregate needs exactly one producer".into()));
                }
                OperatorKind::Scan => {}
                _ if stage.producers.is_empty() => {
                    return Err(bad(format!(
                        "{} stages need at least one producer",
                        stage.operator
                    )));
                }
                _ => {
                    let produced: u64 = stage
                        .producers
                        .iter()
                        .map(|&p| self.stages[p.0 as usize - 1].output_bytes)
                        .sum();
                    if produced != stage.input_bytes {
                        return Err(bad(format!(
                            "input_bytes {} does not match producers' output_bytes sum {produced}",
                            stage.input_bytes
                        )));
                    }
                }
            }
            if let Some(sel) = stage.selectivity {
                if !(0.0..=1.0).contains(&sel) {
                    return Err(bad(format!("selectivity {sel} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// Reads and validates a plan file.
pub fn load_logical_plan(path: impl AsRef<Path>) -> Result<LogicalPlan, PlanError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.display().to_string(),
        source,
    })?;
    LogicalPlan::from_json(&text)
}

/// Kahn's algorithm with ascending-id tie-breaking.
pub fn topological_stage_order(plan: &LogicalPlan) -> Vec<StageId> {
    let n = plan.len();
    let mut indegree: Vec<usize> = plan.stages.iter().map(|s| s.producers.len()).collect();
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, stage) in plan.stages.iter().enumerate() {
        for p in &stage.producers {
            consumers[p.0 as usize - 1].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(plan.stages[i].id);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    order
}
