//! Cost/latency planner for analytical queries on serverless functions.
//!
//! Given a logical stage DAG and a calibration profile, the planner prices
//! every stage configuration (worker count, worker size, intermediate
//! storage, partitioning) with an analytic model of invocation, transfer,
//! compute, cold starts and storage throttling, and searches for the
//! cost/latency Pareto frontier. A seeded simulator replays chosen plans
//! under noise to check the predictions.
//!
//! The model is generic over the float type; the aliases below fix it to
//! `f64`.

pub mod cost;
pub mod error;
pub mod format;
pub mod pareto;
pub mod plan;
pub mod profile;
pub mod scalar;
pub mod search;
pub mod sim;
pub mod space;

pub use cost::{predict_plan, PlanConfigs, StageConfig};
pub use error::{BudgetInfeasibleError, FormatError, ModelError, PlanError, ProfileError, SearchError};
pub use pareto::{dominates, knee_index, pareto_filter, select_plan, Preference};
pub use plan::{load_logical_plan, topological_stage_order, LogicalPlan, LogicalStage, OperatorKind, StageId};
pub use profile::{load_profile, ModelVariant, StorageService};
pub use scalar::Scalar;
pub use search::{exhaustive_search, incremental_pareto_search, incremental_search_with_stats, space_size};
pub use sim::{compare_prediction, simulate_plan, SimulationConfig};
pub use space::gen_stage_space;

pub type Profile = profile::CalibrationProfile<f64>;
pub type Candidate = pareto::CandidatePlan<f64>;
pub type Frontier = pareto::ParetoFrontier<f64>;
pub type Prediction = cost::PredictionBreakdown<f64>;
pub type SimResult = sim::SimulationResult<f64>;
pub type Report = sim::ValidationReport<f64>;
pub type Outcome = search::SearchOutcome<f64>;
pub type FrontierDoc = format::FrontierDocument<f64>;
pub type SelectedDoc = format::SelectedPlanDocument<f64>;
pub type SimulationDoc = format::SimulationReport<f64>;

/// Bundled example plans.
pub mod examples {
    /// Scan, aggregate, global aggregate.
    pub const THREE_STAGE: &str = include_str!("../data/three_stage.json");
    /// Ten stages, five of them joins.
    pub const TEN_STAGE_CHAIN: &str = include_str!("../data/ten_stage_chain.json");
    /// A large fact-table scan that forces hundreds of workers.
    pub const ADVERSARIAL: &str = include_str!("../data/adversarial.json");
}
