use std::path::Path;
use std::time::{Duration, Instant};

use slq_core::format::{
    read_document, write_document, Command, FrontierDocument, PlanningSummary, RunManifest, SelectedPlanDocument,
    SimulationReport, FORMAT_VERSION,
};
use slq_core::{
    compare_prediction, incremental_search_with_stats, load_logical_plan, load_profile, select_plan, FrontierDoc,
    Preference, Profile, SelectedDoc, SimulationConfig, SimulationDoc,
};

use crate::CliError;

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// What `plan` reports besides the frontier file.
#[derive(Debug)]
pub struct PlanReport {
    pub points: usize,
    pub knee_index: usize,
    pub pruned_sizes: Vec<usize>,
    pub wall_time: Duration,
}

pub fn plan(plan_path: &Path, profile_path: &Path, out: &Path) -> Result<PlanReport, CliError> {
    let plan = load_logical_plan(plan_path)?;
    let profile: Profile = load_profile(profile_path)?;
    for field in &profile.defaulted {
        log::info!("profile field {field} not set, using the reference value");
    }
    let start = Instant::now();
    let outcome = incremental_search_with_stats(&plan, &profile)?;
    let wall_time = start.elapsed();
    log::info!("planned {} stages in {wall_time:?}", plan.len());

    let mut manifest = RunManifest::new(Command::Plan).option("out", display(out));
    manifest.plan_path = Some(display(plan_path));
    manifest.profile_path = Some(display(profile_path));
    let doc = FrontierDocument {
        format_version: FORMAT_VERSION,
        manifest,
        plan,
        planning: PlanningSummary {
            stage_order: outcome.stage_order,
            pruned_sizes: outcome.pruned_sizes.clone(),
            space_size: outcome.space_size,
            evaluated: outcome.evaluated,
        },
        frontier: outcome.frontier,
    };
    write_document(out, &doc)?;
    Ok(PlanReport {
        points: doc.frontier.len(),
        knee_index: doc.frontier.knee_index,
        pruned_sizes: outcome.pruned_sizes,
        wall_time,
    })
}

pub fn read_frontier(path: &Path) -> Result<FrontierDoc, CliError> {
    let doc: FrontierDoc = read_document(path)?;
    doc.validate()?;
    Ok(doc)
}

/// Builds the selected-plan document for point `index` of `doc`.
pub fn selected_document(
    doc: &FrontierDoc,
    frontier_path: Option<&Path>,
    preference: &str,
    index: usize,
) -> SelectedDoc {
    let mut manifest = RunManifest::new(Command::Select).option("preference", preference);
    manifest.plan_path = frontier_path.map(display);
    SelectedPlanDocument {
        format_version: FORMAT_VERSION,
        manifest,
        preference: preference.to_string(),
        index,
        plan: doc.plan.clone(),
        selected: doc.frontier.points[index].clone(),
    }
}

pub fn select(frontier_path: &Path, preference: Preference, out: &Path) -> Result<SelectedDoc, CliError> {
    let doc = read_frontier(frontier_path)?;
    let (index, _) = select_plan(&doc.frontier, preference)?;
    let mut selected = selected_document(&doc, Some(frontier_path), &preference.to_string(), index);
    selected.manifest.options.insert("out".into(), display(out));
    write_document(out, &selected)?;
    Ok(selected)
}

/// Simulates the selected plan and compares it against its prediction.
pub fn simulation_report(
    selected: &SelectedDoc,
    profile: &Profile,
    seed: u64,
    runs: u32,
) -> Result<SimulationDoc, CliError> {
    let config = SimulationConfig::new(seed, runs);
    config.validate().map_err(CliError::Usage)?;
    let (validation, result) = compare_prediction(&selected.plan, &selected.selected, profile, &config)?;
    Ok(SimulationReport {
        format_version: FORMAT_VERSION,
        manifest: RunManifest::new(Command::Simulate).option("seed", seed).option("runs", runs),
        config,
        validation,
        result,
    })
}

pub fn simulate(plan_path: &Path, profile_path: &Path, seed: u64, runs: u32, out: &Path) -> Result<SimulationDoc, CliError> {
    if runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let selected: SelectedDoc = read_document(plan_path)?;
    let profile: Profile = load_profile(profile_path)?;
    let mut report = simulation_report(&selected, &profile, seed, runs)?;
    report.manifest.plan_path = Some(display(plan_path));
    report.manifest.profile_path = Some(display(profile_path));
    report.manifest.options.insert("out".into(), display(out));
    write_document(out, &report)?;
    Ok(report)
}
