//! Property suites shared by the `properties` test target and the
//! acceptance runner. Each suite drives a deterministic proptest runner and
//! returns the first counterexample as an error.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slq_core::cost::{predict_plan, scan_splits, storage_latency, PlanConfigs, StageConfig};
use slq_core::format::{from_document_str, to_document_string, Command, FrontierDocument, PlanningSummary, RunManifest};
use slq_core::pareto::{dominates, knee_index, pareto_filter, CandidatePlan, ParetoFrontier};
use slq_core::space::{
    filter_alignment_h4, gen_stage_space, per_worker_byte_limits, sample_workers_h2, worker_bounds_h1,
    worker_sizes_h3,
};
use slq_core::{
    exhaustive_search, incremental_search_with_stats, simulate_plan, space_size, topological_stage_order, LogicalPlan,
    LogicalStage, OperatorKind, Profile, SearchError, SimulationConfig, StageId, StorageService,
};

pub type Suite = (&'static str, fn() -> Result<(), String>);

pub const SUITES: &[Suite] = &[
    ("dominance axioms", dominance_axioms),
    ("pareto_filter vs pairwise oracle", pareto_filter_vs_oracle),
    ("knee index in bounds", knee_in_bounds),
    ("H1-H3 space soundness and completeness", space_sound_and_complete),
    ("H4 alignment vs brute force", h4_alignment),
    ("H4/H5 on searched frontiers", frontier_plans_respect_h4_h5),
    ("incremental vs exhaustive frontier", incremental_equals_exhaustive),
    ("topological order vs DFS oracle", topo_order_vs_dfs),
    ("critical path vs longest-path oracle", critical_path_vs_longest_path),
    ("cost model monotone in cardinality", monotone_in_cardinality),
    ("serialization round trips", serialization_round_trips),
    ("seed reproducibility", seed_reproducibility),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

macro_rules! check {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(TestCaseError::fail(format!($($fmt)*)));
        }
    };
}

// ---------------------------------------------------------------- generators

const MB: u64 = 1 << 20;

/// A random valid plan of `1..=max_stages` stages with cardinalities in
/// `[min_mb, max_mb]` megabytes per scan.
pub fn random_plan(rng: &mut ChaCha8Rng, max_stages: u32, min_mb: u64, max_mb: u64) -> LogicalPlan {
    let n = rng.random_range(1..=max_stages);
    random_plan_of(rng, n, min_mb, max_mb)
}

/// A random valid plan of exactly `n` stages.
pub fn random_plan_of(rng: &mut ChaCha8Rng, n: u32, min_mb: u64, max_mb: u64) -> LogicalPlan {
    let mut stages: Vec<LogicalStage> = Vec::new();
    for id in 1..=n {
        let scan = id == 1 || rng.random_bool(0.25);
        let stage = if scan {
            let input = rng.random_range(min_mb..=max_mb) * MB;
            LogicalStage {
                id: StageId(id),
                operator: OperatorKind::Scan,
                producers: vec![],
                input_bytes: input,
                output_bytes: input / rng.random_range(1..=4),
                selectivity: None,
            }
        } else {
            let mut producers = BTreeSet::new();
            producers.insert(StageId(rng.random_range(1..id)));
            if id > 2 && rng.random_bool(0.4) {
                producers.insert(StageId(rng.random_range(1..id)));
            }
            let producers: Vec<StageId> = producers.into_iter().collect();
            let operator = if producers.len() > 1 {
                OperatorKind::Join
            } else {
                [
                    OperatorKind::Join,
                    OperatorKind::Aggregate,
                    OperatorKind::GlobalAggregate,
                    OperatorKind::Sort,
                    OperatorKind::Project,
                ][rng.random_range(0..5)]
            };
            let input: u64 = producers.iter().map(|p| stages[p.0 as usize - 1].output_bytes).sum();
            LogicalStage {
                id: StageId(id),
                operator,
                producers,
                input_bytes: input,
                output_bytes: input / rng.random_range(1..=4),
                selectivity: None,
            }
        };
        stages.push(stage);
    }
    LogicalPlan::new("random", stages).expect("generator builds valid plans")
}

/// Reference profile shrunk so per-stage spaces stay small.
pub fn tiny_profile(max_cores: u32, storages: usize, min_mb_per_worker: f64) -> Profile {
    let mut p = Profile::reference();
    p.platform.worker_mem_max_mb = max_cores * p.platform.mem_per_core_mb;
    p.planner.min_mb_per_worker = min_mb_per_worker;
    let keep: Vec<StorageService> = p.storages.keys().take(storages.max(1)).cloned().collect();
    p.storages.retain(|k, _| keep.contains(k));
    p.planner.base_storage = keep[0].clone();
    p
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random configurations drawn from each stage's space.
fn random_configs(rng: &mut ChaCha8Rng, plan: &LogicalPlan, profile: &Profile) -> PlanConfigs {
    let mut configs = PlanConfigs::new();
    for s in &plan.stages {
        let space = gen_stage_space(s.input_bytes, profile);
        let entries: Vec<_> = space.entries.iter().collect();
        let ((w, storage), cores) = entries[rng.random_range(0..entries.len())];
        let c = cores[rng.random_range(0..cores.len())];
        configs.insert(s.id, StageConfig::new(*w, c, profile.mem_per_core_mb(), storage.clone()));
    }
    configs
}

/// Forces every consumer group to share a worker count so H5 holds.
fn harmonise(plan: &LogicalPlan, configs: &mut PlanConfigs) {
    for s in &plan.stages {
        let consumers = plan.consumers(s.id);
        if let Some(first) = consumers.first() {
            let w = configs[first].workers;
            for c in &consumers[1..] {
                let cc = configs.get_mut(c).unwrap();
                cc.workers = w;
            }
        }
    }
    for s in &plan.stages {
        let p = plan.consumers(s.id).first().map_or(1, |c| configs[c].workers);
        configs.get_mut(&s.id).unwrap().partitions = Some(p);
    }
}

// ---------------------------------------------------------------- pareto

fn point() -> impl Strategy<Value = (f64, f64)> {
    // A coarse grid produces plenty of exact ties.
    (0u32..400, 0u32..400).prop_map(|(c, l)| (c as f64 / 4.0, l as f64 / 4.0))
}

pub fn dominance_axioms() -> Result<(), String> {
    run(500, (point(), point(), point()), |(a, b, c)| {
        check!(!dominates(a, a), "irreflexive failed at {a:?}");
        check!(!(dominates(a, b) && dominates(b, a)), "asymmetry failed at {a:?} {b:?}");
        if dominates(a, b) && dominates(b, c) {
            check!(dominates(a, c), "transitivity failed at {a:?} {b:?} {c:?}");
        }
        Ok(())
    })
}

fn candidate(cost: f64, latency: f64, tag: u32) -> CandidatePlan<f64> {
    let mut configs = PlanConfigs::new();
    configs.insert(StageId(1), StageConfig::new(tag + 1, 1, 1770, StorageService::new("S3Standard")).with_partitions(1));
    CandidatePlan {
        stage_configs: configs,
        predicted_latency_s: latency,
        predicted_cost: cost,
        breakdown: None,
    }
}

pub fn pareto_filter_vs_oracle() -> Result<(), String> {
    run(100, prop::collection::vec(point(), 1000), |pts| {
        let plans: Vec<_> = pts.iter().enumerate().map(|(i, &(c, l))| candidate(c, l, i as u32)).collect();
        let kept = pareto_filter(plans);
        let got: Vec<(f64, f64)> = kept.iter().map(|p| p.point()).collect();
        let mut oracle: Vec<(f64, f64)> = pts
            .iter()
            .filter(|&&p| !pts.iter().any(|&q| dominates(q, p)))
            .copied()
            .collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        oracle.dedup();
        check!(got == oracle, "filter kept {} points, oracle {}", got.len(), oracle.len());
        // Duplicates keep the smallest encoding, which here is the first index.
        for p in &kept {
            let first = pts.iter().position(|&q| q == p.point()).unwrap() as u32 + 1;
            check!(p.stage_configs[&StageId(1)].workers == first, "tie not broken toward the smallest encoding");
        }
        Ok(())
    })
}

pub fn knee_in_bounds() -> Result<(), String> {
    run(300, prop::collection::vec(point(), 1..60), |pts| {
        let plans: Vec<_> = pts.iter().enumerate().map(|(i, &(c, l))| candidate(c, l, i as u32)).collect();
        let f = ParetoFrontier::from_plans(plans);
        check!(f.is_well_formed(), "frontier not monotone");
        check!(f.knee_index < f.len(), "knee out of bounds");
        check!(knee_index(&f.coords()) == f.knee_index, "knee not recomputable");
        if f.len() == 2 {
            check!(f.knee_index == 0, "two-point knee must be the cheaper point");
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- heuristics

fn profile_bounds() -> impl Strategy<Value = (u32, u32, f64, f64)> {
    // (mem min, mem max, working-set fraction, min MB per worker)
    (prop_oneof![Just(128u32), Just(1770), Just(2000)], 1u32..7, 0.2f64..1.0, 8.0f64..512.0).prop_map(
        |(lo, cores, frac, min_mb)| (lo, (cores * 1770).max(lo + 1770), frac, min_mb),
    )
}

pub fn space_sound_and_complete() -> Result<(), String> {
    run(300, (profile_bounds(), 0u64..(300u64 << 30)), |((lo, hi, frac, min_mb), card)| {
        let mut p = Profile::reference();
        p.platform.worker_mem_min_mb = lo;
        p.platform.worker_mem_max_mb = hi;
        p.planner.working_set_fraction = frac;
        p.planner.min_mb_per_worker = min_mb;
        if p.validate().is_err() {
            return Ok(());
        }
        let space = gen_stage_space(card, &p);
        // Independent recomputation of the bounds.
        let sizes: Vec<u32> = (1..=64).filter(|c| (lo..=hi).contains(&(c * 1770))).collect();
        check!(worker_sizes_h3(&p) == sizes, "H3 sizes {:?} vs {:?}", worker_sizes_h3(&p), sizes);
        let largest_mb = *sizes.last().unwrap() as f64 * 1770.0;
        let max_b = (frac * largest_mb * MB as f64).floor() as u64;
        let min_b = (min_mb * MB as f64).ceil() as u64;
        check!(per_worker_byte_limits(&p) == (max_b, min_b), "byte limits {:?}", per_worker_byte_limits(&p));
        let w_min = if card == 0 { 1 } else { card.div_ceil(max_b.max(1)).max(1) };
        let w_max = (card / min_b.max(1)).max(w_min);
        check!(worker_bounds_h1(card, &p) == (w_min as u32, w_max as u32), "H1 bounds differ");
        let on_grid = |w: u64| w == w_min || w == w_max || ((w - w_min).is_power_of_two() && w - w_min >= 2);
        for ((w, s), cores) in &space.entries {
            let w = *w as u64;
            check!((w_min..=w_max).contains(&w) && on_grid(w), "worker count {w} off the H1/H2 grid");
            check!(p.storages.contains_key(s), "unknown storage");
            for c in cores {
                check!(sizes.contains(c), "core count {c} violates H3");
                check!(card as u128 <= w as u128 * *c as u128 * 1770 * MB as u128, "core count {c} cannot hold the input");
            }
        }
        // Completeness: every grid count, size and storage that fits is present.
        let grid: Vec<u64> = (w_min..=w_max.min(w_min + 4096)).filter(|&w| on_grid(w)).collect();
        for &w in &grid {
            for &c in &sizes {
                if card as u128 <= w as u128 * c as u128 * 1770 * MB as u128 {
                    for s in p.storages.keys() {
                        let present = space.entries.get(&(w as u32, s.clone())).is_some_and(|v| v.contains(&c));
                        check!(present, "missing ({w}, {c}, {s})");
                    }
                }
            }
        }
        check!(
            space.size() <= sample_workers_h2(w_min as u32, w_max as u32).len() * sizes.len() * p.storages.len(),
            "space larger than grid x sizes x storages"
        );
        Ok(())
    })
}

pub fn h4_alignment() -> Result<(), String> {
    run(2000, (1u32..200, 1u32..8, 1u64..5000), |(w, cores, parts)| {
        let per = parts.div_ceil(w as u64);
        let brute = (1..=per).any(|k| k * cores as u64 == per);
        check!(filter_alignment_h4(w, cores, parts) == brute, "H4 mismatch at w={w} cores={cores} parts={parts}");
        if cores == 1 {
            check!(filter_alignment_h4(w, 1, parts), "single core must always align");
        }
        Ok(())
    })
}

pub fn frontier_plans_respect_h4_h5() -> Result<(), String> {
    run(25, any::<u64>(), |seed| {
        let mut rng = seeded(seed);
        let plan = random_plan(&mut rng, 4, 64, 2048);
        let profile = tiny_profile(3, 2, 128.0);
        let outcome = match incremental_search_with_stats(&plan, &profile) {
            Ok(o) => o,
            Err(SearchError::NoFeasiblePlan) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for c in &outcome.frontier.points {
            slq_core::cost::check_plan_configs(&plan, &c.stage_configs)
                .map_err(|e| TestCaseError::fail(format!("H5 violated: {e}")))?;
            for s in &plan.stages {
                let cfg = &c.stage_configs[&s.id];
                let per_worker: u64 = if s.operator == OperatorKind::Scan {
                    scan_splits(s.input_bytes, &profile).div_ceil(cfg.workers as u64)
                } else {
                    s.producers
                        .iter()
                        .map(|p| {
                            let pc = &c.stage_configs[p];
                            (pc.workers as u64 * pc.partitions.unwrap() as u64).div_ceil(cfg.workers as u64)
                        })
                        .sum()
                };
                check!(per_worker.is_multiple_of(cfg.cores_per_worker as u64), "H4 violated at stage {}", s.id);
                if plan.is_terminal(s.id) {
                    check!(cfg.storage == profile.planner.base_storage, "terminal stage off base storage");
                }
            }
        }
        Ok(())
    })
}

pub fn incremental_equals_exhaustive() -> Result<(), String> {
    run(60, any::<u64>(), |seed| {
        let mut rng = seeded(seed);
        let plan = random_plan(&mut rng, 4, 32, 4096);
        let profile = tiny_profile(2, 1 + (seed % 2) as usize, 128.0);
        if space_size(&plan, &profile).map_err(|e| TestCaseError::fail(e.to_string()))? > 200_000 {
            return Ok(());
        }
        let (inc, exh) = match (incremental_search_with_stats(&plan, &profile), exhaustive_search(&plan, &profile, 200_000)) {
            (Ok(o), Ok(f)) => (o, f),
            (Err(SearchError::NoFeasiblePlan), Err(SearchError::NoFeasiblePlan)) => return Ok(()),
            (a, b) => return Err(TestCaseError::fail(format!("searches disagree: {:?} vs {:?}", a.err(), b.err()))),
        };
        check!(inc.frontier.coords() == exh.coords(), "frontiers differ for plan {:?}", plan);
        Ok(())
    })
}

// ---------------------------------------------------------------- DAG

fn dfs_topo(plan: &LogicalPlan) -> Vec<StageId> {
    // Reverse postorder of a DFS over consumer edges, visiting ids in
    // descending order, then checked for validity and tie-breaking separately.
    fn visit(plan: &LogicalPlan, id: StageId, seen: &mut BTreeSet<StageId>, out: &mut Vec<StageId>) {
        if !seen.insert(id) {
            return;
        }
        let mut cs = plan.consumers(id);
        cs.sort_by(|a, b| b.cmp(a));
        for c in cs {
            visit(plan, c, seen, out);
        }
        out.push(id);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in plan.stages.iter().rev() {
        visit(plan, s.id, &mut seen, &mut out);
    }
    out.reverse();
    out
}

fn is_topological(plan: &LogicalPlan, order: &[StageId]) -> bool {
    let pos = |id: StageId| order.iter().position(|&x| x == id);
    order.len() == plan.len()
        && plan.stages.iter().all(|s| {
            let me = pos(s.id);
            me.is_some() && s.producers.iter().all(|&p| pos(p) < me)
        })
}

pub fn topo_order_vs_dfs() -> Result<(), String> {
    run(300, any::<u64>(), |seed| {
        let mut rng = seeded(seed);
        let plan = random_plan(&mut rng, 10, 1, 64);
        let ours = topological_stage_order(&plan);
        let oracle = dfs_topo(&plan);
        check!(is_topological(&plan, &oracle), "oracle order invalid");
        check!(is_topological(&plan, &ours), "order {ours:?} breaks an edge");
        // Among all valid orders ours is the one that always takes the
        // smallest ready id; with producers below consumers that is 1..=N.
        let ids: Vec<StageId> = (1..=plan.len() as u32).map(StageId).collect();
        check!(ours == ids, "tie-breaking not by ascending id");
        let mut sorted = oracle.clone();
        sorted.sort();
        check!(sorted == ids, "oracle is not a permutation");
        Ok(())
    })
}

fn longest_path(plan: &LogicalPlan, id: StageId, t: &dyn Fn(StageId) -> f64) -> f64 {
    // Latest time `id` can finish: the heaviest producer path plus its own time.
    let best = plan
        .stage(id)
        .producers
        .iter()
        .map(|&p| longest_path(plan, p, t))
        .fold(0.0, f64::max);
    best + t(id)
}

pub fn critical_path_vs_longest_path() -> Result<(), String> {
    run(200, any::<u64>(), |seed| {
        let mut rng = seeded(seed);
        let plan = random_plan(&mut rng, 7, 16, 4096);
        let profile = Profile::reference();
        let mut configs = random_configs(&mut rng, &plan, &profile);
        harmonise(&plan, &mut configs);
        let b = match predict_plan(&plan, &configs, &profile) {
            Ok(b) => b,
            // Harmonising may shrink a stage below its memory needs.
            Err(_) => return Ok(()),
        };
        let t = |id: StageId| b.per_stage[&id].time.t_worker_s;
        let oracle = plan.terminals().into_iter().map(|id| longest_path(&plan, id, &t)).fold(0.0, f64::max);
        check!(b.total_latency_s == oracle, "latency {} vs longest path {}", b.total_latency_s, oracle);
        let sum: f64 = plan.stages.iter().fold(0.0, |acc, s| acc + b.per_stage[&s.id].cost.c_stage);
        check!(b.total_cost == sum, "total cost drifts from the stage sum");
        Ok(())
    })
}

pub fn monotone_in_cardinality() -> Result<(), String> {
    run(300, (1u64..20_000, 1u64..20_000, 1u32..600, 1u32..5), |(a, b, w, cores)| {
        let profile = Profile::reference();
        let (small, large) = (a.min(b) * MB, a.max(b) * MB);
        let at = |bytes: u64| {
            let plan = LogicalPlan::new(
                "m",
                vec![LogicalStage {
                    id: StageId(1),
                    operator: OperatorKind::Scan,
                    producers: vec![],
                    input_bytes: bytes,
                    output_bytes: bytes / 2,
                    selectivity: None,
                }],
            )
            .unwrap();
            let mut configs = PlanConfigs::new();
            configs.insert(StageId(1), StageConfig::new(w, cores, 1770, StorageService::new("S3Standard")).with_partitions(1));
            predict_plan(&plan, &configs, &profile).ok().map(|b| b.per_stage[&StageId(1)].clone())
        };
        if let (Some(s), Some(l)) = (at(small), at(large)) {
            check!(s.time.t_fetch_s <= l.time.t_fetch_s || s.time.lat_storage_s > l.time.lat_storage_s, "t_fetch decreased");
            check!(s.time.t_process_s <= l.time.t_process_s, "t_process decreased");
            check!(s.cost.c_storage <= l.cost.c_storage, "c_storage decreased");
            check!(s.time.t_fetch_process_s == s.time.t_fetch_s.max(s.time.t_process_s), "interleaving is not a max");
        }
        // Throttling jump at the threshold is `a`.
        let st = &profile.storages[&StorageService::new("S3Standard")];
        let jump = storage_latency(st.throttle_threshold_rps * (1.0 + 1e-9), st) - storage_latency(st.throttle_threshold_rps, st);
        check!((jump - st.throttle_a).abs() < 1e-6, "throttle jump {jump}");
        Ok(())
    })
}

// ---------------------------------------------------------------- artifacts

pub fn serialization_round_trips() -> Result<(), String> {
    run(40, any::<u64>(), |seed| {
        let mut rng = seeded(seed);
        let plan = random_plan(&mut rng, 4, 32, 1024);
        let back = LogicalPlan::from_json(&plan.to_json()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        check!(back == plan, "plan round trip changed content");

        let profile = tiny_profile(2, 2, 128.0);
        let again = Profile::from_json(&profile.to_json()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        check!(Profile { defaulted: profile.defaulted.clone(), ..again } == profile, "profile round trip changed content");

        let o = incremental_search_with_stats(&plan, &profile).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let doc = FrontierDocument {
            format_version: slq_core::format::FORMAT_VERSION,
            manifest: RunManifest::new(Command::Plan),
            plan: plan.clone(),
            planning: PlanningSummary {
                stage_order: o.stage_order.clone(),
                pruned_sizes: o.pruned_sizes.clone(),
                space_size: o.space_size,
                evaluated: o.evaluated,
            },
            frontier: o.frontier.clone(),
        };
        let text = to_document_string(&doc);
        let parsed: FrontierDocument<f64> = from_document_str(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        check!(parsed == doc, "frontier document round trip changed content");
        check!(to_document_string(&parsed) == text, "frontier document bytes changed");

        let knee = &o.frontier.points[o.frontier.knee_index];
        let sim = simulate_plan(&plan, knee, &profile, &SimulationConfig::new(seed, 5))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let text = serde_json::to_string(&sim).unwrap();
        let back: slq_core::SimResult = serde_json::from_str(&text).unwrap();
        check!(back == sim, "simulation result round trip changed content");
        Ok(())
    })
}

pub fn seed_reproducibility() -> Result<(), String> {
    run(20, (any::<u64>(), 1u32..40), |(seed, runs)| {
        let mut rng = seeded(seed);
        let plan = random_plan(&mut rng, 3, 256, 8192);
        let profile = Profile::reference();
        let f = slq_core::incremental_pareto_search(&plan, &profile).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let c = &f.points[f.knee_index];
        let a = simulate_plan(&plan, c, &profile, &SimulationConfig::new(seed, runs)).unwrap();
        let b = simulate_plan(&plan, c, &profile, &SimulationConfig::new(seed, runs)).unwrap();
        check!(serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap(), "same seed, different bytes");
        let other = simulate_plan(&plan, c, &profile, &SimulationConfig::new(seed.wrapping_add(1), runs)).unwrap();
        check!(other.per_run.len() == a.per_run.len() && a.per_run.len() == runs as usize, "run count changed");
        check!(a.stats_consistent() && other.stats_consistent(), "stats not recomputable from runs");
        Ok(())
    })
}
