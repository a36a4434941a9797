//! Seeded stochastic replay of a configured plan.
//!
//! Each run draws, per worker, a cold start and a multiplicative lognormal
//! slowdown on every transfer and compute term; storage request rates get a
//! per-stage lognormal factor before the throttling curve applies. The
//! formulas are the cost model's own, so with every stochastic parameter at
//! zero a run reproduces the prediction bit for bit.
//!
//! Run `i` uses ChaCha8 seeded from `seed` on stream `i`, so runs are
//! independent of scheduling and can execute in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{check_plan_configs, worker_charge, StageIo, Upstream};
use crate::error::ModelError;
use crate::pareto::CandidatePlan;
use crate::plan::{topological_stage_order, LogicalPlan};
use crate::profile::CalibrationProfile;
use crate::scalar::Scalar;

pub const DEFAULT_JITTER_CV: f64 = 0.05;
pub const DEFAULT_THROTTLE_NOISE_CV: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub runs: u32,
    #[serde(default = "default_jitter")]
    pub jitter_cv: f64,
    #[serde(default = "default_throttle_noise")]
    pub throttle_noise_cv: f64,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER_CV
}

fn default_throttle_noise() -> f64 {
    DEFAULT_THROTTLE_NOISE_CV
}

impl SimulationConfig {
    pub fn new(seed: u64, runs: u32) -> Self {
        SimulationConfig {
            seed,
            runs,
            jitter_cv: DEFAULT_JITTER_CV,
            throttle_noise_cv: DEFAULT_THROTTLE_NOISE_CV,
        }
    }

    /// No jitter and no throttle noise. Cold starts still follow the profile.
    pub fn noiseless(seed: u64, runs: u32) -> Self {
        SimulationConfig {
            jitter_cv: 0.0,
            throttle_noise_cv: 0.0,
            ..Self::new(seed, runs)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.runs == 0 {
            return Err("runs must be at least 1".into());
        }
        for (name, v) in [("jitter_cv", self.jitter_cv), ("throttle_noise_cv", self.throttle_noise_cv)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord<T> {
    pub run: u32,
    pub latency_s: T,
    pub cost: T,
    pub cold_start_count: u64,
    /// Requests sent to a storage service while it was over its throttling threshold.
    pub throttled_request_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats<T> {
    pub mean: T,
    pub p5: T,
    pub p50: T,
    pub p95: T,
}

impl<T: Scalar> Stats<T> {
    /// Running mean and linearly interpolated percentiles.
    pub fn from_values(values: &[T]) -> Self {
        assert!(!values.is_empty(), "stats of an empty sample");
        let mut mean = T::zero();
        for (k, &v) in values.iter().enumerate() {
            mean = mean + (v - mean) / T::count(k as u64 + 1);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        Stats {
            mean,
            p5: percentile(&sorted, 0.05),
            p50: percentile(&sorted, 0.50),
            p95: percentile(&sorted, 0.95),
        }
    }

    pub fn contains(&self, v: T) -> bool {
        self.p5 <= v && v <= self.p95
    }
}

/// Percentile `q` of ascending `sorted`, interpolating between ranks.
pub fn percentile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = T::lit(rank - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult<T> {
    pub seed_echo: u64,
    pub jitter_cv: f64,
    pub throttle_noise_cv: f64,
    pub per_run: Vec<RunRecord<T>>,
    pub latency_stats: Stats<T>,
    pub cost_stats: Stats<T>,
}

impl<T: Scalar> SimulationResult<T> {
    /// Recomputes the stats from `per_run`.
    pub fn stats_consistent(&self) -> bool {
        let lat: Vec<T> = self.per_run.iter().map(|r| r.latency_s).collect();
        let cost: Vec<T> = self.per_run.iter().map(|r| r.cost).collect();
        !lat.is_empty() && Stats::from_values(&lat) == self.latency_stats && Stats::from_values(&cost) == self.cost_stats
    }
}

fn lognormal(cv: f64) -> Option<LogNormal<f64>> {
    if cv > 0.0 {
        let var = (1.0 + cv * cv).ln();
        Some(LogNormal::new(-var / 2.0, var.sqrt()).expect("valid lognormal parameters"))
    } else {
        None
    }
}

struct Prepared<'p, T> {
    stages: Vec<(crate::plan::StageId, StageIo<'p, T>, Vec<usize>, bool)>,
}

fn prepare<'p, T: Scalar>(
    plan: &LogicalPlan,
    candidate: &CandidatePlan<T>,
    profile: &'p CalibrationProfile<T>,
) -> Result<Prepared<'p, T>, ModelError> {
    let configs = &candidate.stage_configs;
    check_plan_configs(plan, configs)?;
    let order = topological_stage_order(plan);
    let mut stages = Vec::with_capacity(order.len());
    for id in &order {
        let stage = plan.stage(*id);
        let upstream: Vec<Upstream<'_>> = stage
            .producers
            .iter()
            .map(|p| {
                let pc = &configs[p];
                Upstream {
                    stage: plan.stage(*p),
                    workers: pc.workers,
                    partitions: pc.partitions.unwrap_or(1),
                    storage: &pc.storage,
                }
            })
            .collect();
        let io = StageIo::resolve(stage, &configs[id], &upstream, profile)?;
        let producers = stage
            .producers
            .iter()
            .map(|p| order.iter().position(|x| x == p).expect("producer in order"))
            .collect();
        stages.push((*id, io, producers, plan.is_terminal(*id)));
    }
    Ok(Prepared { stages })
}

fn run_once<T: Scalar>(
    prepared: &Prepared<'_, T>,
    profile: &CalibrationProfile<T>,
    sim: &SimulationConfig,
    run: u32,
) -> RunRecord<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(run as u64);
    let jitter = lognormal(sim.jitter_cv);
    let throttle_noise = lognormal(sim.throttle_noise_cv);
    let platform = &profile.platform;
    let delay = platform.cold_start_delay_s();

    let mut finish: Vec<T> = Vec::with_capacity(prepared.stages.len());
    let mut cost = T::zero();
    let mut latency = T::zero();
    let mut cold_start_count = 0u64;
    let mut throttled_request_count = 0u64;
    for (_, io, producers, terminal) in &prepared.stages {
        let p = platform.cold_start_prob(io.workers).as_f64();
        let workers: Vec<(T, T)> = (0..io.workers)
            .map(|_| {
                let cold = p > 0.0 && rng.random::<f64>() < p;
                let slow = jitter.map_or(T::one(), |d| T::lit(d.sample(&mut rng)));
                (slow, if cold { delay } else { T::zero() })
            })
            .collect();
        cold_start_count += workers.iter().filter(|w| w.1 > T::zero()).count() as u64;
        let noise = throttle_noise.map_or(T::one(), |d| T::lit(d.sample(&mut rng)));

        let (r0, w0) = io.latencies(&[]);
        let first = workers
            .iter()
            .map(|&(slow, cold)| io.worker_times(platform, r0, w0, slow, cold, cold).t_worker_s)
            .fold(T::zero(), T::max);
        let rates: Vec<_> = io.request_rates(first).into_iter().map(|(s, r)| (s, r * noise)).collect();
        for (service, rate) in &rates {
            let storage = &profile.storages[*service];
            if *rate > storage.throttle_threshold_rps {
                let reads: u64 = io.reads.iter().filter(|r| r.service == *service).map(|r| r.requests).sum();
                let writes = if io.write_service == *service { io.n_write_requests } else { 0 };
                throttled_request_count += reads + writes;
            }
        }
        let (r1, w1) = io.latencies(&rates);
        let mut stage_time = T::zero();
        let mut billed: Vec<T> = Vec::with_capacity(workers.len());
        for &(slow, cold) in &workers {
            let t = io.worker_times(platform, r1, w1, slow, cold, cold);
            stage_time = stage_time.max(t.t_worker_s);
            billed.push(t.billed_s);
        }

        // Identical durations are charged together, matching the model's
        // `workers * charge` when nothing varies.
        billed.sort_by(|a, b| a.partial_cmp(b).expect("finite durations"));
        let mut c_workers = T::zero();
        let mut i = 0;
        while i < billed.len() {
            let j = billed[i..].iter().position(|&b| b != billed[i]).map_or(billed.len(), |k| i + k);
            c_workers = c_workers + T::count((j - i) as u64) * worker_charge(billed[i], io.mem_mb, &profile.pricing);
            i = j;
        }
        cost = cost + (c_workers + io.storage_cost());

        let start = producers.iter().map(|&p| finish[p]).fold(T::zero(), T::max);
        let done = start + stage_time;
        if *terminal {
            latency = latency.max(done);
        }
        finish.push(done);
    }
    RunRecord {
        run,
        latency_s: latency,
        cost,
        cold_start_count,
        throttled_request_count,
    }
}

/// Replays `candidate` `sim.runs` times under `profile`.
pub fn simulate_plan<T: Scalar>(
    plan: &LogicalPlan,
    candidate: &CandidatePlan<T>,
    profile: &CalibrationProfile<T>,
    sim: &SimulationConfig,
) -> Result<SimulationResult<T>, ModelError> {
    sim.validate().map_err(|reason| ModelError::Config {
        stage: plan.stages[0].id,
        reason,
    })?;
    let prepared = prepare(plan, candidate, profile)?;
    let per_run: Vec<RunRecord<T>> = (0..sim.runs)
        .into_par_iter()
        .map(|r| run_once(&prepared, profile, sim, r))
        .collect();
    let lat: Vec<T> = per_run.iter().map(|r| r.latency_s).collect();
    let cost: Vec<T> = per_run.iter().map(|r| r.cost).collect();
    Ok(SimulationResult {
        seed_echo: sim.seed,
        jitter_cv: sim.jitter_cv,
        throttle_noise_cv: sim.throttle_noise_cv,
        latency_stats: Stats::from_values(&lat),
        cost_stats: Stats::from_values(&cost),
        per_run,
    })
}

/// How a plan's predictions compare with its simulated behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport<T> {
    pub predicted_latency_s: T,
    pub predicted_cost: T,
    pub simulated_latency: Stats<T>,
    pub simulated_cost: Stats<T>,
    /// `|predicted - simulated mean| / simulated mean`.
    pub latency_rel_error: T,
    pub cost_rel_error: T,
    pub latency_within_p5_p95: bool,
    pub cost_within_p5_p95: bool,
}

fn rel_error<T: Scalar>(predicted: T, actual: T) -> T {
    if predicted == actual {
        T::zero()
    } else {
        (predicted - actual).abs() / actual.abs()
    }
}

/// Simulates `candidate` under `profile` and scores the predictions it
/// carries, which may come from a different model.
pub fn compare_prediction<T: Scalar>(
    plan: &LogicalPlan,
    candidate: &CandidatePlan<T>,
    profile: &CalibrationProfile<T>,
    sim: &SimulationConfig,
) -> Result<(ValidationReport<T>, SimulationResult<T>), ModelError> {
    let result = simulate_plan(plan, candidate, profile, sim)?;
    let lat = result.latency_stats;
    let cost = result.cost_stats;
    let report = ValidationReport {
        predicted_latency_s: candidate.predicted_latency_s,
        predicted_cost: candidate.predicted_cost,
        simulated_latency: lat,
        simulated_cost: cost,
        latency_rel_error: rel_error(candidate.predicted_latency_s, lat.mean),
        cost_rel_error: rel_error(candidate.predicted_cost, cost.mean),
        latency_within_p5_p95: lat.contains(candidate.predicted_latency_s),
        cost_within_p5_p95: cost.contains(candidate.predicted_cost),
    };
    Ok((report, result))
}
