//! Analytic time and money model for serverless query stages.
//!
//! Time is modelled per worker: invocation, interleaved fetch/process,
//! then compress/store of the output. A stage runs a fleet of identical
//! workers; a consumer stage starts only once all of its producers have
//! finished. Money is worker GB-seconds plus invocations plus storage
//! requests and written bytes.
//!
//! Data movement conventions:
//! * A scan reads its `input_bytes` from the base storage, split into
//!   `ceil(input / input_split_mb)` pieces.
//! * Every worker writes its output as one combined object holding one
//!   partition per consumer worker, compressed by the operator's
//!   `compression_ratio`.
//! * A consumer worker reads its partition from every producer worker, so it
//!   issues `ceil(producer_workers * producer_partitions / workers)` requests
//!   per producer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::plan::{topological_stage_order, LogicalPlan, LogicalStage, OperatorKind, StageId};
use crate::profile::{
    CalibrationProfile, OperatorProfile, PlatformProfile, PricingProfile, StorageService,
    StorageServiceProfile,
};
use crate::scalar::{bytes_to_mb, Scalar, BYTES_PER_MB, MB_PER_GB};

/// Resources and layout chosen for one stage.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub workers: u32,
    pub cores_per_worker: u32,
    pub worker_mem_mb: u32,
    /// Output partitions; `None` while the consumer stage is undecided.
    pub partitions: Option<u32>,
    pub storage: StorageService,
}

impl StageConfig {
    pub fn new(workers: u32, cores: u32, mem_per_core_mb: u32, storage: StorageService) -> Self {
        StageConfig {
            workers,
            cores_per_worker: cores,
            worker_mem_mb: cores * mem_per_core_mb,
            partitions: None,
            storage,
        }
    }

    pub fn with_partitions(mut self, partitions: u32) -> Self {
        self.partitions = Some(partitions);
        self
    }
}

/// Per-stage configuration of a whole plan.
pub type PlanConfigs = BTreeMap<StageId, StageConfig>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeBreakdown<T> {
    pub t_inv_s: T,
    pub t_fetch_s: T,
    pub t_process_s: T,
    pub t_decompress_s: T,
    pub t_process_op_s: T,
    pub t_fetch_process_s: T,
    pub t_compress_s: T,
    pub t_store_s: T,
    pub t_output_s: T,
    pub t_worker_s: T,
    /// Expected straggler delay: the stage waits if any one worker cold-starts.
    pub cold_start_penalty_s: T,
    /// Storage latency seen by reads.
    pub lat_storage_s: T,
    /// Expected billed duration of one worker; only that worker's own cold
    /// start is billed to it.
    pub billed_s: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown<T> {
    pub c_workers: T,
    pub c_storage: T,
    pub c_stage: T,
    pub n_read_requests: u64,
    pub n_write_requests: u64,
    pub d_output_gb: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePrediction<T> {
    pub config: StageConfig,
    pub time: TimeBreakdown<T>,
    pub cost: CostBreakdown<T>,
    /// Time from query start until this stage's last worker finishes.
    pub finish_s: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBreakdown<T> {
    pub per_stage: BTreeMap<StageId, StagePrediction<T>>,
    pub total_latency_s: T,
    pub total_cost: T,
}

pub fn client_inv_delay<T: Scalar>(workers: u32, platform: &PlatformProfile<T>) -> T {
    T::count(workers as u64) / platform.client_inv_rate
}

pub fn provider_inv_delay<T: Scalar>(workers: u32, platform: &PlatformProfile<T>) -> T {
    let over = workers.saturating_sub(platform.provider_concurrency_limit);
    let ms = platform.provider_base_delay_ms
        + T::count(over as u64) * platform.provider_over_limit_delay_ms_per_worker;
    ms / T::lit(1000.0)
}

/// Time to move `d_mb` between a worker and storage: fast for the initial
/// window, slow after it.
pub fn transfer_time<T: Scalar>(d_mb: T, platform: &PlatformProfile<T>) -> T {
    let window = platform.fetch_fast_window_mb;
    if d_mb > window {
        window / platform.fetch_fast_bw_mbps + (d_mb - window) / platform.fetch_slow_bw_mbps
    } else {
        d_mb / platform.fetch_fast_bw_mbps
    }
}

/// Time to first byte under `total_req_per_sec` aggregate load. Strictly
/// above the threshold an exponential throttling term kicks in, so the
/// function jumps by `throttle_a` there.
pub fn storage_latency<T: Scalar>(total_req_per_sec: T, storage: &StorageServiceProfile<T>) -> T {
    let thr = storage.throttle_threshold_rps;
    let throttled = if total_req_per_sec > thr {
        storage.throttle_a * (storage.throttle_b * (total_req_per_sec / thr - T::one())).exp()
    } else {
        T::zero()
    };
    storage.base_latency_s + throttled
}

pub fn fetch_time<T: Scalar>(
    d_input_mb: T,
    storage: &StorageServiceProfile<T>,
    platform: &PlatformProfile<T>,
    request_rate: T,
) -> T {
    storage_latency(request_rate, storage) + transfer_time(d_input_mb, platform)
}

/// `(t_decompress, t_process_op)` for `d_input_mb` on `cores` cores.
pub fn process_time<T: Scalar>(d_input_mb: T, op: &OperatorProfile<T>, cores: u32) -> (T, T) {
    let c = T::count(cores as u64);
    (
        d_input_mb / (op.decompress_mb_per_core_s * c),
        d_input_mb / (op.throughput_mb_per_core_s * c),
    )
}

/// `(t_compress, t_store)` for `d_output_mb` logical output bytes; the store
/// moves the compressed size.
pub fn output_time<T: Scalar>(
    d_output_mb: T,
    op: &OperatorProfile<T>,
    storage: &StorageServiceProfile<T>,
    platform: &PlatformProfile<T>,
    cores: u32,
    request_rate: T,
) -> (T, T) {
    let c = T::count(cores as u64);
    (
        d_output_mb / (op.compress_mb_per_core_s * c),
        fetch_time(d_output_mb * op.compression_ratio, storage, platform, request_rate),
    )
}

/// Expected delay added to a stage by cold starts: the probability that at
/// least one of `workers` independent workers cold-starts, times the delay.
pub fn cold_start_penalty<T: Scalar>(workers: u32, platform: &PlatformProfile<T>) -> T {
    let p = platform.cold_start_prob(workers);
    let none_cold = (T::one() - p).powi(workers.min(i32::MAX as u32) as i32);
    (T::one() - none_cold) * platform.cold_start_delay_s()
}

/// Price of one worker running for `billed_s` seconds with `mem_mb` memory.
pub fn worker_charge<T: Scalar>(billed_s: T, mem_mb: u32, pricing: &PricingProfile<T>) -> T {
    let mem_gb = T::count(mem_mb as u64) / T::count(MB_PER_GB);
    pricing.worker_invocation_price + pricing.worker_gb_second_price * billed_s * mem_gb
}

/// What a producer hands to a consumer stage.
#[derive(Debug, Clone, Copy)]
pub struct Upstream<'a> {
    pub stage: &'a LogicalStage,
    pub workers: u32,
    pub partitions: u32,
    pub storage: &'a StorageService,
}

#[derive(Debug, Clone)]
pub struct ReadSource<'p, T> {
    pub service: &'p StorageService,
    pub storage: &'p StorageServiceProfile<T>,
    pub requests: u64,
}

/// Everything about a configured stage that does not depend on timing:
/// data shares, request counts, and the profile entries involved.
#[derive(Debug, Clone)]
pub struct StageIo<'p, T> {
    pub stage: StageId,
    pub workers: u32,
    pub cores: u32,
    pub mem_mb: u32,
    pub operator: &'p OperatorProfile<T>,
    pub reads: Vec<ReadSource<'p, T>>,
    pub write_service: &'p StorageService,
    pub write: &'p StorageServiceProfile<T>,
    /// Stored megabytes one worker fetches.
    pub input_mb_per_worker: T,
    /// Logical megabytes one worker produces.
    pub output_mb_per_worker: T,
    pub partitions_per_worker: u64,
    pub n_read_requests: u64,
    pub n_write_requests: u64,
    pub d_output_gb: T,
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Number of base-table pieces a scan of `input_bytes` reads.
pub fn scan_splits<T: Scalar>(input_bytes: u64, profile: &CalibrationProfile<T>) -> u64 {
    let mb: T = bytes_to_mb(input_bytes);
    let splits = (mb / profile.planner.input_split_mb).ceil();
    splits.to_u64().unwrap_or(u64::MAX).max(1)
}

/// Partitions each worker consumes, per [`Upstream`] conventions.
pub fn partitions_per_worker<T: Scalar>(
    stage: &LogicalStage,
    workers: u32,
    upstream: &[Upstream<'_>],
    profile: &CalibrationProfile<T>,
) -> u64 {
    if stage.operator == OperatorKind::Scan {
        ceil_div(scan_splits(stage.input_bytes, profile), workers as u64)
    } else {
        upstream
            .iter()
            .map(|u| ceil_div(u.workers as u64 * u.partitions as u64, workers as u64))
            .sum()
    }
}

impl<'p, T: Scalar> StageIo<'p, T> {
    pub fn resolve(
        stage: &LogicalStage,
        config: &StageConfig,
        upstream: &[Upstream<'_>],
        profile: &'p CalibrationProfile<T>,
    ) -> Result<Self, ModelError> {
        let config_err = |reason: String| ModelError::Config {
            stage: stage.id,
            reason,
        };
        if config.workers == 0 || config.cores_per_worker == 0 {
            return Err(config_err("workers and cores must be at least 1".into()));
        }
        let operator = profile
            .operator(stage.operator)
            .ok_or_else(|| ModelError::OperatorUnprofiled {
                stage: stage.id,
                operator: stage.operator.to_string(),
            })?;
        let lookup = |service: &StorageService| {
            profile
                .storages
                .get_key_value(service)
                .ok_or_else(|| ModelError::UnknownStorage {
                    stage: stage.id,
                    service: service.to_string(),
                })
        };
        let (write_service, write) = lookup(&config.storage)?;

        let w = config.workers as u64;
        let mem_bytes = config.worker_mem_mb as u128 * BYTES_PER_MB as u128;
        if stage.input_bytes as u128 > w as u128 * mem_bytes {
            return Err(config_err(format!(
                "per-worker input of {} bytes exceeds worker memory of {} MB",
                stage.input_bytes.div_ceil(w),
                config.worker_mem_mb
            )));
        }

        let mut reads: Vec<ReadSource<'p, T>> = Vec::new();
        let mut add_read = |service: &StorageService, requests: u64| -> Result<(), ModelError> {
            let (service, storage) = lookup(service)?;
            match reads.iter_mut().find(|r| r.service == service) {
                Some(r) => r.requests += requests,
                None => reads.push(ReadSource {
                    service,
                    storage,
                    requests,
                }),
            }
            Ok(())
        };

        let mut fetched_mb = T::zero();
        let mut per_worker = 0u64;
        if stage.operator == OperatorKind::Scan {
            per_worker = ceil_div(scan_splits(stage.input_bytes, profile), w);
            add_read(&profile.planner.base_storage, per_worker * w)?;
            fetched_mb = bytes_to_mb(stage.input_bytes);
        } else {
            for u in upstream {
                let producer_op = profile.operator(u.stage.operator).ok_or_else(|| {
                    ModelError::OperatorUnprofiled {
                        stage: u.stage.id,
                        operator: u.stage.operator.to_string(),
                    }
                })?;
                let pieces = ceil_div(u.workers as u64 * u.partitions as u64, w);
                per_worker += pieces;
                add_read(u.storage, pieces * w)?;
                fetched_mb = fetched_mb + bytes_to_mb::<T>(u.stage.output_bytes) * producer_op.compression_ratio;
            }
        }

        let workers_t = T::count(w);
        let output_mb: T = bytes_to_mb(stage.output_bytes);
        let stored_output_mb = output_mb * operator.compression_ratio;
        Ok(StageIo {
            stage: stage.id,
            workers: config.workers,
            cores: config.cores_per_worker,
            mem_mb: config.worker_mem_mb,
            operator,
            reads,
            write_service,
            write,
            input_mb_per_worker: fetched_mb / workers_t,
            output_mb_per_worker: output_mb / workers_t,
            partitions_per_worker: per_worker,
            n_read_requests: per_worker * w,
            n_write_requests: w,
            d_output_gb: stored_output_mb / T::count(MB_PER_GB),
        })
    }

    /// Aggregate request rate per storage service if the stage lasts
    /// `duration_s`.
    pub fn request_rates(&self, duration_s: T) -> Vec<(&'p StorageService, T)> {
        let mut rates: Vec<(&StorageService, u64)> =
            self.reads.iter().map(|r| (r.service, r.requests)).collect();
        match rates.iter_mut().find(|(s, _)| *s == self.write_service) {
            Some((_, n)) => *n += self.n_write_requests,
            None => rates.push((self.write_service, self.n_write_requests)),
        }
        rates
            .into_iter()
            .map(|(s, n)| {
                let rps = if duration_s > T::zero() {
                    T::count(n) / duration_s
                } else {
                    T::zero()
                };
                (s, rps)
            })
            .collect()
    }

    /// `(read latency, write latency)` under the given per-service rates.
    /// Services absent from `rates` are treated as idle.
    pub fn latencies(&self, rates: &[(&StorageService, T)]) -> (T, T) {
        let rate_of = |s: &StorageService| {
            rates
                .iter()
                .find(|(id, _)| *id == s)
                .map(|&(_, r)| r)
                .unwrap_or_else(T::zero)
        };
        let read = self
            .reads
            .iter()
            .map(|r| storage_latency(rate_of(r.service), r.storage))
            .fold(T::zero(), T::max);
        let write = storage_latency(rate_of(self.write_service), self.write);
        (read, write)
    }

    /// One worker's timeline. `slowdown` scales every transfer and compute
    /// term; `cold_delay_s` is added to the stage-visible time and
    /// `billed_cold_s` to the billed time.
    pub fn worker_times(
        &self,
        platform: &PlatformProfile<T>,
        lat_read: T,
        lat_write: T,
        slowdown: T,
        cold_delay_s: T,
        billed_cold_s: T,
    ) -> TimeBreakdown<T> {
        let t_inv_s = client_inv_delay(self.workers, platform) + provider_inv_delay(self.workers, platform);
        let t_fetch_s = lat_read + transfer_time(self.input_mb_per_worker, platform) * slowdown;
        let (dec, op) = process_time(self.input_mb_per_worker, self.operator, self.cores);
        let t_decompress_s = dec * slowdown;
        let t_process_op_s = op * slowdown;
        let t_process_s = t_decompress_s + t_process_op_s;
        let t_fetch_process_s = t_fetch_s.max(t_process_s);
        let c = T::count(self.cores as u64);
        let t_compress_s = self.output_mb_per_worker / (self.operator.compress_mb_per_core_s * c) * slowdown;
        let stored_mb = self.output_mb_per_worker * self.operator.compression_ratio;
        let t_store_s = lat_write + transfer_time(stored_mb, platform) * slowdown;
        let t_output_s = t_compress_s + t_store_s;
        let active = t_inv_s + t_fetch_process_s + t_output_s;
        TimeBreakdown {
            t_inv_s,
            t_fetch_s,
            t_process_s,
            t_decompress_s,
            t_process_op_s,
            t_fetch_process_s,
            t_compress_s,
            t_store_s,
            t_output_s,
            t_worker_s: active + cold_delay_s,
            cold_start_penalty_s: cold_delay_s,
            lat_storage_s: lat_read,
            billed_s: active + billed_cold_s,
        }
    }

    /// Request and write charges; independent of timing.
    pub fn storage_cost(&self) -> T {
        let reads = self
            .reads
            .iter()
            .fold(T::zero(), |acc, r| acc + T::count(r.requests) * r.storage.price_per_request);
        reads
            + T::count(self.n_write_requests) * self.write.price_per_request
            + self.d_output_gb * self.write.price_per_gb_write
    }
}

/// Deterministic time of one stage worker, with request rates found by one
/// fixed-point round: time the stage at idle-storage latency, derive the
/// rates from that duration, then time it again under those rates.
pub fn worker_time<T: Scalar>(io: &StageIo<'_, T>, profile: &CalibrationProfile<T>) -> TimeBreakdown<T> {
    let platform = &profile.platform;
    let penalty = cold_start_penalty(io.workers, platform);
    let billed_cold = platform.cold_start_prob(io.workers) * platform.cold_start_delay_s();
    let (r0, w0) = io.latencies(&[]);
    let first = io.worker_times(platform, r0, w0, T::one(), penalty, billed_cold);
    let rates = io.request_rates(first.t_worker_s);
    let (r1, w1) = io.latencies(&rates);
    io.worker_times(platform, r1, w1, T::one(), penalty, billed_cold)
}

pub fn stage_money<T: Scalar>(
    io: &StageIo<'_, T>,
    time: &TimeBreakdown<T>,
    profile: &CalibrationProfile<T>,
) -> CostBreakdown<T> {
    let c_workers = T::count(io.workers as u64) * worker_charge(time.billed_s, io.mem_mb, &profile.pricing);
    let c_storage = io.storage_cost();
    CostBreakdown {
        c_workers,
        c_storage,
        c_stage: c_workers + c_storage,
        n_read_requests: io.n_read_requests,
        n_write_requests: io.n_write_requests,
        d_output_gb: io.d_output_gb,
    }
}

/// Time and money of one configured stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageEstimate<T> {
    pub time: TimeBreakdown<T>,
    pub cost: CostBreakdown<T>,
}

pub fn estimate_stage<T: Scalar>(
    stage: &LogicalStage,
    config: &StageConfig,
    upstream: &[Upstream<'_>],
    profile: &CalibrationProfile<T>,
) -> Result<StageEstimate<T>, ModelError> {
    let io = StageIo::resolve(stage, config, upstream, profile)?;
    let time = worker_time(&io, profile);
    let cost = stage_money(&io, &time, profile);
    Ok(StageEstimate { time, cost })
}

/// Checks that `configs` assigns every stage and that partitions follow the
/// consumer's worker count (or 1 for terminal stages).
pub fn check_plan_configs(plan: &LogicalPlan, configs: &PlanConfigs) -> Result<(), ModelError> {
    for stage in &plan.stages {
        let config = configs.get(&stage.id).ok_or_else(|| ModelError::Config {
            stage: stage.id,
            reason: "stage has no configuration".into(),
        })?;
        let consumers = plan.consumers(stage.id);
        let expected = match consumers.first() {
            None => 1,
            Some(c) => configs
                .get(c)
                .ok_or_else(|| ModelError::Config {
                    stage: *c,
                    reason: "stage has no configuration".into(),
                })?
                .workers,
        };
        for c in &consumers {
            if configs.get(c).map(|cc| cc.workers) != Some(expected) {
                return Err(ModelError::Config {
                    stage: stage.id,
                    reason: "consumers disagree on the partition count".into(),
                });
            }
        }
        if config.partitions != Some(expected) {
            return Err(ModelError::Config {
                stage: stage.id,
                reason: format!(
                    "partitions {:?} must equal the consumer's worker count {expected}",
                    config.partitions
                ),
            });
        }
    }
    Ok(())
}

/// Prices a fully configured plan. Stage latencies combine along the DAG
/// with barrier semantics; the plan's latency is the latest terminal finish.
pub fn predict_plan<T: Scalar>(
    plan: &LogicalPlan,
    configs: &PlanConfigs,
    profile: &CalibrationProfile<T>,
) -> Result<PredictionBreakdown<T>, ModelError> {
    check_plan_configs(plan, configs)?;
    let mut per_stage: BTreeMap<StageId, StagePrediction<T>> = BTreeMap::new();
    let mut total_cost = T::zero();
    let mut total_latency = T::zero();
    for id in topological_stage_order(plan) {
        let stage = plan.stage(id);
        let config = &configs[&id];
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
        let est = estimate_stage(stage, config, &upstream, profile)?;
        let start = stage
            .producers
            .iter()
            .map(|p| per_stage[p].finish_s)
            .fold(T::zero(), T::max);
        let finish_s = start + est.time.t_worker_s;
        total_cost = total_cost + est.cost.c_stage;
        if plan.is_terminal(id) {
            total_latency = total_latency.max(finish_s);
        }
        per_stage.insert(
            id,
            StagePrediction {
                config: config.clone(),
                time: est.time,
                cost: est.cost,
                finish_s,
            },
        );
    }
    Ok(PredictionBreakdown {
        per_stage,
        total_latency_s: total_latency,
        total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::LogicalStage;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn platform() -> PlatformProfile<f64> {
        CalibrationProfile::<f64>::reference().platform
    }

    fn storage(base: f64) -> StorageServiceProfile<f64> {
        StorageServiceProfile {
            base_latency_s: base,
            throttle_threshold_rps: 5500.0,
            throttle_a: 0.65,
            throttle_b: 0.66,
            price_per_request: 0.0,
            price_per_gb_write: 0.0,
        }
    }

    #[test]
    fn client_invocation_delay() {
        let p = platform();
        assert!(rel(client_inv_delay(1000, &p), 1.0) <= 1e-9);
        assert!(rel(client_inv_delay(1, &p), 0.001) <= 1e-9);
        assert!(rel(client_inv_delay(500, &p), 0.5) <= 1e-9);
    }

    #[test]
    fn provider_invocation_delay_relu() {
        let p = platform();
        assert!(rel(provider_inv_delay(500, &p), 0.040) <= 1e-9);
        assert!(rel(provider_inv_delay(1000, &p), 0.040) <= 1e-9);
        assert!(rel(provider_inv_delay(1500, &p), 5.040) <= 1e-9);
    }

    #[test]
    fn fetch_time_piecewise_bandwidth() {
        let p = platform();
        let s = storage(0.05);
        assert!(rel(fetch_time(150.0, &s, &p, 0.0), 0.55) <= 1e-9);
        assert_eq!(fetch_time(0.0, &s, &p, 0.0), 0.05);
        assert!(rel(fetch_time(300.0, &s, &p, 0.0), 0.05 + 0.5 + 150.0 / 70.0) <= 1e-9);
    }

    #[test]
    fn storage_latency_throttling() {
        let s = storage(0.05);
        assert_eq!(storage_latency(5500.0, &s), 0.05);
        assert_eq!(storage_latency(0.0, &s), 0.05);
        let expected = 0.05 + 0.65 * 0.66f64.exp();
        assert!(rel(storage_latency(11000.0, &s), expected) <= 1e-9);
        assert!((0.65 * 0.66f64.exp() - 1.2576).abs() < 1e-4);
    }

    #[test]
    fn process_time_splits_and_scales_with_cores() {
        let op = OperatorProfile {
            throughput_mb_per_core_s: 175.0,
            decompress_mb_per_core_s: 350.0,
            compress_mb_per_core_s: 300.0,
            compression_ratio: 1.0,
        };
        assert_eq!(process_time(0.0, &op, 1), (0.0, 0.0));
        let (d, o) = process_time(700.0, &op, 2);
        assert!(rel(d, 1.0) <= 1e-9 && rel(o, 2.0) <= 1e-9);
        let (d4, o4) = process_time(700.0, &op, 4);
        assert!(rel(d4, d / 2.0) <= 1e-12 && rel(o4, o / 2.0) <= 1e-12);
    }

    #[test]
    fn output_time_matches_fetch_identity() {
        let p = platform();
        let s = storage(0.05);
        let op = OperatorProfile {
            throughput_mb_per_core_s: 175.0,
            decompress_mb_per_core_s: 350.0,
            compress_mb_per_core_s: 300.0,
            compression_ratio: 1.0,
        };
        assert_eq!(output_time(0.0, &op, &s, &p, 1, 0.0), (0.0, 0.05));
        let (c, st) = output_time(150.0, &op, &s, &p, 1, 0.0);
        assert!(rel(c, 0.5) <= 1e-9 && rel(st, 0.55) <= 1e-9);
        assert_eq!(st, fetch_time(150.0, &s, &p, 0.0));
    }

    #[test]
    fn cold_start_penalty_expectation() {
        let mut p = platform();
        p.cold_start_delay_ms = 1000.0;
        p.cold_start_prob_large = 0.10;
        let pen = cold_start_penalty(500, &p);
        assert!(rel(pen, 1.0 - 0.9f64.powi(500)) <= 1e-12);
        assert!((pen - 1.0).abs() < 1e-9);
        p.cold_start_prob_small = 0.0;
        assert_eq!(cold_start_penalty(1, &p), 0.0);
    }

    #[test]
    fn worker_charge_matches_hand_value() {
        let pricing = PricingProfile {
            worker_invocation_price: 2e-7,
            worker_gb_second_price: 1.6667e-5,
        };
        let c = 2.0 * worker_charge(10.0, 2048, &pricing);
        assert!(rel(c, 2.0 * (2e-7 + 1.6667e-5 * 10.0 * 2.0)) <= 1e-9);
        assert!((c - 6.671e-4).abs() < 1e-6);
        let single = worker_charge(10.0, 2048, &pricing) - 2e-7;
        let doubled = worker_charge(10.0, 4096, &pricing) - 2e-7;
        assert!(rel(doubled, 2.0 * single) <= 1e-12);
    }

    fn scan(id: u32, input: u64, output: u64) -> LogicalStage {
        LogicalStage {
            id: StageId(id),
            operator: OperatorKind::Scan,
            producers: vec![],
            input_bytes: input,
            output_bytes: output,
            selectivity: None,
        }
    }

    #[test]
    fn time_breakdown_identities_hold() {
        let profile = CalibrationProfile::<f64>::reference();
        let st = scan(1, 3 << 30, 1 << 30);
        let config = StageConfig::new(8, 2, 1770, StorageService::new("S3Standard")).with_partitions(1);
        let est = estimate_stage(&st, &config, &[], &profile).unwrap();
        let t = est.time;
        assert_eq!(t.t_fetch_process_s, t.t_fetch_s.max(t.t_process_s));
        assert_eq!(t.t_process_s, t.t_decompress_s + t.t_process_op_s);
        assert_eq!(t.t_output_s, t.t_compress_s + t.t_store_s);
        assert_eq!(t.t_worker_s, t.t_inv_s + t.t_fetch_process_s + t.t_output_s + t.cold_start_penalty_s);
        assert_eq!(est.cost.c_stage, est.cost.c_workers + est.cost.c_storage);
    }

    #[test]
    fn single_worker_without_cold_starts_has_no_penalty() {
        let mut profile = CalibrationProfile::<f64>::reference();
        profile.platform.cold_start_prob_small = 0.0;
        let st = scan(1, 100 << 20, 10 << 20);
        let config = StageConfig::new(1, 1, 1770, StorageService::new("S3Standard")).with_partitions(1);
        let t = estimate_stage(&st, &config, &[], &profile).unwrap().time;
        assert_eq!(t.cold_start_penalty_s, 0.0);
        assert_eq!(t.t_worker_s, t.t_inv_s + t.t_fetch_process_s + t.t_output_s);
        assert_eq!(t.billed_s, t.t_worker_s);
    }

    #[test]
    fn oversized_worker_input_is_a_config_error() {
        let profile = CalibrationProfile::<f64>::reference();
        let st = scan(1, 4 << 30, 1 << 20);
        let config = StageConfig::new(1, 1, 1770, StorageService::new("S3Standard"));
        let err = estimate_stage(&st, &config, &[], &profile).unwrap_err();
        assert!(matches!(err, ModelError::Config { stage: StageId(1), .. }));
    }

    #[test]
    fn unprofiled_operator_is_reported() {
        let mut profile = CalibrationProfile::<f64>::reference();
        profile.operators.remove(&OperatorKind::Scan);
        let st = scan(1, 1 << 20, 1 << 20);
        let config = StageConfig::new(1, 1, 1770, StorageService::new("S3Standard"));
        assert!(matches!(
            estimate_stage(&st, &config, &[], &profile),
            Err(ModelError::OperatorUnprofiled { .. })
        ));
    }

    #[test]
    fn shuffle_requests_follow_partition_layout() {
        let profile = CalibrationProfile::<f64>::reference();
        let producer = scan(1, 1 << 30, 512 << 20);
        let join = LogicalStage {
            id: StageId(2),
            operator: OperatorKind::Join,
            producers: vec![StageId(1)],
            input_bytes: 512 << 20,
            output_bytes: 64 << 20,
            selectivity: None,
        };
        let s3 = StorageService::new("S3Standard");
        let up = [Upstream {
            stage: &producer,
            workers: 20,
            partitions: 10,
            storage: &s3,
        }];
        let config = StageConfig::new(10, 1, 1770, StorageService::new("S3OneZone")).with_partitions(1);
        let io = StageIo::resolve(&join, &config, &up, &profile).unwrap();
        assert_eq!(io.partitions_per_worker, 20);
        assert_eq!(io.n_read_requests, 200);
        assert_eq!(io.n_write_requests, 10);
        let rates = io.request_rates(2.0);
        assert_eq!(rates.len(), 2);
        assert_eq!(rates[0].1, 100.0);
        assert_eq!(rates[1].1, 5.0);
    }
}
