//! Per-stage configuration space and the pruning heuristics that shape it.
//!
//! * Cardinality bounds the worker count: no worker gets more input than a
//!   working-set share of the largest worker, or less than a useful minimum.
//! * Worker counts are sampled at `w_min + 2^k`, plus `w_max` itself.
//! * Workers get a whole number of cores, memory following from it.
//! * A worker's partition count must be a multiple of its cores. This needs
//!   the upstream layout, so the search applies it when pairing stages.
//! * A producer's partition count equals its consumer's worker count; the
//!   space records the rule and leaves partitions unset.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::profile::{CalibrationProfile, StorageService};
use crate::scalar::{Scalar, BYTES_PER_MB};

/// How a stage's output partition count gets decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PartitionRule {
    /// Equal to the worker count of the consuming stage.
    MatchConsumerWorkers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageSpace {
    /// Valid core counts keyed by `(workers, storage)`.
    pub entries: BTreeMap<(u32, StorageService), Vec<u32>>,
    pub partition_rule: PartitionRule,
    pub worker_bounds: (u32, u32),
}

impl StageSpace {
    pub fn is_empty(&self) -> bool {
        self.entries.values().all(|sizes| sizes.is_empty())
    }

    /// Number of `(workers, cores, storage)` combinations.
    pub fn size(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }
}

/// `(w_min, w_max)` for `card_bytes` of input under per-worker byte limits.
pub fn worker_bounds(card_bytes: u64, max_bytes_per_worker: u64, min_bytes_per_worker: u64) -> (u32, u32) {
    let max_per = max_bytes_per_worker.max(1);
    let min_per = min_bytes_per_worker.max(1);
    let w_min = card_bytes.div_ceil(max_per).max(1);
    let w_max = (card_bytes / min_per).max(w_min);
    let clamp = |w: u64| w.min(u32::MAX as u64) as u32;
    (clamp(w_min), clamp(w_max))
}

/// Per-worker byte limits derived from the profile: `(max, min)`.
pub fn per_worker_byte_limits<T: Scalar>(profile: &CalibrationProfile<T>) -> (u64, u64) {
    let largest_mb = worker_sizes_h3(profile)
        .last()
        .map(|&c| c as u64 * profile.mem_per_core_mb() as u64)
        .unwrap_or(profile.platform.worker_mem_max_mb as u64);
    let mb = T::count(BYTES_PER_MB);
    let max = (profile.planner.working_set_fraction * T::count(largest_mb) * mb)
        .floor()
        .to_u64()
        .unwrap_or(u64::MAX);
    let min = (profile.planner.min_mb_per_worker * mb)
        .ceil()
        .to_u64()
        .unwrap_or(u64::MAX);
    (max, min)
}

pub fn worker_bounds_h1<T: Scalar>(card_bytes: u64, profile: &CalibrationProfile<T>) -> (u32, u32) {
    let (max, min) = per_worker_byte_limits(profile);
    worker_bounds(card_bytes, max, min)
}

pub fn sample_workers_h2(w_min: u32, w_max: u32) -> Vec<u32> {
    debug_assert!(1 <= w_min && w_min <= w_max);
    let mut out = vec![w_min];
    let mut offset: u64 = 2;
    while (w_min as u64 + offset) <= w_max as u64 {
        out.push((w_min as u64 + offset) as u32);
        offset *= 2;
    }
    if *out.last().expect("non-empty") != w_max {
        out.push(w_max);
    }
    out
}

/// Core counts whose memory lies within the profile's worker bounds.
pub fn worker_sizes_h3<T: Scalar>(profile: &CalibrationProfile<T>) -> Vec<u32> {
    let pl = &profile.platform;
    (1u32..)
        .map(|c| (c, c as u64 * pl.mem_per_core_mb as u64))
        .take_while(|&(_, mb)| mb <= pl.worker_mem_max_mb as u64)
        .filter(|&(_, mb)| mb >= pl.worker_mem_min_mb as u64)
        .map(|(c, _)| c)
        .collect()
}

/// True when each worker's partition count is a positive multiple of its cores.
pub fn aligned(partitions_per_worker: u64, cores: u32) -> bool {
    partitions_per_worker > 0 && partitions_per_worker.is_multiple_of(cores as u64)
}

pub fn filter_alignment_h4(workers: u32, cores: u32, incoming_partitions: u64) -> bool {
    aligned(incoming_partitions.div_ceil(workers as u64), cores)
}

/// Whether `workers` workers of `cores` cores can hold `card_bytes` of input.
pub fn fits_memory(card_bytes: u64, workers: u32, cores: u32, mem_per_core_mb: u32) -> bool {
    let capacity = workers as u128 * cores as u128 * mem_per_core_mb as u128 * BYTES_PER_MB as u128;
    card_bytes as u128 <= capacity
}

pub fn gen_stage_space<T: Scalar>(card_bytes: u64, profile: &CalibrationProfile<T>) -> StageSpace {
    let worker_bounds = worker_bounds_h1(card_bytes, profile);
    let counts = sample_workers_h2(worker_bounds.0, worker_bounds.1);
    let sizes = worker_sizes_h3(profile);
    let mut entries = BTreeMap::new();
    for &w in &counts {
        let fitting: Vec<u32> = sizes
            .iter()
            .copied()
            .filter(|&c| fits_memory(card_bytes, w, c, profile.mem_per_core_mb()))
            .collect();
        if fitting.is_empty() {
            continue;
        }
        for s in profile.storages.keys() {
            entries.insert((w, s.clone()), fitting.clone());
        }
    }
    StageSpace {
        entries,
        partition_rule: PartitionRule::MatchConsumerWorkers,
        worker_bounds,
    }
}
