//! Calibration profile: every platform, storage, operator and price constant
//! the cost model consumes.
//!
//! Profiles are JSON documents. Fields with a measured platform default may be
//! omitted; the loader fills them in and records their paths in
//! [`CalibrationProfile::defaulted`]. Unknown fields are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ProfileError;
use crate::plan::OperatorKind;
use crate::scalar::Scalar;

/// The profile shipped with the crate. Values other than the measured
/// platform defaults are placeholders, not measurements.
pub const REFERENCE_PROFILE_JSON: &str = include_str!("../data/reference_profile.json");

pub const DEFAULT_PROVIDER_BASE_DELAY_MS: f64 = 40.0;
pub const DEFAULT_PROVIDER_CONCURRENCY_LIMIT: u32 = 1000;
pub const DEFAULT_PROVIDER_OVER_LIMIT_DELAY_MS: f64 = 10.0;
pub const DEFAULT_MEM_PER_CORE_MB: u32 = 1770;
pub const DEFAULT_FETCH_FAST_BW_MBPS: f64 = 300.0;
pub const DEFAULT_FETCH_FAST_WINDOW_MB: f64 = 150.0;
pub const DEFAULT_FETCH_SLOW_BW_MBPS: f64 = 70.0;
pub const DEFAULT_COLD_START_PROB_LARGE: f64 = 0.10;
pub const DEFAULT_COLD_START_SCALE_THRESHOLD: u32 = 500;
pub const DEFAULT_THROTTLE_THRESHOLD_RPS: f64 = 5500.0;
pub const DEFAULT_THROTTLE_A: f64 = 0.65;
pub const DEFAULT_THROTTLE_B: f64 = 0.66;
pub const DEFAULT_WORKING_SET_FRACTION: f64 = 0.7;
pub const DEFAULT_MIN_MB_PER_WORKER: f64 = 32.0;
pub const DEFAULT_INPUT_SPLIT_MB: f64 = 128.0;
pub const DEFAULT_LOCAL_SPACE_CAP: usize = 100_000;
pub const DEFAULT_BASE_STORAGE: &str = "S3Standard";

/// Name of an intermediate storage service, e.g. `S3Standard`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StorageService(pub String);

impl StorageService {
    pub fn new(name: impl Into<String>) -> Self {
        StorageService(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StorageService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformProfile<T> {
    /// Worker invocations per second the driver can issue.
    pub client_inv_rate: T,
    pub provider_base_delay_ms: T,
    pub provider_concurrency_limit: u32,
    pub provider_over_limit_delay_ms_per_worker: T,
    pub mem_per_core_mb: u32,
    pub worker_mem_min_mb: u32,
    pub worker_mem_max_mb: u32,
    pub fetch_fast_bw_mbps: T,
    pub fetch_fast_window_mb: T,
    pub fetch_slow_bw_mbps: T,
    pub cold_start_prob_small: T,
    pub cold_start_prob_large: T,
    pub cold_start_scale_threshold: u32,
    pub cold_start_delay_ms: T,
}

impl<T: Scalar> PlatformProfile<T> {
    /// Per-worker cold-start probability for a stage of `workers` workers.
    pub fn cold_start_prob(&self, workers: u32) -> T {
        if workers >= self.cold_start_scale_threshold {
            self.cold_start_prob_large
        } else {
            self.cold_start_prob_small
        }
    }

    pub fn cold_start_delay_s(&self) -> T {
        self.cold_start_delay_ms / T::lit(1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageServiceProfile<T> {
    pub base_latency_s: T,
    pub throttle_threshold_rps: T,
    pub throttle_a: T,
    pub throttle_b: T,
    pub price_per_request: T,
    pub price_per_gb_write: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorProfile<T> {
    pub throughput_mb_per_core_s: T,
    pub decompress_mb_per_core_s: T,
    pub compress_mb_per_core_s: T,
    /// Stored bytes per logical output byte.
    pub compression_ratio: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingProfile<T> {
    pub worker_invocation_price: T,
    pub worker_gb_second_price: T,
}

/// Knobs of the pruning heuristics that are not platform measurements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannerProfile<T> {
    /// Share of the largest worker's memory one worker's input may fill.
    pub working_set_fraction: T,
    /// Smallest input share worth a worker.
    pub min_mb_per_worker: T,
    /// Size of one base-table input split, which sets scan partition counts.
    pub input_split_mb: T,
    /// Where base tables live and final results are written.
    pub base_storage: StorageService,
    pub local_space_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationProfile<T> {
    pub version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub platform: PlatformProfile<T>,
    pub storages: BTreeMap<StorageService, StorageServiceProfile<T>>,
    pub operators: BTreeMap<OperatorKind, OperatorProfile<T>>,
    pub pricing: PricingProfile<T>,
    pub planner: PlannerProfile<T>,
    /// Field paths filled from defaults at load time.
    #[serde(skip)]
    pub defaulted: Vec<String>,
}

/// Which variability sources the cost model accounts for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelVariant {
    pub cold_starts: bool,
    pub throttling: bool,
}

impl ModelVariant {
    pub const FULL: ModelVariant = ModelVariant {
        cold_starts: true,
        throttling: true,
    };
    pub const BLIND: ModelVariant = ModelVariant {
        cold_starts: false,
        throttling: false,
    };
}

impl<T: Scalar> CalibrationProfile<T> {
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_PROFILE_JSON).expect("bundled reference profile is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let raw: RawProfile<T> = serde_json::from_str(text)?;
        let profile = raw.resolve()?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn storage(&self, id: &StorageService) -> Option<&StorageServiceProfile<T>> {
        self.storages.get(id)
    }

    pub fn operator(&self, kind: OperatorKind) -> Option<&OperatorProfile<T>> {
        self.operators.get(&kind)
    }

    pub fn mem_per_core_mb(&self) -> u32 {
        self.platform.mem_per_core_mb
    }

    /// A copy whose model ignores the disabled variability sources: cold
    /// starts never happen and storage never throttles.
    pub fn with_variant(&self, variant: ModelVariant) -> Self {
        let mut p = self.clone();
        if !variant.cold_starts {
            p.platform.cold_start_prob_small = T::zero();
            p.platform.cold_start_prob_large = T::zero();
        }
        if !variant.throttling {
            for s in p.storages.values_mut() {
                s.throttle_a = T::zero();
            }
        }
        p
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let pl = &self.platform;
        positive("platform.client_inv_rate", pl.client_inv_rate)?;
        positive("platform.provider_base_delay_ms", pl.provider_base_delay_ms)?;
        positive_count("platform.provider_concurrency_limit", pl.provider_concurrency_limit)?;
        positive(
            "platform.provider_over_limit_delay_ms_per_worker",
            pl.provider_over_limit_delay_ms_per_worker,
        )?;
        positive_count("platform.mem_per_core_mb", pl.mem_per_core_mb)?;
        positive_count("platform.worker_mem_min_mb", pl.worker_mem_min_mb)?;
        if pl.worker_mem_min_mb > pl.worker_mem_max_mb {
            return Err(ProfileError::invalid(
                "platform.worker_mem_max_mb",
                "must be at least worker_mem_min_mb",
            ));
        }
        positive("platform.fetch_fast_bw_mbps", pl.fetch_fast_bw_mbps)?;
        positive("platform.fetch_fast_window_mb", pl.fetch_fast_window_mb)?;
        positive("platform.fetch_slow_bw_mbps", pl.fetch_slow_bw_mbps)?;
        probability("platform.cold_start_prob_small", pl.cold_start_prob_small)?;
        probability("platform.cold_start_prob_large", pl.cold_start_prob_large)?;
        positive_count("platform.cold_start_scale_threshold", pl.cold_start_scale_threshold)?;
        positive("platform.cold_start_delay_ms", pl.cold_start_delay_ms)?;
        let fits_one = (1..)
            .map(|c: u64| c * pl.mem_per_core_mb as u64)
            .take_while(|&mb| mb <= pl.worker_mem_max_mb as u64)
            .any(|mb| mb >= pl.worker_mem_min_mb as u64);
        if !fits_one {
            return Err(ProfileError::invalid(
                "platform.worker_mem_max_mb",
                "no whole number of cores fits the worker memory bounds",
            ));
        }

        if self.storages.is_empty() {
            return Err(ProfileError::invalid("storages", "at least one storage service is required"));
        }
        for (id, s) in &self.storages {
            let f = |name: &str| format!("storages.{id}.{name}");
            non_negative(&f("base_latency_s"), s.base_latency_s)?;
            positive(&f("throttle_threshold_rps"), s.throttle_threshold_rps)?;
            non_negative(&f("throttle_a"), s.throttle_a)?;
            non_negative(&f("throttle_b"), s.throttle_b)?;
            non_negative(&f("price_per_request"), s.price_per_request)?;
            non_negative(&f("price_per_gb_write"), s.price_per_gb_write)?;
        }
        for (kind, op) in &self.operators {
            let f = |name: &str| format!("operators.{kind}.{name}");
            positive(&f("throughput_mb_per_core_s"), op.throughput_mb_per_core_s)?;
            positive(&f("decompress_mb_per_core_s"), op.decompress_mb_per_core_s)?;
            positive(&f("compress_mb_per_core_s"), op.compress_mb_per_core_s)?;
            positive(&f("compression_ratio"), op.compression_ratio)?;
        }
        non_negative("pricing.worker_invocation_price", self.pricing.worker_invocation_price)?;
        non_negative("pricing.worker_gb_second_price", self.pricing.worker_gb_second_price)?;

        let pn = &self.planner;
        positive("planner.working_set_fraction", pn.working_set_fraction)?;
        if pn.working_set_fraction > T::one() {
            return Err(ProfileError::invalid("planner.working_set_fraction", "must be at most 1"));
        }
        positive("planner.min_mb_per_worker", pn.min_mb_per_worker)?;
        positive("planner.input_split_mb", pn.input_split_mb)?;
        if pn.local_space_cap == 0 {
            return Err(ProfileError::invalid("planner.local_space_cap", "must be positive"));
        }
        if !self.storages.contains_key(&pn.base_storage) {
            return Err(ProfileError::invalid(
                "planner.base_storage",
                format!("`{}` is not a configured storage service", pn.base_storage),
            ));
        }
        Ok(())
    }
}

/// Reads and validates a profile file.
pub fn load_profile<T: Scalar>(path: impl AsRef<Path>) -> Result<CalibrationProfile<T>, ProfileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    CalibrationProfile::from_json(&text)
}

fn positive<T: Scalar>(field: &str, v: T) -> Result<(), ProfileError> {
    if v.is_finite() && v > T::zero() {
        Ok(())
    } else {
        Err(ProfileError::invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

fn positive_count(field: &str, v: u32) -> Result<(), ProfileError> {
    if v > 0 {
        Ok(())
    } else {
        Err(ProfileError::invalid(field, "must be > 0"))
    }
}

fn non_negative<T: Scalar>(field: &str, v: T) -> Result<(), ProfileError> {
    if v.is_finite() && v >= T::zero() {
        Ok(())
    } else {
        Err(ProfileError::invalid(field, format!("must be finite and >= 0, got {v}")))
    }
}

fn probability<T: Scalar>(field: &str, v: T) -> Result<(), ProfileError> {
    if v >= T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(ProfileError::invalid(field, format!("must lie in [0, 1], got {v}")))
    }
}

// Wire shapes: optional wherever a default exists, so omissions can be recorded.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile<T> {
    version: u32,
    #[serde(default)]
    notes: Option<String>,
    platform: RawPlatform<T>,
    storages: BTreeMap<StorageService, RawStorage<T>>,
    operators: BTreeMap<OperatorKind, OperatorProfile<T>>,
    pricing: PricingProfile<T>,
    #[serde(default = "Option::default")]
    planner: Option<RawPlanner<T>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlatform<T> {
    client_inv_rate: T,
    provider_base_delay_ms: Option<T>,
    provider_concurrency_limit: Option<u32>,
    provider_over_limit_delay_ms_per_worker: Option<T>,
    mem_per_core_mb: Option<u32>,
    worker_mem_min_mb: u32,
    worker_mem_max_mb: u32,
    fetch_fast_bw_mbps: Option<T>,
    fetch_fast_window_mb: Option<T>,
    fetch_slow_bw_mbps: Option<T>,
    cold_start_prob_small: T,
    cold_start_prob_large: Option<T>,
    cold_start_scale_threshold: Option<u32>,
    cold_start_delay_ms: T,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStorage<T> {
    base_latency_s: T,
    throttle_threshold_rps: Option<T>,
    throttle_a: Option<T>,
    throttle_b: Option<T>,
    price_per_request: T,
    price_per_gb_write: T,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPlanner<T> {
    working_set_fraction: Option<T>,
    min_mb_per_worker: Option<T>,
    input_split_mb: Option<T>,
    base_storage: Option<StorageService>,
    local_space_cap: Option<usize>,
}

struct Defaults(Vec<String>);

impl Defaults {
    fn take<V>(&mut self, field: impl FnOnce() -> String, value: Option<V>, default: V) -> V {
        value.unwrap_or_else(|| {
            self.0.push(field());
            default
        })
    }
}

impl<T: Scalar> RawProfile<T> {
    fn resolve(self) -> Result<CalibrationProfile<T>, ProfileError> {
        if self.version == 0 {
            return Err(ProfileError::invalid("version", "must be >= 1"));
        }
        let mut d = Defaults(Vec::new());
        let p = self.platform;
        let platform = PlatformProfile {
            client_inv_rate: p.client_inv_rate,
            provider_base_delay_ms: d.take(
                || "platform.provider_base_delay_ms".into(),
                p.provider_base_delay_ms,
                T::lit(DEFAULT_PROVIDER_BASE_DELAY_MS),
            ),
            provider_concurrency_limit: d.take(
                || "platform.provider_concurrency_limit".into(),
                p.provider_concurrency_limit,
                DEFAULT_PROVIDER_CONCURRENCY_LIMIT,
            ),
            provider_over_limit_delay_ms_per_worker: d.take(
                || "platform.provider_over_limit_delay_ms_per_worker".into(),
                p.provider_over_limit_delay_ms_per_worker,
                T::lit(DEFAULT_PROVIDER_OVER_LIMIT_DELAY_MS),
            ),
            mem_per_core_mb: d.take(
                || "platform.mem_per_core_mb".into(),
                p.mem_per_core_mb,
                DEFAULT_MEM_PER_CORE_MB,
            ),
            worker_mem_min_mb: p.worker_mem_min_mb,
            worker_mem_max_mb: p.worker_mem_max_mb,
            fetch_fast_bw_mbps: d.take(
                || "platform.fetch_fast_bw_mbps".into(),
                p.fetch_fast_bw_mbps,
                T::lit(DEFAULT_FETCH_FAST_BW_MBPS),
            ),
            fetch_fast_window_mb: d.take(
                || "platform.fetch_fast_window_mb".into(),
                p.fetch_fast_window_mb,
                T::lit(DEFAULT_FETCH_FAST_WINDOW_MB),
            ),
            fetch_slow_bw_mbps: d.take(
                || "platform.fetch_slow_bw_mbps".into(),
                p.fetch_slow_bw_mbps,
                T::lit(DEFAULT_FETCH_SLOW_BW_MBPS),
            ),
            cold_start_prob_small: p.cold_start_prob_small,
            cold_start_prob_large: d.take(
                || "platform.cold_start_prob_large".into(),
                p.cold_start_prob_large,
                T::lit(DEFAULT_COLD_START_PROB_LARGE),
            ),
            cold_start_scale_threshold: d.take(
                || "platform.cold_start_scale_threshold".into(),
                p.cold_start_scale_threshold,
                DEFAULT_COLD_START_SCALE_THRESHOLD,
            ),
            cold_start_delay_ms: p.cold_start_delay_ms,
        };

        let storages = self
            .storages
            .into_iter()
            .map(|(id, s)| {
                let resolved = StorageServiceProfile {
                    base_latency_s: s.base_latency_s,
                    throttle_threshold_rps: d.take(
                        || format!("storages.{id}.throttle_threshold_rps"),
                        s.throttle_threshold_rps,
                        T::lit(DEFAULT_THROTTLE_THRESHOLD_RPS),
                    ),
                    throttle_a: d.take(
                        || format!("storages.{id}.throttle_a"),
                        s.throttle_a,
                        T::lit(DEFAULT_THROTTLE_A),
                    ),
                    throttle_b: d.take(
                        || format!("storages.{id}.throttle_b"),
                        s.throttle_b,
                        T::lit(DEFAULT_THROTTLE_B),
                    ),
                    price_per_request: s.price_per_request,
                    price_per_gb_write: s.price_per_gb_write,
                };
                (id, resolved)
            })
            .collect::<BTreeMap<_, _>>();

        let raw_planner = self.planner.unwrap_or_default();
        let default_base = if storages.contains_key(&StorageService::new(DEFAULT_BASE_STORAGE)) {
            StorageService::new(DEFAULT_BASE_STORAGE)
        } else {
            storages
                .keys()
                .next()
                .cloned()
                .ok_or_else(|| ProfileError::invalid("storages", "at least one storage service is required"))?
        };
        let planner = PlannerProfile {
            working_set_fraction: d.take(
                || "planner.working_set_fraction".into(),
                raw_planner.working_set_fraction,
                T::lit(DEFAULT_WORKING_SET_FRACTION),
            ),
            min_mb_per_worker: d.take(
                || "planner.min_mb_per_worker".into(),
                raw_planner.min_mb_per_worker,
                T::lit(DEFAULT_MIN_MB_PER_WORKER),
            ),
            input_split_mb: d.take(
                || "planner.input_split_mb".into(),
                raw_planner.input_split_mb,
                T::lit(DEFAULT_INPUT_SPLIT_MB),
            ),
            base_storage: d.take(|| "planner.base_storage".into(), raw_planner.base_storage, default_base),
            local_space_cap: d.take(
                || "planner.local_space_cap".into(),
                raw_planner.local_space_cap,
                DEFAULT_LOCAL_SPACE_CAP,
            ),
        };

        Ok(CalibrationProfile {
            version: self.version,
            notes: self.notes,
            platform,
            storages,
            operators: self.operators,
            pricing: self.pricing,
            planner,
            defaulted: d.0,
        })
    }
}
