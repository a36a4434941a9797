//! Cost/latency dominance, the nondominated filter, knee-point detection and
//! preference-driven plan selection.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::{PlanConfigs, PredictionBreakdown};
use crate::error::BudgetInfeasibleError;
use crate::scalar::Scalar;

/// A fully or partially configured plan with its predicted objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct CandidatePlan<T> {
    #[serde(with = "configs_as_list")]
    pub stage_configs: PlanConfigs,
    pub predicted_latency_s: T,
    pub predicted_cost: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<PredictionBreakdown<T>>,
}

impl<T: Scalar> CandidatePlan<T> {
    pub fn point(&self) -> (T, T) {
        (self.predicted_cost, self.predicted_latency_s)
    }
}

/// True iff `a` is no worse than `b` on both cost and latency and strictly
/// better on one. Points are `(cost, latency)`.
pub fn dominates<T: PartialOrd>(a: (T, T), b: (T, T)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Indices of the nondominated points, ordered by ascending cost. Exact
/// duplicates keep the index that `tie` orders first.
pub fn pareto_indices<T: Scalar>(
    points: &[(T, T)],
    mut tie: impl FnMut(usize, usize) -> Ordering,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i], points[j]);
        a.0.partial_cmp(&b.0)
            .expect("objectives are comparable")
            .then(a.1.partial_cmp(&b.1).expect("objectives are comparable"))
            .then_with(|| tie(i, j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        // Sorted by cost then latency: i is dominated or a duplicate exactly
        // when the last kept point's latency is no larger.
        match kept.last() {
            Some(&k) if points[k].1 <= points[i].1 => {}
            _ => kept.push(i),
        }
    }
    kept
}

/// The nondominated subset of `plans`, ascending by cost. Identical
/// `(cost, latency)` points keep the plan with the smallest configuration.
pub fn pareto_filter<T: Scalar>(plans: Vec<CandidatePlan<T>>) -> Vec<CandidatePlan<T>> {
    let points: Vec<(T, T)> = plans.iter().map(CandidatePlan::point).collect();
    let keep = pareto_indices(&points, |i, j| plans[i].stage_configs.cmp(&plans[j].stage_configs));
    let mut slots: Vec<Option<CandidatePlan<T>>> = plans.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| slots[i].take().expect("each index kept once"))
        .collect()
}

/// Generalisation of [`dominates`] to objective vectors of any length.
pub(crate) fn dominates_vec<T: PartialOrd>(a: &[T], b: &[T]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Index of the knee: the point farthest from the chord joining the
/// cheapest and the fastest point, after scaling both axes to `[0, 1]`.
/// Ties go to the cheaper point. `points` must be sorted by ascending cost.
pub fn knee_index<T: Scalar>(points: &[(T, T)]) -> usize {
    if points.len() <= 2 {
        return 0;
    }
    let (c_lo, c_hi) = bounds(points.iter().map(|p| p.0));
    let (l_lo, l_hi) = bounds(points.iter().map(|p| p.1));
    let norm = |v: T, lo: T, hi: T| if hi > lo { (v - lo) / (hi - lo) } else { T::zero() };
    // The chord runs from (0, 1) to (1, 0): distance is |x + y - 1| / sqrt 2,
    // and the constant factor does not change the argmax.
    let mut best = 0;
    let mut best_d = T::neg_infinity();
    for (i, &(c, l)) in points.iter().enumerate() {
        let d = (norm(c, c_lo, c_hi) + norm(l, l_lo, l_hi) - T::one()).abs();
        if d > best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn bounds<T: Scalar>(values: impl Iterator<Item = T>) -> (T, T) {
    values.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Nondominated plans ascending by cost, strictly descending by latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFrontier<T> {
    pub points: Vec<CandidatePlan<T>>,
    pub knee_index: usize,
}

impl<T: Scalar> ParetoFrontier<T> {
    pub fn from_plans(plans: Vec<CandidatePlan<T>>) -> Self {
        let points = pareto_filter(plans);
        let coords: Vec<(T, T)> = points.iter().map(CandidatePlan::point).collect();
        let knee_index = knee_index(&coords);
        ParetoFrontier { points, knee_index }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> Vec<(T, T)> {
        self.points.iter().map(CandidatePlan::point).collect()
    }

    /// Checks ordering, nondominance and the knee index.
    pub fn is_well_formed(&self) -> bool {
        let c = self.coords();
        c.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 > w[1].1)
            && (self.points.is_empty() || self.knee_index < self.points.len())
    }
}

/// How to pick one plan off a frontier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preference {
    Knee,
    Fastest,
    Cheapest,
    CostBudget(f64),
    LatencyBudget(f64),
}

impl fmt::Display for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preference::Knee => f.write_str("knee"),
            Preference::Fastest => f.write_str("fastest"),
            Preference::Cheapest => f.write_str("cheapest"),
            Preference::CostBudget(x) => write!(f, "cost-budget={x}"),
            Preference::LatencyBudget(y) => write!(f, "latency-budget={y}"),
        }
    }
}

impl FromStr for Preference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let budget = |v: &str| -> Result<f64, String> {
            let x: f64 = v.parse().map_err(|_| format!("invalid budget `{v}`"))?;
            if x.is_finite() && x >= 0.0 {
                Ok(x)
            } else {
                Err(format!("budget must be finite and non-negative, got `{v}`"))
            }
        };
        match s {
            "knee" => Ok(Preference::Knee),
            "fastest" => Ok(Preference::Fastest),
            "cheapest" => Ok(Preference::Cheapest),
            _ => {
                if let Some(v) = s.strip_prefix("cost-budget=") {
                    budget(v).map(Preference::CostBudget)
                } else if let Some(v) = s.strip_prefix("latency-budget=") {
                    budget(v).map(Preference::LatencyBudget)
                } else {
                    Err(format!(
                        "unknown preference `{s}` (expected knee, fastest, cheapest, cost-budget=<x> or latency-budget=<y>)"
                    ))
                }
            }
        }
    }
}

/// Picks a point by preference. Returns its index in the frontier.
pub fn select_plan<T: Scalar>(
    frontier: &ParetoFrontier<T>,
    preference: Preference,
) -> Result<(usize, &CandidatePlan<T>), BudgetInfeasibleError> {
    assert!(!frontier.is_empty(), "cannot select from an empty frontier");
    let pts = &frontier.points;
    let fastest = argmin(pts, |p| (p.predicted_latency_s, p.predicted_cost));
    let cheapest = argmin(pts, |p| (p.predicted_cost, p.predicted_latency_s));
    let infeasible = |nearest: usize| {
        let p = &pts[nearest];
        BudgetInfeasibleError {
            preference: preference.to_string(),
            nearest_index: nearest,
            nearest_cost: p.predicted_cost.as_f64(),
            nearest_latency_s: p.predicted_latency_s.as_f64(),
        }
    };
    let idx = match preference {
        Preference::Knee => frontier.knee_index,
        Preference::Fastest => fastest,
        Preference::Cheapest => cheapest,
        Preference::CostBudget(x) => {
            let ok: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].predicted_cost.as_f64() <= x).collect();
            ok.into_iter()
                .min_by(|&a, &b| cmp_pair(
                    (pts[a].predicted_latency_s, pts[a].predicted_cost),
                    (pts[b].predicted_latency_s, pts[b].predicted_cost),
                ))
                .ok_or_else(|| infeasible(cheapest))?
        }
        Preference::LatencyBudget(y) => {
            let ok: Vec<usize> =
                (0..pts.len()).filter(|&i| pts[i].predicted_latency_s.as_f64() <= y).collect();
            ok.into_iter()
                .min_by(|&a, &b| cmp_pair(
                    (pts[a].predicted_cost, pts[a].predicted_latency_s),
                    (pts[b].predicted_cost, pts[b].predicted_latency_s),
                ))
                .ok_or_else(|| infeasible(fastest))?
        }
    };
    Ok((idx, &pts[idx]))
}

fn cmp_pair<T: Scalar>(a: (T, T), b: (T, T)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
}

fn argmin<T: Scalar>(pts: &[CandidatePlan<T>], key: impl Fn(&CandidatePlan<T>) -> (T, T)) -> usize {
    (0..pts.len())
        .min_by(|&a, &b| cmp_pair(key(&pts[a]), key(&pts[b])))
        .expect("non-empty")
}

/// Serializes the stage map as an ordered list of `{stage, ...config}`.
mod configs_as_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::cost::{PlanConfigs, StageConfig};
    use crate::plan::StageId;

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Entry {
        stage: StageId,
        #[serde(flatten)]
        config: StageConfig,
    }

    #[derive(Serialize)]
    struct EntryRef<'a> {
        stage: StageId,
        #[serde(flatten)]
        config: &'a StageConfig,
    }

    pub fn serialize<S: Serializer>(configs: &PlanConfigs, s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<EntryRef<'_>> = configs
            .iter()
            .map(|(&stage, config)| EntryRef { stage, config })
            .collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PlanConfigs, D::Error> {
        let list = Vec::<Entry>::deserialize(d)?;
        Ok(list.into_iter().map(|e| (e.stage, e.config)).collect())
    }
}
