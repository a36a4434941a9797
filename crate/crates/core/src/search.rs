//! Frontier search over stage configurations: the incremental, group-wise
//! pruned search and an exhaustive oracle over the same space.
//!
//! Stages are placed in topological order. A partial plan is summarised by
//! its accumulated cost, the latest finish among terminal stages already
//! placed, and the state of every *open* stage (placed, with a consumer
//! still to come): workers, storage, partition count and finish time.
//! Everything a later stage can observe is in that state, so two partial
//! plans with the same open-stage layout compete only on
//! `(cost, closed latency, open finish times)`. For a chain the layout is the
//! newest stage's `(workers, storage)` and the vector is `(cost, finish)`.
//!
//! Multi-producer stages set every producer's partition count to their own
//! worker count; a producer whose other consumer already fixed a different
//! count is discarded. Terminal stages write to the base storage with a
//! single output partition.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use crate::cost::{
    estimate_stage, predict_plan, scan_splits, PlanConfigs, StageConfig, StageEstimate, Upstream,
};
use crate::error::{ModelError, SearchError};
use crate::pareto::{dominates_vec, pareto_indices, CandidatePlan, ParetoFrontier};
use crate::plan::{topological_stage_order, LogicalPlan, OperatorKind, StageId};
use crate::profile::{CalibrationProfile, StorageService};
use crate::scalar::Scalar;
use crate::space::{aligned, gen_stage_space};

/// Result of a search plus the per-stage pruning statistics.
#[derive(Debug, Clone)]
pub struct SearchOutcome<T> {
    pub frontier: ParetoFrontier<T>,
    pub stage_order: Vec<StageId>,
    /// Plans kept after each stage, in `stage_order`.
    pub pruned_sizes: Vec<usize>,
    /// Cross-product size of the per-stage spaces.
    pub space_size: u128,
    /// Candidate partial plans priced during the search.
    pub evaluated: u64,
}

impl<T> SearchOutcome<T> {
    pub fn max_pruned_size(&self) -> usize {
        self.pruned_sizes.iter().copied().max().unwrap_or(0)
    }
}

pub fn incremental_pareto_search<T: Scalar>(
    plan: &LogicalPlan,
    profile: &CalibrationProfile<T>,
) -> Result<ParetoFrontier<T>, SearchError> {
    incremental_search_with_stats(plan, profile).map(|o| o.frontier)
}

/// Product of the per-stage space sizes.
pub fn space_size<T: Scalar>(plan: &LogicalPlan, profile: &CalibrationProfile<T>) -> Result<u128, SearchError> {
    Ok(Ctx::new(plan, profile)?.space_size())
}

#[derive(Debug, Clone, Copy)]
struct Open<T> {
    pos: usize,
    workers: u32,
    storage: u16,
    /// 0 while no consumer is placed.
    partitions: u32,
    finish: T,
}

#[derive(Debug, Clone)]
struct State<T> {
    cost: T,
    closed: T,
    open: Vec<Open<T>>,
}

impl<T: Scalar> State<T> {
    fn start() -> Self {
        State {
            cost: T::zero(),
            closed: T::zero(),
            open: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Choice {
    workers: u32,
    cores: u32,
    storage: u16,
}

struct Group {
    workers: u32,
    storage: u16,
    cores: Vec<u32>,
}

struct Ctx<'a, T> {
    plan: &'a LogicalPlan,
    profile: &'a CalibrationProfile<T>,
    order: Vec<StageId>,
    /// Producer positions per position.
    producers: Vec<Vec<usize>>,
    /// Consumer positions per position, ascending.
    consumers: Vec<Vec<usize>>,
    /// Whether some terminal stage sits at or before each position.
    closed_seen: Vec<bool>,
    scan_splits: Vec<u64>,
    storages: Vec<StorageService>,
    spaces: Vec<Vec<Group>>,
    cache: HashMap<Vec<u32>, StageEstimate<T>>,
    evaluated: u64,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    fn new(plan: &'a LogicalPlan, profile: &'a CalibrationProfile<T>) -> Result<Self, SearchError> {
        let order = topological_stage_order(plan);
        let mut pos_of = BTreeMap::new();
        for (i, id) in order.iter().enumerate() {
            pos_of.insert(*id, i);
        }
        for id in &order {
            let stage = plan.stage(*id);
            if profile.operator(stage.operator).is_none() {
                return Err(ModelError::OperatorUnprofiled {
                    stage: *id,
                    operator: stage.operator.to_string(),
                }
                .into());
            }
        }
        let producers: Vec<Vec<usize>> = order
            .iter()
            .map(|id| plan.stage(*id).producers.iter().map(|p| pos_of[p]).collect())
            .collect();
        let mut consumers = vec![Vec::new(); order.len()];
        for (c, ps) in producers.iter().enumerate() {
            for &p in ps {
                consumers[p].push(c);
            }
        }
        let mut closed_seen = Vec::with_capacity(order.len());
        let mut seen = false;
        for c in &consumers {
            seen |= c.is_empty();
            closed_seen.push(seen);
        }
        let storages: Vec<StorageService> = profile.storages.keys().cloned().collect();
        let base = storages
            .iter()
            .position(|s| *s == profile.planner.base_storage)
            .expect("validated profile has its base storage") as u16;
        let mut spaces = Vec::with_capacity(order.len());
        let mut splits = Vec::with_capacity(order.len());
        for (i, id) in order.iter().enumerate() {
            let stage = plan.stage(*id);
            let space = gen_stage_space(stage.input_bytes, profile);
            let mut groups = Vec::new();
            for ((w, s), cores) in space.entries {
                let s = storages.iter().position(|x| *x == s).expect("space uses profile storages") as u16;
                if consumers[i].is_empty() && s != base {
                    continue;
                }
                if !cores.is_empty() {
                    groups.push(Group { workers: w, storage: s, cores });
                }
            }
            if groups.is_empty() {
                return Err(SearchError::EmptySpace { stage: *id });
            }
            spaces.push(groups);
            splits.push(if stage.operator == OperatorKind::Scan {
                scan_splits(stage.input_bytes, profile)
            } else {
                0
            });
        }
        Ok(Ctx {
            plan,
            profile,
            order,
            producers,
            consumers,
            closed_seen,
            scan_splits: splits,
            storages,
            spaces,
            cache: HashMap::new(),
            evaluated: 0,
        })
    }

    fn space_size(&self) -> u128 {
        self.spaces
            .iter()
            .map(|g| g.iter().map(|g| g.cores.len() as u128).sum::<u128>())
            .fold(1u128, |a, b| a.saturating_mul(b))
    }

    fn is_terminal(&self, pos: usize) -> bool {
        self.consumers[pos].is_empty()
    }

    /// Producer states of `pos` inside `state`, or `None` when a producer's
    /// partition count is already fixed to something other than `workers`.
    fn producer_states(&self, pos: usize, state: &State<T>, workers: u32) -> Option<Vec<Open<T>>> {
        let mut out = Vec::with_capacity(self.producers[pos].len());
        for &p in &self.producers[pos] {
            let o = state
                .open
                .iter()
                .find(|o| o.pos == p)
                .copied()
                .expect("producers stay open until their last consumer is placed");
            if o.partitions != 0 && o.partitions != workers {
                return None;
            }
            out.push(o);
        }
        Some(out)
    }

    fn per_worker_partitions(&self, pos: usize, workers: u32, producers: &[Open<T>]) -> u64 {
        let w = workers as u64;
        if producers.is_empty() {
            self.scan_splits[pos].div_ceil(w)
        } else {
            producers.iter().map(|o| (o.workers as u64 * w).div_ceil(w)).sum()
        }
    }

    fn estimate(
        &mut self,
        pos: usize,
        choice: Choice,
        producers: &[Open<T>],
    ) -> Result<StageEstimate<T>, ModelError> {
        let mut key = Vec::with_capacity(4 + 2 * producers.len());
        key.extend([pos as u32, choice.workers, choice.cores, choice.storage as u32]);
        for o in producers {
            key.extend([o.workers, o.storage as u32]);
        }
        if let Some(e) = self.cache.get(&key) {
            return Ok(*e);
        }
        let stage = self.plan.stage(self.order[pos]);
        let upstream: Vec<Upstream<'_>> = producers
            .iter()
            .map(|o| Upstream {
                stage: self.plan.stage(self.order[o.pos]),
                workers: o.workers,
                partitions: choice.workers,
                storage: &self.storages[o.storage as usize],
            })
            .collect();
        let config = self.config(choice);
        let est = estimate_stage(stage, &config, &upstream, self.profile)?;
        self.cache.insert(key, est);
        Ok(est)
    }

    fn config(&self, choice: Choice) -> StageConfig {
        StageConfig::new(
            choice.workers,
            choice.cores,
            self.profile.mem_per_core_mb(),
            self.storages[choice.storage as usize].clone(),
        )
    }

    /// Appends stage `pos` with `choice` to `state`. `None` when the choice
    /// breaks partition agreement or alignment, or prices to a non-finite value.
    fn extend(&mut self, pos: usize, state: &State<T>, choice: Choice) -> Result<Option<State<T>>, ModelError> {
        let Some(producers) = self.producer_states(pos, state, choice.workers) else {
            return Ok(None);
        };
        if !aligned(self.per_worker_partitions(pos, choice.workers, &producers), choice.cores) {
            return Ok(None);
        }
        self.evaluated += 1;
        let est = self.estimate(pos, choice, &producers)?;
        let start = producers.iter().map(|o| o.finish).fold(T::zero(), T::max);
        let finish = start + est.time.t_worker_s;
        let cost = state.cost + est.cost.c_stage;
        if !finish.is_finite() || !cost.is_finite() {
            return Ok(None);
        }
        let mut open = Vec::with_capacity(state.open.len() + 1);
        for o in &state.open {
            if self.producers[pos].contains(&o.pos) {
                let last = *self.consumers[o.pos].last().expect("producer has consumers");
                if last != pos {
                    open.push(Open {
                        partitions: choice.workers,
                        ..*o
                    });
                }
            } else {
                open.push(*o);
            }
        }
        let mut closed = state.closed;
        if self.is_terminal(pos) {
            closed = closed.max(finish);
        } else {
            open.push(Open {
                pos,
                workers: choice.workers,
                storage: choice.storage,
                partitions: 0,
                finish,
            });
        }
        Ok(Some(State { cost, closed, open }))
    }

    /// Objective vector a partial plan competes on after placing `pos`.
    fn objectives(&self, pos: usize, state: &State<T>) -> Vec<T> {
        let mut v = Vec::with_capacity(2 + state.open.len());
        v.push(state.cost);
        if self.closed_seen[pos] {
            v.push(state.closed);
        }
        v.extend(state.open.iter().map(|o| o.finish));
        v
    }

    /// Materialises configurations from per-position choices.
    fn configs(&self, choices: &[Choice]) -> PlanConfigs {
        let mut out = PlanConfigs::new();
        for (pos, &choice) in choices.iter().enumerate() {
            let mut config = self.config(choice);
            config.partitions = if self.is_terminal(pos) {
                Some(1)
            } else {
                self.consumers[pos]
                    .first()
                    .and_then(|&c| choices.get(c))
                    .map(|c| c.workers)
            };
            out.insert(self.order[pos], config);
        }
        out
    }

    fn candidate(&self, configs: PlanConfigs, state: &State<T>) -> Result<CandidatePlan<T>, SearchError> {
        let breakdown = predict_plan(self.plan, &configs, self.profile)?;
        debug_assert_eq!(breakdown.total_cost, state.cost);
        debug_assert_eq!(breakdown.total_latency_s, state.closed);
        Ok(CandidatePlan {
            stage_configs: configs,
            predicted_latency_s: state.closed,
            predicted_cost: state.cost,
            breakdown: Some(breakdown),
        })
    }
}

struct Node<T> {
    parent: u32,
    choice: Choice,
    state: State<T>,
}

fn path<T>(arenas: &[Vec<Node<T>>], pos: usize, idx: usize) -> Vec<Choice> {
    let mut out = vec![Choice { workers: 0, cores: 0, storage: 0 }; pos + 1];
    let mut idx = idx;
    for p in (0..=pos).rev() {
        let n = &arenas[p][idx];
        out[p] = n.choice;
        idx = n.parent as usize;
    }
    out
}

fn cmp_vec<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).expect("objectives are finite") {
            Ordering::Equal => {}
            o => return o,
        }
    }
    Ordering::Equal
}

/// Nondominated indices of `vecs`, lexicographically ascending. Exact
/// duplicates keep the index `tie` orders first.
fn nondominated<T: Scalar>(vecs: &[Vec<T>], mut tie: impl FnMut(usize, usize) -> Ordering) -> Vec<usize> {
    let dims = vecs.first().map_or(0, Vec::len);
    if dims == 2 {
        let points: Vec<(T, T)> = vecs.iter().map(|v| (v[0], v[1])).collect();
        return pareto_indices(&points, tie);
    }
    let mut order: Vec<usize> = (0..vecs.len()).collect();
    order.sort_by(|&i, &j| cmp_vec(&vecs[i], &vecs[j]).then_with(|| tie(i, j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        // Lexicographic order puts every dominator before what it dominates.
        let beaten = kept
            .iter()
            .any(|&k| vecs[k] == vecs[i] || dominates_vec(&vecs[k], &vecs[i]));
        if !beaten {
            kept.push(i);
        }
    }
    kept
}

/// Incremental search with pruning statistics.
pub fn incremental_search_with_stats<T: Scalar>(
    plan: &LogicalPlan,
    profile: &CalibrationProfile<T>,
) -> Result<SearchOutcome<T>, SearchError> {
    let mut ctx = Ctx::new(plan, profile)?;
    let n = ctx.order.len();
    let cap = profile.planner.local_space_cap;
    let root = State::start();
    let mut arenas: Vec<Vec<Node<T>>> = Vec::with_capacity(n);
    let mut pruned_sizes = Vec::with_capacity(n);

    for pos in 0..n {
        let groups = std::mem::take(&mut ctx.spaces[pos]);
        let mut arena: Vec<Node<T>> = Vec::new();
        for g in &groups {
            // Candidates of this (workers, storage) group, split further by
            // the layout of the other open stages.
            let mut sub: BTreeMap<Vec<u32>, Vec<Node<T>>> = BTreeMap::new();
            let parents: Vec<(u32, &State<T>)> = match pos {
                0 => vec![(u32::MAX, &root)],
                _ => arenas[pos - 1]
                    .iter()
                    .enumerate()
                    .map(|(i, node)| (i as u32, &node.state))
                    .collect(),
            };
            for &(parent, state) in &parents {
                for &cores in &g.cores {
                    let choice = Choice {
                        workers: g.workers,
                        cores,
                        storage: g.storage,
                    };
                    let Some(next) = ctx.extend(pos, state, choice)? else {
                        continue;
                    };
                    let key: Vec<u32> = next
                        .open
                        .iter()
                        .flat_map(|o| [o.pos as u32, o.workers, o.storage as u32, o.partitions])
                        .collect();
                    sub.entry(key).or_default().push(Node {
                        parent,
                        choice,
                        state: next,
                    });
                }
            }
            for (_, nodes) in sub {
                if nodes.len() > cap {
                    return Err(SearchError::LocalSpaceCap {
                        stage: ctx.order[pos],
                        size: nodes.len(),
                        cap,
                    });
                }
                let vecs: Vec<Vec<T>> = nodes.iter().map(|nd| ctx.objectives(pos, &nd.state)).collect();
                let keep = {
                    let encode = |nd: &Node<T>| {
                        let mut choices = if pos == 0 {
                            Vec::new()
                        } else {
                            path(&arenas, pos - 1, nd.parent as usize)
                        };
                        choices.push(nd.choice);
                        ctx.configs(&choices)
                    };
                    nondominated(&vecs, |i, j| encode(&nodes[i]).cmp(&encode(&nodes[j])))
                };
                let mut slots: Vec<Option<Node<T>>> = nodes.into_iter().map(Some).collect();
                arena.extend(keep.into_iter().map(|i| slots[i].take().expect("kept once")));
            }
        }
        ctx.spaces[pos] = groups;
        if arena.is_empty() {
            return Err(SearchError::NoFeasiblePlan);
        }
        pruned_sizes.push(arena.len());
        arenas.push(arena);
    }

    let last = &arenas[n - 1];
    let points: Vec<(T, T)> = last.iter().map(|nd| (nd.state.cost, nd.state.closed)).collect();
    let encode = |i: usize| ctx.configs(&path(&arenas, n - 1, i));
    let keep = pareto_indices(&points, |i, j| encode(i).cmp(&encode(j)));
    let mut plans = Vec::with_capacity(keep.len());
    for i in keep {
        plans.push(ctx.candidate(encode(i), &last[i].state)?);
    }
    Ok(SearchOutcome {
        frontier: ParetoFrontier::from_plans(plans),
        stage_order: ctx.order.clone(),
        pruned_sizes,
        space_size: ctx.space_size(),
        evaluated: ctx.evaluated,
    })
}

/// Online nondominated archive, ascending cost with strictly falling latency.
struct Archive<T> {
    points: Vec<(T, T, PlanConfigs)>,
}

impl<T: Scalar> Archive<T> {
    fn offer(&mut self, cost: T, latency: T, configs: impl FnOnce() -> PlanConfigs) {
        // Last point with cost <= `cost` has the lowest latency among them.
        let at = self.points.partition_point(|p| p.0 <= cost);
        if at > 0 {
            let prev = &self.points[at - 1];
            if prev.1 < latency || (prev.1 == latency && prev.0 < cost) {
                return;
            }
            if prev.0 == cost && prev.1 == latency {
                let configs = configs();
                if configs < prev.2 {
                    self.points[at - 1].2 = configs;
                }
                return;
            }
        }
        let end = self.points[at..]
            .iter()
            .position(|p| p.1 < latency)
            .map_or(self.points.len(), |k| at + k);
        let mut start = at;
        // An equal-cost point with higher latency sits just before `at`.
        while start > 0 && self.points[start - 1].0 == cost && self.points[start - 1].1 > latency {
            start -= 1;
        }
        self.points.splice(start..end, [(cost, latency, configs())]);
    }
}

/// Enumerates every complete plan of the heuristic space (with partition
/// agreement and alignment) and keeps the nondominated ones. Refuses spaces
/// larger than `space_cap`.
pub fn exhaustive_search<T: Scalar>(
    plan: &LogicalPlan,
    profile: &CalibrationProfile<T>,
    space_cap: u128,
) -> Result<ParetoFrontier<T>, SearchError> {
    let mut ctx = Ctx::new(plan, profile)?;
    let size = ctx.space_size();
    if size > space_cap {
        return Err(SearchError::SpaceTooLarge { size, cap: space_cap });
    }
    let spaces: Vec<Vec<Choice>> = ctx
        .spaces
        .iter()
        .map(|groups| {
            groups
                .iter()
                .flat_map(|g| {
                    g.cores.iter().map(|&cores| Choice {
                        workers: g.workers,
                        cores,
                        storage: g.storage,
                    })
                })
                .collect()
        })
        .collect();
    let mut archive = Archive { points: Vec::new() };
    let mut choices = Vec::with_capacity(spaces.len());
    dfs(&mut ctx, &spaces, &State::start(), &mut choices, &mut archive)?;
    let mut plans = Vec::with_capacity(archive.points.len());
    for (cost, latency, configs) in archive.points {
        let state = State {
            cost,
            closed: latency,
            open: Vec::new(),
        };
        plans.push(ctx.candidate(configs, &state)?);
    }
    if plans.is_empty() {
        return Err(SearchError::NoFeasiblePlan);
    }
    Ok(ParetoFrontier::from_plans(plans))
}

fn dfs<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    spaces: &[Vec<Choice>],
    state: &State<T>,
    choices: &mut Vec<Choice>,
    archive: &mut Archive<T>,
) -> Result<(), SearchError> {
    let pos = choices.len();
    if pos == spaces.len() {
        archive.offer(state.cost, state.closed, || ctx.configs(choices));
        return Ok(());
    }
    for &choice in &spaces[pos] {
        if let Some(next) = ctx.extend(pos, state, choice)? {
            choices.push(choice);
            dfs(ctx, spaces, &next, choices, archive)?;
            choices.pop();
        }
    }
    Ok(())
}
