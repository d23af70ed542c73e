//! Iterative decoupling: alternating greedy sweeps over neurons and samples.
//!
//! Each iteration first visits every neuron in index order and moves it to
//! the module that maximizes `L` (committing immediately, so later neurons
//! see earlier moves), then does the same for every sample against the
//! updated neuron partition. A move is taken only when it strictly improves
//! `L`; ties stay put, and among non-current ties the lowest module wins.
//! The loop stops after an iteration with no reassignment.

use serde::{Deserialize, Serialize};

use crate::baselines::{kmeans, pca_fit_transform, KMEANS_MAX_ITERS};
use crate::error::{Error, Result};
use crate::matrix::ActivationMatrix;
use crate::objective::{all_module_sums, block_sums, Axis, ObjectiveState, ObjectiveValue, Partition};
use crate::rng::{self, Rng64};
use rand::seq::SliceRandom;
use rand::RngCore;

/// Candidate moves must beat the current `L` by this relative margin, which
/// keeps rounding noise from registering as an improvement.
pub const IMPROVEMENT_RTOL: f64 = 1e-12;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_PCA_DIMS: usize = 50;
pub const DEFAULT_RESTARTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    RandomBalanced,
    KmeansPca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterDConfig {
    pub k: usize,
    pub init: InitMode,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Capped at `min(N, M)` when larger.
    pub pca_dims: usize,
}

impl IterDConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            init: InitMode::KmeansPca,
            restarts: DEFAULT_RESTARTS,
            max_iters: DEFAULT_MAX_ITERS,
            seed: 42,
            pca_dims: DEFAULT_PCA_DIMS,
        }
    }

    pub fn validate(&self, m: &ActivationMatrix) -> Result<()> {
        let limit = m.n_neurons().min(m.n_samples());
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if self.k > limit {
            return Err(Error::TooManyModules { k: self.k, limit });
        }
        if self.restarts == 0 || self.max_iters == 0 || self.pca_dims == 0 {
            return Err(Error::InvalidConfig(
                "restarts, max_iters and pca_dims must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub xi: f64,
    #[serde(rename = "B")]
    pub balance: f64,
    pub reassignments: usize,
    pub neuron_moves: usize,
    pub sample_moves: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxItersReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterDTrace {
    /// Objective of the starting partition.
    pub initial: ObjectiveValue,
    pub records: Vec<IterationRecord>,
    pub status: Status,
}

impl IterDTrace {
    /// `L` before the first iteration followed by `L` after each iteration.
    pub fn l_sequence(&self) -> Vec<f64> {
        std::iter::once(self.initial.l).chain(self.records.iter().map(|r| r.l)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub partition: Partition,
    pub objective: ObjectiveValue,
    pub trace: IterDTrace,
    /// Index of the winning restart.
    pub restart: usize,
}

fn require_normalized(m: &ActivationMatrix) -> Result<()> {
    if m.is_normalized() {
        Ok(())
    } else {
        Err(Error::NotNormalized)
    }
}

/// Builds the starting partition for one restart.
pub fn init_partition(m: &ActivationMatrix, cfg: &IterDConfig, rng: &mut Rng64) -> Result<Partition> {
    require_normalized(m)?;
    cfg.validate(m)?;
    match cfg.init {
        InitMode::RandomBalanced => Ok(random_balanced(m.n_neurons(), m.n_samples(), cfg.k, rng)),
        InitMode::KmeansPca => kmeans_pca(m, cfg, rng),
    }
}

/// Round-robin over a seeded shuffle on each axis.
fn random_balanced(n: usize, m: usize, k: usize, rng: &mut Rng64) -> Partition {
    let mut deal = |len: usize| {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        let mut assign = vec![0; len];
        for (slot, &i) in order.iter().enumerate() {
            assign[i] = slot % k;
        }
        assign
    };
    let neurons = deal(n);
    let samples = deal(m);
    Partition::new(k, neurons, samples).expect("round-robin fills every module")
}

/// Neurons by K-Means on PCA-reduced rows; each sample to the module with the
/// highest mean activation over its neurons.
fn kmeans_pca(m: &ActivationMatrix, cfg: &IterDConfig, rng: &mut Rng64) -> Result<Partition> {
    let (n, s) = m.values().dim();
    let dims = cfg.pca_dims.min(n).min(s);
    let (_, reduced) = pca_fit_transform(m.values(), dims)?;
    let clusters = kmeans(&reduced, cfg.k, rng.next_u64(), KMEANS_MAX_ITERS)?;

    let neuron_assign = clusters.assignment;
    let mut counts = vec![0usize; cfg.k];
    for &c in &neuron_assign {
        counts[c] += 1;
    }
    let mut sample_sums = vec![vec![0.0; cfg.k]; s];
    for (row, &c) in m.values().rows().into_iter().zip(&neuron_assign) {
        for (acc, v) in sample_sums.iter_mut().zip(row) {
            acc[c] += v;
        }
    }
    let sample_assign = sample_sums
        .iter()
        .map(|sums| {
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for (k, (&sum, &count)) in sums.iter().zip(&counts).enumerate() {
                if count == 0 {
                    continue;
                }
                let affinity = sum / count as f64;
                if affinity > best.1 {
                    best = (k, affinity);
                }
            }
            best.0
        })
        .collect();

    let mut p = Partition::new_allow_empty(cfg.k, neuron_assign, sample_assign)?;
    repair_empty_modules(m, &mut p, Axis::Neuron);
    repair_empty_modules(m, &mut p, Axis::Sample);
    p.check_non_empty()?;
    Ok(p)
}

/// While some module is empty on `axis`, moves into it the element of the
/// largest module (lowest id on ties) whose move gives the highest objective
/// (lowest index on ties). The objective here only counts non-empty blocks.
fn repair_empty_modules(m: &ActivationMatrix, p: &mut Partition, axis: Axis) {
    loop {
        let counts = p.counts(axis);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let donor = counts
            .iter()
            .enumerate()
            .fold((0, 0), |best, (k, &c)| if c > best.1 { (k, c) } else { best })
            .0;

        let w = block_sums(m, p);
        let other = p.counts(axis.other());
        let mut best: Option<(usize, f64)> = None;
        for e in p.members(axis, donor) {
            let sums = crate::objective::module_sums(m, p, axis, e);
            let mut w_after = w.clone();
            w_after[donor] -= sums[donor];
            w_after[empty] += sums[empty];
            let mut own = counts.clone();
            own[donor] -= 1;
            own[empty] += 1;
            let score = loose_objective(&w_after, &own, &other);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((e, score));
            }
        }
        let (e, _) = best.expect("donor module has members");
        p.assign(axis, e, empty);
    }
}

/// `ξ·B` over the modules whose block is non-empty.
fn loose_objective(w: &[f64], own: &[usize], other: &[usize]) -> f64 {
    let (mut sum_w, mut sum_p, mut sum_inv, mut live) = (0.0, 0.0, 0.0, 0usize);
    for ((&wk, &a), &b) in w.iter().zip(own).zip(other) {
        let size = (a * b) as f64;
        if size > 0.0 {
            sum_w += wk;
            sum_p += size;
            sum_inv += 1.0 / size;
            live += 1;
        }
    }
    if live == 0 {
        return f64::NEG_INFINITY;
    }
    (sum_w / sum_p) * (live as f64 / sum_inv)
}

/// Greedy pass over every element of `axis`; returns the number of moves.
fn sweep(m: &ActivationMatrix, p: &mut Partition, state: &mut ObjectiveState, axis: Axis) -> usize {
    // Sums against the other axis are fixed for the whole sweep.
    let sums = all_module_sums(m, p, axis);
    let k = p.k();
    let mut moves = 0;
    for (element, row) in sums.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("standard layout");
        let current = state.evaluate().l;
        let mut best = None;
        let mut best_l = current;
        for target in 0..k {
            if target == p.assignment(axis)[element] {
                continue;
            }
            let delta = match state.eval_move(p, axis, element, target, row) {
                Ok(d) => d,
                // Source module would be emptied; no target is admissible.
                Err(Error::InvalidMove { .. }) => break,
                Err(e) => unreachable!("unexpected move error: {e}"),
            };
            let margin = IMPROVEMENT_RTOL * current.abs().max(delta.l_after.abs());
            if delta.l_after > best_l && delta.l_after - current > margin {
                best_l = delta.l_after;
                best = Some(delta);
            }
        }
        if let Some(delta) = best {
            state.commit_move(p, &delta).expect("delta evaluated on the current state");
            moves += 1;
        }
    }
    moves
}

/// One full iteration: neuron sweep then sample sweep. The state is rebuilt
/// from scratch afterwards so aggregate drift never outlives an iteration.
pub fn run_iteration(
    m: &ActivationMatrix,
    p: &mut Partition,
    state: &mut ObjectiveState,
    iteration: usize,
) -> Result<IterationRecord> {
    let neuron_moves = sweep(m, p, state, Axis::Neuron);
    let sample_moves = sweep(m, p, state, Axis::Sample);
    *state = ObjectiveState::build(m, p)?;
    let v = state.evaluate();
    Ok(IterationRecord {
        iteration,
        l: v.l,
        xi: v.xi,
        balance: v.balance,
        reassignments: neuron_moves + sample_moves,
        neuron_moves,
        sample_moves,
    })
}

/// Runs iterations from `init` until a fixed point or `max_iters`.
///
/// Unlike [`discover`], this accepts unnormalized matrices; the objective is
/// well defined for any finite values.
pub fn optimize(m: &ActivationMatrix, init: Partition, max_iters: usize) -> Result<(Partition, ObjectiveValue, IterDTrace)> {
    let mut p = init;
    let mut state = ObjectiveState::build(m, &p)?;
    let initial = state.evaluate();
    let mut records = Vec::new();
    let mut status = Status::MaxItersReached;
    for t in 1..=max_iters {
        let record = run_iteration(m, &mut p, &mut state, t)?;
        records.push(record);
        if record.reassignments == 0 {
            status = Status::Converged;
            break;
        }
    }
    let value = state.evaluate();
    Ok((p, value, IterDTrace { initial, records, status }))
}

/// Optimizes from each starting partition and keeps the highest final `L`
/// (earliest on ties).
pub fn discover_from(m: &ActivationMatrix, inits: Vec<Partition>, max_iters: usize) -> Result<Discovery> {
    if inits.is_empty() {
        return Err(Error::InvalidConfig("at least one starting partition is required".into()));
    }
    let runs = map_maybe_parallel(inits, |p| optimize(m, p, max_iters));
    select_best(runs)
}

/// Runs `cfg.restarts` seeded restarts. Restart `r` draws from stream `r` of
/// the generator seeded with `cfg.seed`.
pub fn discover(m: &ActivationMatrix, cfg: &IterDConfig) -> Result<Discovery> {
    require_normalized(m)?;
    cfg.validate(m)?;
    let runs = map_maybe_parallel((0..cfg.restarts).collect(), |r| {
        let mut rng = rng::seeded_stream(cfg.seed, r as u64);
        let init = init_partition(m, cfg, &mut rng)?;
        optimize(m, init, cfg.max_iters)
    });
    select_best(runs)
}

fn select_best(runs: Vec<Result<(Partition, ObjectiveValue, IterDTrace)>>) -> Result<Discovery> {
    let mut best: Option<Discovery> = None;
    for (restart, run) in runs.into_iter().enumerate() {
        let (partition, objective, trace) = run?;
        if best.as_ref().is_none_or(|b| objective.l > b.objective.l) {
            best = Some(Discovery { partition, objective, trace, restart });
        }
    }
    Ok(best.expect("at least one run"))
}

#[cfg(feature = "parallel")]
fn map_maybe_parallel<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_maybe_parallel<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}
