//! The dual-partition objective `L(F) = ξ(F) · B(F)`.
//!
//! `ξ` is the mean activation over all within-module (neuron, sample) pairs and
//! `B = K / Σ_k 1/(|U_k||S_k|)` is the harmonic mean of the block sizes.
//! [`ObjectiveState`] caches the per-module aggregates so a candidate move of a
//! single neuron or sample is scored in O(1) from its per-module sums.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ActivationMatrix;

/// Which side of the activation matrix an element lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Neuron,
    Sample,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::Neuron => Axis::Sample,
            Axis::Sample => Axis::Neuron,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Neuron => "neuron",
            Axis::Sample => "sample",
        })
    }
}

/// Assignment of every neuron and every sample to one of `k` modules.
///
/// Completeness and exclusivity hold by construction; non-emptiness is
/// checked by [`Partition::new`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    k: usize,
    neuron_assign: Vec<usize>,
    sample_assign: Vec<usize>,
}

impl Partition {
    pub fn new(k: usize, neuron_assign: Vec<usize>, sample_assign: Vec<usize>) -> Result<Self> {
        let p = Self::new_allow_empty(k, neuron_assign, sample_assign)?;
        p.check_non_empty()?;
        Ok(p)
    }

    /// Range-checked but possibly with empty modules; used while repairing
    /// an initialization.
    pub(crate) fn new_allow_empty(
        k: usize,
        neuron_assign: Vec<usize>,
        sample_assign: Vec<usize>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidPartition("K must be at least 1".into()));
        }
        for (axis, assign) in [(Axis::Neuron, &neuron_assign), (Axis::Sample, &sample_assign)] {
            if let Some((i, &c)) = assign.iter().enumerate().find(|(_, &c)| c >= k) {
                return Err(Error::InvalidPartition(format!(
                    "{axis} {i} assigned to module {c}, but K = {k}"
                )));
            }
        }
        Ok(Self { k, neuron_assign, sample_assign })
    }

    pub(crate) fn check_non_empty(&self) -> Result<()> {
        for axis in [Axis::Neuron, Axis::Sample] {
            if let Some(module) = self.counts(axis).iter().position(|&c| c == 0) {
                return Err(Error::EmptyModule { axis, module });
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neuron_assign(&self) -> &[usize] {
        &self.neuron_assign
    }

    pub fn sample_assign(&self) -> &[usize] {
        &self.sample_assign
    }

    pub fn assignment(&self, axis: Axis) -> &[usize] {
        match axis {
            Axis::Neuron => &self.neuron_assign,
            Axis::Sample => &self.sample_assign,
        }
    }

    pub(crate) fn assign(&mut self, axis: Axis, element: usize, module: usize) {
        match axis {
            Axis::Neuron => self.neuron_assign[element] = module,
            Axis::Sample => self.sample_assign[element] = module,
        }
    }

    /// Number of elements per module on `axis`.
    pub fn counts(&self, axis: Axis) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &c in self.assignment(axis) {
            counts[c] += 1;
        }
        counts
    }

    /// Element indices of module `module` on `axis`, ascending.
    pub fn members(&self, axis: Axis, module: usize) -> Vec<usize> {
        self.assignment(axis)
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == module).then_some(i))
            .collect()
    }

    /// Errors unless the partition's lengths match the matrix.
    pub fn check_dims(&self, m: &ActivationMatrix) -> Result<()> {
        if self.neuron_assign.len() != m.n_neurons() || self.sample_assign.len() != m.n_samples() {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} neurons x {} samples, matrix is {} x {}",
                self.neuron_assign.len(),
                self.sample_assign.len(),
                m.n_neurons(),
                m.n_samples()
            )));
        }
        Ok(())
    }

    /// The same partition seen from the transposed matrix.
    pub fn transposed(&self) -> Partition {
        Partition {
            k: self.k,
            neuron_assign: self.sample_assign.clone(),
            sample_assign: self.neuron_assign.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub xi: f64,
    #[serde(rename = "B")]
    pub balance: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl ObjectiveValue {
    fn from_aggregates(sum_w: f64, sum_p: f64, sum_inv_p: f64, k: usize) -> Self {
        let xi = sum_w / sum_p;
        let balance = k as f64 / sum_inv_p;
        ObjectiveValue { xi, balance, l: xi * balance }
    }
}

/// A scored candidate move. Only [`ObjectiveState::commit_move`] consumes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveDelta {
    pub kind: Axis,
    pub element: usize,
    pub from_module: usize,
    pub to_module: usize,
    pub l_after: f64,
    removed: f64,
    added: f64,
    version: u64,
}

impl MoveDelta {
    pub fn is_noop(&self) -> bool {
        self.from_module == self.to_module
    }
}

/// Per-module aggregates for one partition of one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveState {
    block_sums: Vec<f64>,
    neuron_counts: Vec<usize>,
    sample_counts: Vec<usize>,
    sum_w: f64,
    sum_p: f64,
    sum_inv_p: f64,
    version: u64,
}

impl ObjectiveState {
    /// Computes all aggregates from scratch in O(N·M).
    pub fn build(m: &ActivationMatrix, p: &Partition) -> Result<Self> {
        p.check_dims(m)?;
        p.check_non_empty()?;
        let block_sums = block_sums(m, p);
        let neuron_counts = p.counts(Axis::Neuron);
        let sample_counts = p.counts(Axis::Sample);
        let sum_w = block_sums.iter().sum();
        let (sum_p, sum_inv_p) = size_sums(&neuron_counts, &sample_counts);
        Ok(Self { block_sums, neuron_counts, sample_counts, sum_w, sum_p, sum_inv_p, version: 0 })
    }

    pub fn k(&self) -> usize {
        self.block_sums.len()
    }

    /// Within-block sums `W_k`.
    pub fn block_sums(&self) -> &[f64] {
        &self.block_sums
    }

    pub fn counts(&self, axis: Axis) -> &[usize] {
        match axis {
            Axis::Neuron => &self.neuron_counts,
            Axis::Sample => &self.sample_counts,
        }
    }

    pub fn sum_w(&self) -> f64 {
        self.sum_w
    }

    /// `Σ_k n_k m_k`.
    pub fn sum_p(&self) -> f64 {
        self.sum_p
    }

    /// `Σ_k 1/(n_k m_k)`.
    pub fn sum_inv_p(&self) -> f64 {
        self.sum_inv_p
    }

    pub fn evaluate(&self) -> ObjectiveValue {
        ObjectiveValue::from_aggregates(self.sum_w, self.sum_p, self.sum_inv_p, self.k())
    }

    /// Scores moving `element` on `axis` to module `target`.
    ///
    /// `module_sums[k]` must hold the element's activation summed over the
    /// other axis's module `k` (see [`module_sums`]). The state is not
    /// modified. Moves that would empty a module yield [`Error::InvalidMove`].
    pub fn eval_move(
        &self,
        p: &Partition,
        axis: Axis,
        element: usize,
        target: usize,
        module_sums: &[f64],
    ) -> Result<MoveDelta> {
        let from = p.assignment(axis)[element];
        let mut delta = MoveDelta {
            kind: axis,
            element,
            from_module: from,
            to_module: target,
            l_after: 0.0,
            removed: 0.0,
            added: 0.0,
            version: self.version,
        };
        if target == from {
            delta.l_after = self.evaluate().l;
            return Ok(delta);
        }
        let moved = self.moved_aggregates(axis, from, target, module_sums[from], module_sums[target])?;
        delta.l_after = ObjectiveValue::from_aggregates(moved.0, moved.1, moved.2, self.k()).l;
        delta.removed = module_sums[from];
        delta.added = module_sums[target];
        Ok(delta)
    }

    /// Like [`eval_move`](Self::eval_move) for a neuron, computing its
    /// per-module sums on demand in O(M).
    pub fn eval_neuron_move(
        &self,
        m: &ActivationMatrix,
        p: &Partition,
        neuron: usize,
        target: usize,
    ) -> Result<MoveDelta> {
        let sums = module_sums(m, p, Axis::Neuron, neuron);
        self.eval_move(p, Axis::Neuron, neuron, target, &sums)
    }

    /// Like [`eval_move`](Self::eval_move) for a sample, computing its
    /// per-module sums on demand in O(N).
    pub fn eval_sample_move(
        &self,
        m: &ActivationMatrix,
        p: &Partition,
        sample: usize,
        target: usize,
    ) -> Result<MoveDelta> {
        let sums = module_sums(m, p, Axis::Sample, sample);
        self.eval_move(p, Axis::Sample, sample, target, &sums)
    }

    /// Applies a move scored against this exact state and partition.
    pub fn commit_move(&mut self, p: &mut Partition, delta: &MoveDelta) -> Result<()> {
        if delta.version != self.version || p.assignment(delta.kind)[delta.element] != delta.from_module {
            return Err(Error::StaleMove);
        }
        if delta.is_noop() {
            return Ok(());
        }
        let (from, to) = (delta.from_module, delta.to_module);
        let (sum_w, sum_p, sum_inv_p) =
            self.moved_aggregates(delta.kind, from, to, delta.removed, delta.added)?;
        self.sum_w = sum_w;
        self.sum_p = sum_p;
        self.sum_inv_p = sum_inv_p;
        self.block_sums[from] -= delta.removed;
        self.block_sums[to] += delta.added;
        let counts = match delta.kind {
            Axis::Neuron => &mut self.neuron_counts,
            Axis::Sample => &mut self.sample_counts,
        };
        counts[from] -= 1;
        counts[to] += 1;
        self.version += 1;
        p.assign(delta.kind, delta.element, to);
        Ok(())
    }

    /// Aggregates `(sum_w, sum_p, sum_inv_p)` after moving one element.
    fn moved_aggregates(
        &self,
        axis: Axis,
        from: usize,
        to: usize,
        removed: f64,
        added: f64,
    ) -> Result<(f64, f64, f64)> {
        let (own, other) = match axis {
            Axis::Neuron => (&self.neuron_counts, &self.sample_counts),
            Axis::Sample => (&self.sample_counts, &self.neuron_counts),
        };
        let n_from = own[from] as f64;
        let n_to = own[to] as f64;
        if own[from] < 2 {
            return Err(Error::InvalidMove { axis, module: from });
        }
        let m_from = other[from] as f64;
        let m_to = other[to] as f64;
        let sum_w = self.sum_w - removed + added;
        let sum_p = self.sum_p - m_from + m_to;
        let sum_inv_p = self.sum_inv_p - 1.0 / (n_from * m_from) + 1.0 / ((n_from - 1.0) * m_from)
            - 1.0 / (n_to * m_to)
            + 1.0 / ((n_to + 1.0) * m_to);
        Ok((sum_w, sum_p, sum_inv_p))
    }
}

/// Full O(N·M) evaluation of `L`, `ξ` and `B`.
pub fn evaluate(m: &ActivationMatrix, p: &Partition) -> Result<ObjectiveValue> {
    Ok(ObjectiveState::build(m, p)?.evaluate())
}

fn size_sums(neuron_counts: &[usize], sample_counts: &[usize]) -> (f64, f64) {
    let mut sum_p = 0.0;
    let mut sum_inv_p = 0.0;
    for (&n, &s) in neuron_counts.iter().zip(sample_counts) {
        let size = (n * s) as f64;
        sum_p += size;
        sum_inv_p += 1.0 / size;
    }
    (sum_p, sum_inv_p)
}

/// `W_k = Σ_{u∈U_k, s∈S_k} A[u,s]` for every module.
pub(crate) fn block_sums(m: &ActivationMatrix, p: &Partition) -> Vec<f64> {
    let mut sums = vec![0.0; p.k()];
    for (row, &k) in m.values().rows().into_iter().zip(p.neuron_assign()) {
        sums[k] += row
            .iter()
            .zip(p.sample_assign())
            .filter(|(_, &c)| c == k)
            .map(|(v, _)| v)
            .sum::<f64>();
    }
    sums
}

/// Sums of one element's activations over each module of the other axis:
/// `r[k] = Σ_{s∈S_k} A[u,s]` for a neuron, `c[k] = Σ_{u∈U_k} A[u,s]` for a sample.
pub fn module_sums(m: &ActivationMatrix, p: &Partition, axis: Axis, element: usize) -> Vec<f64> {
    let mut sums = vec![0.0; p.k()];
    match axis {
        Axis::Neuron => {
            for (v, &k) in m.values().row(element).iter().zip(p.sample_assign()) {
                sums[k] += v;
            }
        }
        Axis::Sample => {
            for (v, &k) in m.values().column(element).iter().zip(p.neuron_assign()) {
                sums[k] += v;
            }
        }
    }
    sums
}

/// Per-module sums for every element of `axis` at once (N×K or M×K), one
/// row-major pass over the matrix.
pub fn all_module_sums(m: &ActivationMatrix, p: &Partition, axis: Axis) -> Array2<f64> {
    let values = m.values();
    match axis {
        Axis::Neuron => {
            let mut out = Array2::zeros((m.n_neurons(), p.k()));
            for (row, mut dst) in values.rows().into_iter().zip(out.rows_mut()) {
                for (v, &k) in row.iter().zip(p.sample_assign()) {
                    dst[k] += v;
                }
            }
            out
        }
        Axis::Sample => {
            let mut out = Array2::zeros((m.n_samples(), p.k()));
            for (row, &k) in values.rows().into_iter().zip(p.neuron_assign()) {
                for (s, v) in row.iter().enumerate() {
                    out[(s, k)] += v;
                }
            }
            out
        }
    }
}
