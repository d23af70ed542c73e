//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A [`Demo`] holds one planted matrix and a partition being optimized. The
//! page steps the optimizer one iteration at a time (or runs it to the end)
//! and redraws the matrix with rows and columns grouped by module, the
//! `K x K` block heatmap, and the curve of `L`.

use modforge::iterd::{init_partition, run_iteration};
use modforge::metrics::block_heatmap;
use modforge::objective::Axis;
use modforge::rng::seeded;
use modforge::synth::generate;
use modforge::{
    adjusted_rand_index, evaluate, zscore_normalize, ActivationMatrix, InitMode, IterDConfig, ObjectiveState,
    Partition, PlantedSpec, PlantedTruth,
};
use ndarray::Array2;
use wasm_bindgen::prelude::*;

fn js_err(e: modforge::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    matrix: ActivationMatrix,
    truth: PlantedTruth,
    partition: Partition,
    state: ObjectiveState,
    l_history: Vec<f64>,
    iteration: usize,
    converged: bool,
}

impl Demo {
    pub fn create(
        n: usize,
        m: usize,
        k: usize,
        signal: f64,
        noise: f64,
        seed: u64,
        kmeans_init: bool,
    ) -> modforge::Result<Demo> {
        let (raw, truth) = generate(&PlantedSpec::new(n, m, k, signal, noise, seed))?;
        let matrix = zscore_normalize(&raw)?.0;
        let mut cfg = IterDConfig::new(k);
        cfg.init = if kmeans_init { InitMode::KmeansPca } else { InitMode::RandomBalanced };
        cfg.pca_dims = cfg.pca_dims.min(10);
        let partition = init_partition(&matrix, &cfg, &mut seeded(seed.wrapping_add(1)))?;
        let state = ObjectiveState::build(&matrix, &partition)?;
        let l_history = vec![state.evaluate().l];
        Ok(Demo { matrix, truth, partition, state, l_history, iteration: 0, converged: false })
    }

    /// Runs one iteration; returns the number of reassignments.
    pub fn advance(&mut self) -> modforge::Result<usize> {
        if self.converged {
            return Ok(0);
        }
        self.iteration += 1;
        let record = run_iteration(&self.matrix, &mut self.partition, &mut self.state, self.iteration)?;
        self.l_history.push(record.l);
        self.converged = record.reassignments == 0;
        Ok(record.reassignments)
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Adjusted Rand index of the neuron and sample partitions against the
    /// planted modules.
    pub fn recovery(&self) -> modforge::Result<(f64, f64)> {
        Ok((
            adjusted_rand_index(self.partition.neuron_assign(), &self.truth.neuron_truth)?,
            adjusted_rand_index(self.partition.sample_assign(), &self.truth.sample_truth)?,
        ))
    }

    pub fn heatmap_values(&self) -> modforge::Result<Vec<f64>> {
        Ok(block_heatmap(&self.matrix, &self.partition)?.into_iter().collect())
    }
}

/// Element indices sorted by module (stable, so ties keep index order).
fn grouped_order(assign: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..assign.len()).collect();
    order.sort_by_key(|&i| assign[i]);
    order
}

#[wasm_bindgen]
impl Demo {
    /// Draws a planted matrix with `k` modules and builds the starting
    /// partition (k-means on PCA features, or a random balanced split).
    #[wasm_bindgen(constructor)]
    pub fn new(
        n: usize,
        m: usize,
        k: usize,
        signal: f64,
        noise: f64,
        seed: u32,
        kmeans_init: bool,
    ) -> Result<Demo, JsError> {
        Self::create(n, m, k, signal, noise, u64::from(seed), kmeans_init).map_err(js_err)
    }

    /// One iteration: a neuron sweep then a sample sweep.
    pub fn step(&mut self) -> Result<usize, JsError> {
        self.advance().map_err(js_err)
    }

    /// Iterates until no element moves or `max_iters` more iterations ran.
    pub fn solve(&mut self, max_iters: usize) -> Result<usize, JsError> {
        let mut ran = 0;
        while !self.converged && ran < max_iters {
            self.advance().map_err(js_err)?;
            ran += 1;
        }
        Ok(ran)
    }

    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }

    #[wasm_bindgen(getter)]
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.matrix.n_neurons()
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.matrix.n_samples()
    }

    /// `L` before the first iteration and after each one.
    pub fn l_history(&self) -> Vec<f64> {
        self.l_history.clone()
    }

    /// `[L, xi, B]` of the current partition.
    pub fn objective(&self) -> Vec<f64> {
        let v = self.state.evaluate();
        vec![v.l, v.xi, v.balance]
    }

    /// `[neuron ARI, sample ARI]` against the planted modules.
    pub fn ari(&self) -> Result<Vec<f64>, JsError> {
        self.recovery().map(|(a, b)| vec![a, b]).map_err(js_err)
    }

    /// Row-major values with neurons and samples grouped by current module.
    pub fn grouped_matrix(&self) -> Vec<f32> {
        let rows = grouped_order(self.partition.neuron_assign());
        let cols = grouped_order(self.partition.sample_assign());
        let values = self.matrix.values();
        rows.iter()
            .flat_map(|&u| cols.iter().map(move |&s| values[(u, s)] as f32))
            .collect()
    }

    /// Module sizes along the neuron axis, in module order.
    pub fn neuron_sizes(&self) -> Vec<u32> {
        self.partition.counts(Axis::Neuron).into_iter().map(|c| c as u32).collect()
    }

    /// Module sizes along the sample axis, in module order.
    pub fn sample_sizes(&self) -> Vec<u32> {
        self.partition.counts(Axis::Sample).into_iter().map(|c| c as u32).collect()
    }

    /// Row-major `K x K` mean activations (rows: sample modules).
    pub fn heatmap(&self) -> Result<Vec<f64>, JsError> {
        self.heatmap_values().map_err(js_err)
    }
}

/// `L` of two-module partitions of an `n x m` all-ones matrix, where the
/// first module holds `i` neurons and `round(i·m/n)` samples, for
/// `i = 1..n-1`. The activation term is constant, so the curve is the
/// balance term alone and peaks at the even split.
pub fn balance_values(n: usize, m: usize) -> modforge::Result<Vec<f64>> {
    if n < 2 || m < 2 {
        return Err(modforge::Error::InvalidConfig("need at least 2 neurons and 2 samples".into()));
    }
    let matrix = ActivationMatrix::from_values(Array2::from_elem((n, m), 1.0))?;
    (1..n)
        .map(|i| {
            let s = ((i * m + n / 2) / n).clamp(1, m - 1);
            let neurons = (0..n).map(|u| usize::from(u >= i)).collect();
            let samples = (0..m).map(|j| usize::from(j >= s)).collect();
            let p = Partition::new(2, neurons, samples)?;
            Ok(evaluate(&matrix, &p)?.l)
        })
        .collect()
}

#[wasm_bindgen]
pub fn balance_curve(n: usize, m: usize) -> Result<Vec<f64>, JsError> {
    balance_values(n, m).map_err(js_err)
}
