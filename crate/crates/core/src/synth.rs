//! Planted-block activation matrices with known ground truth, and the
//! adjusted Rand index for scoring recovery.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ActivationMatrix, NeuronMeta, SampleMeta};
use crate::rng::{self, BoxMuller};

fn default_layers() -> u32 {
    1
}

fn default_true() -> bool {
    true
}

/// Parameters of a planted-block model: `A[u,s] = mu·[truth(u) = truth(s)] + N(0, sigma²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub mu: f64,
    pub sigma: f64,
    #[serde(default)]
    pub neuron_props: Option<Vec<f64>>,
    #[serde(default)]
    pub sample_props: Option<Vec<f64>>,
    pub seed: u64,
    /// Neurons are spread over this many synthetic layers, in index order.
    #[serde(default = "default_layers")]
    pub layers: u32,
    /// Label samples with their planted module (`"module_<k>"`).
    #[serde(default = "default_true")]
    pub labels: bool,
}

impl PlantedSpec {
    pub fn new(n: usize, m: usize, k: usize, mu: f64, sigma: f64, seed: u64) -> Self {
        Self {
            n,
            m,
            k,
            mu,
            sigma,
            neuron_props: None,
            sample_props: None,
            seed,
            layers: 1,
            labels: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return bad("n, m and k must be positive".into());
        }
        if self.k > self.n.min(self.m) {
            return Err(Error::TooManyModules { k: self.k, limit: self.n.min(self.m) });
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if self.layers == 0 {
            return bad("layers must be positive".into());
        }
        for props in [&self.neuron_props, &self.sample_props].into_iter().flatten() {
            if props.len() != self.k {
                return bad(format!("proportions have length {}, expected {}", props.len(), self.k));
            }
            if props.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return bad("proportions must be non-negative".into());
            }
            let total: f64 = props.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("proportions sum to {total}, expected 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub neuron_truth: Vec<usize>,
    pub sample_truth: Vec<usize>,
}

/// Module sizes by largest-remainder apportionment of `total` over `props`
/// (uniform when absent). Ties on the remainder go to the lower module.
fn module_sizes(total: usize, k: usize, props: Option<&[f64]>) -> Result<Vec<usize>> {
    let uniform = vec![1.0 / k as f64; k];
    let props = props.unwrap_or(&uniform);
    let quotas: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidConfig(format!(
            "proportions leave planted module {empty} empty ({total} elements)"
        )));
    }
    Ok(sizes)
}

/// Draws a planted matrix. The matrix is returned unnormalized.
///
/// Random draws, in order: neuron label shuffle, sample label shuffle, then
/// one Box–Muller deviate per entry in row-major order.
pub fn generate(spec: &PlantedSpec) -> Result<(ActivationMatrix, PlantedTruth)> {
    spec.validate()?;
    let neuron_sizes = module_sizes(spec.n, spec.k, spec.neuron_props.as_deref())?;
    let sample_sizes = module_sizes(spec.m, spec.k, spec.sample_props.as_deref())?;

    let mut rng = rng::seeded(spec.seed);
    let expand = |sizes: &[usize]| -> Vec<usize> {
        sizes.iter().enumerate().flat_map(|(k, &s)| std::iter::repeat_n(k, s)).collect()
    };
    let mut neuron_truth = expand(&neuron_sizes);
    let mut sample_truth = expand(&sample_sizes);
    neuron_truth.shuffle(&mut rng);
    sample_truth.shuffle(&mut rng);

    let mut normal = BoxMuller::new(rng);
    let values = Array2::from_shape_fn((spec.n, spec.m), |(u, s)| {
        let signal = if neuron_truth[u] == sample_truth[s] { spec.mu } else { 0.0 };
        let noise = if spec.sigma > 0.0 { spec.sigma * normal.next() } else { 0.0 };
        signal + noise
    });

    let per_layer = spec.n.div_ceil(spec.layers as usize);
    let neurons = (0..spec.n)
        .map(|i| NeuronMeta {
            layer: (i / per_layer) as u32,
            index_in_layer: (i % per_layer) as u32,
        })
        .collect();
    let samples = sample_truth
        .iter()
        .enumerate()
        .map(|(j, &t)| SampleMeta {
            id: format!("s{j}"),
            label: spec.labels.then(|| format!("module_{t}")),
            token_count: None,
        })
        .collect();
    let matrix = ActivationMatrix::new(values, neurons, samples)?;
    Ok((matrix, PlantedTruth { neuron_truth, sample_truth }))
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the contingency table.
///
/// When the expected and maximum index coincide (e.g. both labelings put
/// everything in one cluster) the result is 1 for identical partitions and
/// 0 otherwise.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig("ARI needs at least two elements".into()));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(a.len() as u64);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        let same = table.len() == rows.len() && table.len() == cols.len();
        return Ok(if same { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}
