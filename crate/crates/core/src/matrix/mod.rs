//! Activation matrices: validation, z-score normalization, and the on-disk
//! interchange format (an `.npy` payload plus a JSON metadata sidecar).

pub mod npy;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis as NdAxis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use npy::Dtype;

/// Tolerance used when checking that a matrix flagged as normalized really is.
pub const NORMALIZED_TOL: f64 = 1e-6;

/// Identity of one FFN neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronMeta {
    pub layer: u32,
    #[serde(rename = "index")]
    pub index_in_layer: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub token_count: Option<u64>,
}

/// Per-neuron statistics recorded by [`zscore_normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Dense N×M matrix of neuron (row) by sample (column) activations.
///
/// Immutable once built; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    values: Array2<f64>,
    neurons: Vec<NeuronMeta>,
    samples: Vec<SampleMeta>,
    normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    neurons: Vec<NeuronMeta>,
    samples: Vec<SampleMeta>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    normalized: bool,
}

impl ActivationMatrix {
    pub fn new(
        values: Array2<f64>,
        neurons: Vec<NeuronMeta>,
        samples: Vec<SampleMeta>,
    ) -> Result<Self> {
        Self::with_flag(values, neurons, samples, false)
    }

    /// Builds a matrix with synthetic metadata: every neuron in layer 0 and
    /// samples named `s0`, `s1`, ... without labels.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (n, m) = values.dim();
        let neurons = (0..n)
            .map(|i| NeuronMeta { layer: 0, index_in_layer: i as u32 })
            .collect();
        let samples = (0..m)
            .map(|j| SampleMeta { id: format!("s{j}"), label: None, token_count: None })
            .collect();
        Self::new(values, neurons, samples)
    }

    fn with_flag(
        values: Array2<f64>,
        neurons: Vec<NeuronMeta>,
        samples: Vec<SampleMeta>,
        normalized: bool,
    ) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(Error::DimensionMismatch(format!(
                "matrix must have at least one row and one column, got {n}x{m}"
            )));
        }
        if neurons.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "metadata lists {} neurons but the matrix has {n} rows",
                neurons.len()
            )));
        }
        if samples.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "metadata lists {} samples but the matrix has {m} columns",
                samples.len()
            )));
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }

        let mut seen = HashSet::with_capacity(n);
        for nm in &neurons {
            if !seen.insert(*nm) {
                return Err(Error::InvalidMeta(format!(
                    "duplicate neuron (layer {}, index {})",
                    nm.layer, nm.index_in_layer
                )));
            }
        }
        let mut ids = HashSet::with_capacity(m);
        for s in &samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidMeta(format!("duplicate sample id '{}'", s.id)));
            }
            if s.token_count == Some(0) {
                return Err(Error::InvalidMeta(format!("sample '{}' has token_count 0", s.id)));
            }
        }

        if normalized {
            for (i, row) in values.rows().into_iter().enumerate() {
                if !row_is_normalized(row) {
                    return Err(Error::InvalidMeta(format!(
                        "matrix is flagged normalized but row {i} is not z-scored"
                    )));
                }
            }
        }

        Ok(Self { values, neurons, samples, normalized })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn neurons(&self) -> &[NeuronMeta] {
        &self.neurons
    }

    pub fn samples(&self) -> &[SampleMeta] {
        &self.samples
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn n_neurons(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    /// Sample labels, or `None` if any sample is unlabeled.
    pub fn labels(&self) -> Option<Vec<&str>> {
        self.samples.iter().map(|s| s.label.as_deref()).collect()
    }
}

fn row_is_normalized(row: ArrayView1<'_, f64>) -> bool {
    if row.iter().all(|v| *v == 0.0) {
        return true;
    }
    let (mean, std) = population_stats(row);
    mean.abs() <= NORMALIZED_TOL && (std - 1.0).abs() <= NORMALIZED_TOL
}

fn population_stats(row: ArrayView1<'_, f64>) -> (f64, f64) {
    let len = row.len() as f64;
    let mean = row.sum() / len;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
    (mean, var.sqrt())
}

/// Per-neuron z-score over samples with the population standard deviation.
/// Constant (dead) neurons become all-zero rows.
pub fn zscore_normalize(m: &ActivationMatrix) -> Result<(ActivationMatrix, NormStats)> {
    if m.normalized {
        return Err(Error::AlreadyNormalized);
    }
    if m.n_samples() < 2 {
        return Err(Error::TooFewSamples(m.n_samples()));
    }
    let mut values = m.values.clone();
    let mut stats = NormStats {
        mean: Vec::with_capacity(m.n_neurons()),
        std: Vec::with_capacity(m.n_neurons()),
    };
    for mut row in values.axis_iter_mut(NdAxis(0)) {
        let (mean, std) = population_stats(row.view());
        // Rows whose spread is lost to rounding are treated as dead too.
        if std <= 4.0 * f64::EPSILON * mean.abs() {
            row.fill(0.0);
            stats.std.push(0.0);
        } else {
            row.mapv_inplace(|v| (v - mean) / std);
            stats.std.push(std);
        }
        stats.mean.push(mean);
    }
    let out = ActivationMatrix {
        values,
        neurons: m.neurons.clone(),
        samples: m.samples.clone(),
        normalized: true,
    };
    Ok((out, stats))
}

/// Loads a matrix from an `.npy` payload and its JSON metadata sidecar.
pub fn load_matrix(matrix_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<ActivationMatrix> {
    let mut reader = BufReader::new(File::open(matrix_path)?);
    let values = npy::read_array(&mut reader)?;
    let meta: MetaFile = serde_json::from_reader(BufReader::new(File::open(meta_path)?))?;
    ActivationMatrix::with_flag(values, meta.neurons, meta.samples, meta.normalized)
}

/// Writes the matrix as 64-bit floats so that [`load_matrix`] reproduces it bit-exactly.
pub fn save_matrix(
    m: &ActivationMatrix,
    matrix_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<()> {
    save_matrix_as(m, matrix_path, meta_path, Dtype::F64)
}

pub fn save_matrix_as(
    m: &ActivationMatrix,
    matrix_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
    dtype: Dtype,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(matrix_path)?);
    npy::write_array(&mut w, &m.values, dtype)?;
    w.flush()?;

    let meta = MetaFile {
        neurons: m.neurons.clone(),
        samples: m.samples.clone(),
        normalized: m.normalized,
    };
    let mut w = BufWriter::new(File::create(meta_path)?);
    serde_json::to_writer(&mut w, &meta)?;
    w.flush()?;
    Ok(())
}
