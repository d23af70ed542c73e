//! Discovery of function modules in activation matrices.
//!
//! Rows of an [`ActivationMatrix`] are neurons and columns are samples. A
//! [`Partition`] splits both axes into `K` non-empty, mutually exclusive
//! modules; [`iterd::discover`] searches for the partition maximizing
//! `L = ξ · B`, the within-module mean activation times the harmonic mean of
//! the module block sizes.

pub mod baselines;
pub mod error;
pub mod iterd;
pub mod matrix;
pub mod metrics;
pub mod objective;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use iterd::{discover, discover_from, optimize, Discovery, InitMode, IterDConfig, IterDTrace, Status};
pub use matrix::{load_matrix, save_matrix, zscore_normalize, ActivationMatrix, NeuronMeta, SampleMeta};
pub use objective::{evaluate, Axis, ObjectiveState, ObjectiveValue, Partition};
pub use synth::{adjusted_rand_index, PlantedSpec, PlantedTruth};
