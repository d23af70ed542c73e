//! Artifact writers. Every file is written to a temporary sibling and renamed
//! into place, so readers never observe a partial artifact.

use std::io::Write;
use std::path::Path;

use modforge::metrics::LayerDistribution;
use ndarray::Array2;
use serde::Serialize;

use crate::{CmdResult, Failure};

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_failure(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_failure(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_failure(path, e))?;
    tmp.persist(path).map_err(|e| io_failure(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_failure(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_csv(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> CmdResult {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(|e| io_failure(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_failure(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_failure(path, e.error()))?;
    write_atomic(path, &bytes)
}

/// Rows are sample modules, columns neuron modules.
pub fn write_heatmap_csv(path: &Path, heatmap: &Array2<f64>) -> CmdResult {
    let header = std::iter::once("sample_module".to_string())
        .chain((0..heatmap.ncols()).map(|j| format!("neuron_module_{j}")))
        .collect();
    let rows = heatmap
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| std::iter::once(i.to_string()).chain(row.iter().map(|v| v.to_string())).collect())
        .collect();
    write_csv(path, header, rows)
}

/// One row per module, one column per layer.
pub fn write_layer_csv(path: &Path, dist: &LayerDistribution) -> CmdResult {
    let header = std::iter::once("module".to_string())
        .chain(dist.layers.iter().map(|l| format!("layer_{l}")))
        .collect();
    let rows = dist
        .counts
        .iter()
        .enumerate()
        .map(|(k, row)| std::iter::once(k.to_string()).chain(row.iter().map(|c| c.to_string())).collect())
        .collect();
    write_csv(path, header, rows)
}
