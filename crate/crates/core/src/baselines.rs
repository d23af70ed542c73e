//! PCA on neuron activation rows and K-Means over the reduced rows. Together
//! they produce the clustering initialization, and K-Means alone is the
//! comparison baseline.

use ndarray::{Array1, Array2, ArrayView1, Axis as NdAxis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// `dims × M`, orthonormal rows sorted by explained variance.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
    /// Population variance captured by each component.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn transform(&self, rows: &Array2<f64>) -> Array2<f64> {
        (rows - &self.mean).dot(&self.components.t())
    }
}

/// Projects the mean-centred rows onto their top `dims` principal directions,
/// from a symmetric eigendecomposition of the `M × M` covariance matrix.
pub fn pca_fit_transform(rows: &Array2<f64>, dims: usize) -> Result<(PcaModel, Array2<f64>)> {
    let (n, m) = rows.dim();
    if dims == 0 || dims > n.min(m) {
        return Err(Error::InvalidConfig(format!(
            "PCA dims must be in 1..={}, got {dims}",
            n.min(m)
        )));
    }
    let mean = rows.mean_axis(NdAxis(0)).expect("non-empty rows");
    let centered = rows - &mean;
    let cov = centered.t().dot(&centered) / n as f64;

    let (vectors, values) = top_eigenpairs(&cov, dims);
    let components = vectors.t().to_owned();
    let reduced = centered.dot(&vectors);
    Ok((PcaModel { components, mean, explained_variance: values }, reduced))
}

/// Top `dims` eigenpairs of a symmetric PSD matrix: eigenvectors as columns
/// and eigenvalues in descending order. Each eigenvector's largest-magnitude
/// entry is made positive so the result does not depend on solver signs.
fn top_eigenpairs(a: &Array2<f64>, dims: usize) -> (Array2<f64>, Vec<f64>) {
    let size = a.nrows();
    let eig = nalgebra::DMatrix::from_fn(size, size, |i, j| a[(i, j)]).symmetric_eigen();
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    order.truncate(dims);

    let mut vectors = Array2::from_shape_fn((size, dims), |(r, c)| eig.eigenvectors[(r, order[c])]);
    for mut col in vectors.columns_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    (vectors, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// `K × dims`.
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step; non-increasing.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

pub const KMEANS_MAX_ITERS: usize = 100;

/// K-Means with k-means++ seeding and Lloyd iterations.
///
/// An empty cluster is re-seeded at the point farthest from its current
/// centroid (taken from a cluster with at least two points).
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!(
            "K-Means needs 1 <= K <= {n} points, got K = {k}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let (next, inertia) = assign_nearest(points, &centroids, &assignment);
        history.push(inertia);
        if next == assignment || iterations >= max_iters {
            assignment = next;
            break;
        }
        assignment = next;
        iterations += 1;
        update_centroids(points, &assignment, &mut centroids);
        repair_empty(points, &mut assignment, &mut centroids);
    }

    repair_empty(points, &mut assignment, &mut centroids);
    update_centroids(points, &assignment, &mut centroids);
    let inertia = inertia_of(points, &assignment, &centroids);
    if inertia < *history.last().unwrap() {
        history.push(inertia);
    }
    Ok(KMeansResult { centroids, assignment, inertia, inertia_history: history, iterations })
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seeds(points: &Array2<f64>, k: usize, rng: &mut Rng64) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Rounding can leave the fallback on a zero-weight point.
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap();
            }
            pick
        } else {
            // Remaining points coincide with chosen seeds.
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(next)));
        }
    }
    let mut centroids = Array2::zeros((k, points.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }
    centroids
}

/// Nearest-centroid assignment; ties keep the previous cluster, then the
/// lowest index.
fn assign_nearest(points: &Array2<f64>, centroids: &Array2<f64>, previous: &[usize]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assignment = points
        .rows()
        .into_iter()
        .zip(previous)
        .map(|(p, &prev)| {
            let dists: Vec<f64> = centroids.rows().into_iter().map(|c| sq_dist(p, c)).collect();
            let (mut best, mut d) = dists
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &d)| if d < acc.1 { (i, d) } else { acc });
            if prev < dists.len() && dists[prev] <= d {
                best = prev;
                d = dists[prev];
            }
            inertia += d;
            best
        })
        .collect();
    (assignment, inertia)
}

fn update_centroids(points: &Array2<f64>, assignment: &[usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; k];
    for (p, &c) in points.rows().into_iter().zip(assignment) {
        sums.row_mut(c).scaled_add(1.0, &p);
        counts[c] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            let mean = &sums.row(c) / counts[c] as f64;
            centroids.row_mut(c).assign(&mean);
        }
    }
}

fn repair_empty(points: &Array2<f64>, assignment: &mut [usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let far = (0..points.nrows())
            .filter(|&i| counts[assignment[i]] >= 2)
            .map(|i| (i, sq_dist(points.row(i), centroids.row(assignment[i]))))
            .fold((usize::MAX, -1.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc })
            .0;
        assignment[far] = empty;
        centroids.row_mut(empty).assign(&points.row(far));
    }
}

fn inertia_of(points: &Array2<f64>, assignment: &[usize], centroids: &Array2<f64>) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(assignment)
        .map(|(p, &c)| sq_dist(p, centroids.row(c)))
        .sum()
}
