//! Post-hoc evaluation of a discovered partition: per-sample module activation
//! features, a linear classifier over them, cross-category cosine similarity,
//! the block-average heatmap, and per-layer neuron counts.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, ArrayView1, Axis as NdAxis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{ActivationMatrix, NeuronMeta};
use crate::objective::{Axis, Partition};
use crate::rng;

pub const L2_STRENGTH: f64 = 1e-4;
pub const LEARNING_RATE: f64 = 0.1;
pub const MAX_EPOCHS: usize = 500;
pub const GRAD_TOL: f64 = 1e-6;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// Row `s` is the activation pattern of sample `s`: its mean activation over
/// each neuron module.
pub fn extract_features(m: &ActivationMatrix, p: &Partition) -> Result<Array2<f64>> {
    p.check_dims(m)?;
    p.check_non_empty()?;
    let counts = p.counts(Axis::Neuron);
    let mut features = Array2::<f64>::zeros((m.n_samples(), p.k()));
    for (row, &k) in m.values().rows().into_iter().zip(p.neuron_assign()) {
        features.column_mut(k).scaled_add(1.0, &row);
    }
    for (k, mut col) in features.columns_mut().into_iter().enumerate() {
        col /= counts[k] as f64;
    }
    Ok(features)
}

/// Softmax regression weights plus the training-split standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub classes: Vec<String>,
    /// `C × K`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub feature_mean: Array1<f64>,
    pub feature_std: Array1<f64>,
    pub epochs: usize,
}

impl ClassifierModel {
    pub fn predict(&self, features: &Array2<f64>) -> Vec<usize> {
        let x = (features - &self.feature_mean) / &self.feature_std;
        let logits = x.dot(&self.weights.t()) + &self.bias;
        logits.rows().into_iter().map(argmax).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    /// `confusion[true][predicted]`, indexed like `model.classes`.
    pub confusion: Vec<Vec<usize>>,
    pub train_size: usize,
    pub test_size: usize,
    #[serde(skip)]
    pub model: Option<ClassifierModel>,
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Seeded stratified split: within each class (sorted by name), a shuffled
/// `round(n_c · test_fraction)` samples go to test, leaving at least one for
/// training. Returns `(train, test)` indices, each ascending.
pub fn stratified_split(labels: &[usize], n_classes: usize, seed: u64, test_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::seeded(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_test = ((members.len() as f64 * test_fraction).round() as usize)
            .min(members.len().saturating_sub(1));
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Fits multinomial logistic regression (L2 1e-4, full-batch gradient descent
/// at rate 0.1, at most 500 epochs or until the gradient norm drops below
/// 1e-6) on a stratified split and scores it on the held-out part.
pub fn train_eval_classifier<S: AsRef<str>>(
    features: &Array2<f64>,
    labels: &[S],
    split_seed: u64,
    test_fraction: f64,
) -> Result<ClassifierReport> {
    if features.nrows() != labels.len() {
        return Err(Error::LengthMismatch(features.nrows(), labels.len()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!("test fraction {test_fraction} not in [0, 1)")));
    }
    let classes: Vec<String> = labels
        .iter()
        .map(|l| l.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search_by(|c| c.as_str().cmp(l.as_ref())).unwrap())
        .collect();
    let (train, test) = stratified_split(&y, classes.len(), split_seed, test_fraction);
    let train_classes: BTreeSet<usize> = train.iter().map(|&i| y[i]).collect();
    if train_classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    if test.is_empty() {
        return Err(Error::InvalidConfig("test split is empty".into()));
    }

    let x_train = features.select(NdAxis(0), &train);
    let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let model = fit_softmax(&x_train, &y_train, classes.clone());

    let x_test = features.select(NdAxis(0), &test);
    let predicted = model.predict(&x_test);
    let c = classes.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for (&i, &pred) in test.iter().zip(&predicted) {
        confusion[y[i]][pred] += 1;
    }
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let (per_class, macro_f1) = f1_scores(&confusion);
    let per_class_f1 = per_class
        .into_iter()
        .map(|(k, f)| (classes[k].clone(), f))
        .collect();

    Ok(ClassifierReport {
        accuracy: correct as f64 / test.len() as f64,
        macro_f1,
        per_class_f1,
        confusion,
        train_size: train.len(),
        test_size: test.len(),
        model: Some(model),
    })
}

/// Per-class F1 for every class that occurs in the truth or the predictions,
/// and their unweighted mean.
pub fn f1_scores(confusion: &[Vec<usize>]) -> (Vec<(usize, f64)>, f64) {
    let c = confusion.len();
    let mut scores = Vec::new();
    for k in 0..c {
        let tp = confusion[k][k];
        let support: usize = confusion[k].iter().sum();
        let predicted: usize = (0..c).map(|t| confusion[t][k]).sum();
        if support == 0 && predicted == 0 {
            continue;
        }
        let fp = predicted - tp;
        let fn_ = support - tp;
        scores.push((k, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64));
    }
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.iter().map(|(_, f)| f).sum::<f64>() / scores.len() as f64
    };
    (scores, mean)
}

fn fit_softmax(x: &Array2<f64>, y: &[usize], classes: Vec<String>) -> ClassifierModel {
    let (n, d) = x.dim();
    let c = classes.len();
    let mean = x.mean_axis(NdAxis(0)).expect("non-empty training split");
    let std = x.std_axis(NdAxis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    let xs = (x - &mean) / &std;

    let mut onehot = Array2::<f64>::zeros((n, c));
    for (i, &label) in y.iter().enumerate() {
        onehot[(i, label)] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((c, d));
    let mut b = Array1::<f64>::zeros(c);
    let mut epochs = 0;
    for _ in 0..MAX_EPOCHS {
        let mut probs = xs.dot(&w.t()) + &b;
        for mut row in probs.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let total = row.sum();
            row /= total;
        }
        let residual = probs - &onehot;
        let grad_w = residual.t().dot(&xs) / n as f64 + &w * L2_STRENGTH;
        let grad_b = residual.sum_axis(NdAxis(0)) / n as f64;
        let norm = (grad_w.iter().chain(grad_b.iter()).map(|g| g * g).sum::<f64>()).sqrt();
        if norm < GRAD_TOL {
            break;
        }
        w.scaled_add(-LEARNING_RATE, &grad_w);
        b.scaled_add(-LEARNING_RATE, &grad_b);
        epochs += 1;
    }
    ClassifierModel { classes, weights: w, bias: b, feature_mean: mean, feature_std: std, epochs }
}

/// Mean pairwise cosine similarity between the feature vectors of every pair
/// of categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySimilarity {
    pub categories: Vec<String>,
    pub sd: Vec<Vec<f64>>,
    /// Diagonal entries average over all within-category pairs, self-pairs included.
    pub diagonal_includes_self_pairs: bool,
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Zero feature vectors count as cosine 0 against everything.
pub fn category_similarity<S: AsRef<str>>(features: &Array2<f64>, labels: &[S]) -> Result<CategorySimilarity> {
    if features.nrows() != labels.len() {
        return Err(Error::LengthMismatch(features.nrows(), labels.len()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_ref()).or_default().push(i);
    }
    if groups.is_empty() {
        return Err(Error::EmptyCategory("<none>".into()));
    }
    let norms: Vec<f64> = features.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let members: Vec<&Vec<usize>> = groups.values().collect();
    let c = members.len();
    let mut sd = vec![vec![0.0; c]; c];
    for a in 0..c {
        for b in a..c {
            let mut total = 0.0;
            for &i in members[a] {
                for &j in members[b] {
                    total += cosine(features.row(i), features.row(j), norms[i], norms[j]);
                }
            }
            let mean = total / (members[a].len() * members[b].len()) as f64;
            sd[a][b] = mean;
            sd[b][a] = mean;
        }
    }
    Ok(CategorySimilarity {
        categories: groups.keys().map(|s| s.to_string()).collect(),
        sd,
        diagonal_includes_self_pairs: true,
    })
}

/// `H[i][j]` is the mean activation of neuron module `j` on sample module `i`.
pub fn block_heatmap(m: &ActivationMatrix, p: &Partition) -> Result<Array2<f64>> {
    p.check_dims(m)?;
    p.check_non_empty()?;
    let k = p.k();
    let mut sums = Array2::<f64>::zeros((k, k));
    for (row, &j) in m.values().rows().into_iter().zip(p.neuron_assign()) {
        for (v, &i) in row.iter().zip(p.sample_assign()) {
            sums[(i, j)] += v;
        }
    }
    let n = p.counts(Axis::Neuron);
    let s = p.counts(Axis::Sample);
    for ((i, j), v) in sums.indexed_iter_mut() {
        *v /= (n[j] * s[i]) as f64;
    }
    Ok(sums)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDistribution {
    /// Layer ids, ascending, from 0 to the deepest layer present.
    pub layers: Vec<u32>,
    /// `counts[k][l]` = neurons of module `k` in `layers[l]`.
    pub counts: Vec<Vec<usize>>,
}

pub fn layer_distribution(p: &Partition, neurons: &[NeuronMeta]) -> Result<LayerDistribution> {
    if neurons.len() != p.neuron_assign().len() {
        return Err(Error::LengthMismatch(neurons.len(), p.neuron_assign().len()));
    }
    let depth = neurons.iter().map(|n| n.layer).max().map_or(0, |l| l as usize + 1);
    let mut counts = vec![vec![0usize; depth]; p.k()];
    for (meta, &k) in neurons.iter().zip(p.neuron_assign()) {
        counts[k][meta.layer as usize] += 1;
    }
    Ok(LayerDistribution { layers: (0..depth as u32).collect(), counts })
}
