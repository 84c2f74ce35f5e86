//! Factor-vote disentanglement score and unsupervised cluster accuracy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assignment::max_weight_assignment;
use super::encode_dataset;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;

pub const DEFAULT_VOTES: usize = 800;
pub const DEFAULT_BATCH_PER_VOTE: usize = 64;
/// Dimensions whose global standard deviation falls below this are ignored.
pub const COLLAPSED_STD: f64 = 1e-6;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorMetricOptions {
    pub votes: usize,
    pub batch_per_vote: usize,
    pub seed: u64,
}

impl Default for FactorMetricOptions {
    fn default() -> Self {
        FactorMetricOptions {
            votes: DEFAULT_VOTES,
            batch_per_vote: DEFAULT_BATCH_PER_VOTE,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorMetricResult {
    pub score: f64,
    pub votes: usize,
    pub batch_per_vote: usize,
    pub seed: u64,
    /// Representation dimensions that took part (not collapsed).
    pub active_dims: Vec<usize>,
    /// `(argmin dimension, fixed factor)` per vote.
    pub vote_pairs: Vec<(usize, usize)>,
}

/// Scores a row-major `N x dim` representation against `N x F` factor classes.
///
/// Each vote fixes one factor at one value, draws a batch sharing it, and records
/// which globally normalized dimension varies least. The score is the accuracy of
/// the majority-vote classifier from dimension to factor.
pub fn factor_metric_representation(
    repr: &[f64],
    dim: usize,
    factors: &[u32],
    factor_sizes: &[usize],
    opts: &FactorMetricOptions,
) -> Result<FactorMetricResult> {
    let nf = factor_sizes.len();
    if dim == 0 || nf == 0 || repr.len() % dim != 0 {
        return Err(Error::invalid("factor_metric", "empty representation or factor set"));
    }
    let n = repr.len() / dim;
    if factors.len() != n * nf {
        return Err(Error::invalid(
            "factor_metric",
            format!("{} factor entries for {n} examples of {nf} factors", factors.len()),
        ));
    }
    if opts.votes == 0 || opts.batch_per_vote < 2 {
        return Err(Error::invalid("factor_metric", "need at least one vote and two images per vote"));
    }

    // global scale per dimension
    let mut mean = vec![0.0; dim];
    for row in repr.chunks(dim) {
        mean.iter_mut().zip(row).for_each(|(m, &x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in repr.chunks(dim) {
        for j in 0..dim {
            var[j] += (row[j] - mean[j]).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    let active_dims: Vec<usize> = (0..dim).filter(|&j| std[j] >= COLLAPSED_STD).collect();
    if active_dims.is_empty() {
        return Err(Error::invalid("factor_metric", "every representation dimension is collapsed"));
    }

    // example indices per (factor, value)
    let mut pools: Vec<Vec<Vec<usize>>> = factor_sizes.iter().map(|&s| vec![Vec::new(); s]).collect();
    for i in 0..n {
        for k in 0..nf {
            let v = factors[i * nf + k] as usize;
            if v >= factor_sizes[k] {
                return Err(Error::invalid("factor_metric", format!("factor {k} value {v} out of range")));
            }
            pools[k][v].push(i);
        }
    }
    if pools.iter().flatten().all(|p| p.len() < 2) {
        return Err(Error::invalid("factor_metric", "no factor value is shared by two examples"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut vote_pairs = Vec::with_capacity(opts.votes);
    let mut batch_var = vec![0.0; active_dims.len()];
    for _ in 0..opts.votes {
        let mut pool = None;
        for _ in 0..MAX_RESAMPLES {
            let k = rng.gen_range(0..nf);
            let v = rng.gen_range(0..factor_sizes[k]);
            if pools[k][v].len() >= 2 {
                pool = Some((k, &pools[k][v]));
                break;
            }
        }
        let (k, pool) = pool.ok_or_else(|| Error::invalid("factor_metric", "could not draw a factor value with two examples"))?;
        let batch: Vec<usize> = (0..opts.batch_per_vote).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
        for (slot, &j) in active_dims.iter().enumerate() {
            let vals = batch.iter().map(|&i| repr[i * dim + j] / std[j]);
            let m = vals.clone().sum::<f64>() / batch.len() as f64;
            batch_var[slot] = vals.map(|x| (x - m).powi(2)).sum::<f64>() / (batch.len() - 1) as f64;
        }
        let best = (0..active_dims.len())
            .min_by(|&a, &b| batch_var[a].total_cmp(&batch_var[b]))
            .expect("non-empty");
        vote_pairs.push((active_dims[best], k));
    }

    let mut table = vec![vec![0usize; nf]; dim];
    for &(d, k) in &vote_pairs {
        table[d][k] += 1;
    }
    let correct: usize = table.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
    Ok(FactorMetricResult {
        score: correct as f64 / opts.votes as f64,
        votes: opts.votes,
        batch_per_vote: opts.batch_per_vote,
        seed: opts.seed,
        active_dims,
        vote_pairs,
    })
}

/// Factor metric on the posterior mean representation (continuous means, then category probabilities).
pub fn factor_metric(model: &Model<f32>, data: &Dataset, opts: &FactorMetricOptions) -> Result<FactorMetricResult> {
    let (Some(factors), Some(sizes)) = (&data.factors, &data.factor_sizes) else {
        return Err(Error::invalid("factor_metric", "dataset has no ground-truth factors"));
    };
    let post = encode_dataset(model, data)?;
    let dim = model.latent_spec().latent_len();
    factor_metric_representation(&post.mean_representation(), dim, factors, sizes, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAccuracy {
    pub accuracy: f64,
    /// Best label for each cluster under the one-to-one matching, if matched.
    pub mapping: Vec<Option<usize>>,
    pub clusters: usize,
    pub classes: usize,
    /// Set when cluster and class counts differ, so some cannot be matched.
    pub warning: Option<String>,
}

/// Accuracy of `predicted` cluster ids after the best one-to-one relabelling.
pub fn cluster_accuracy(predicted: &[usize], labels: &[usize], clusters: usize, classes: usize) -> Result<ClusterAccuracy> {
    if predicted.len() != labels.len() || predicted.is_empty() {
        return Err(Error::invalid(
            "cluster_accuracy",
            format!("{} predictions for {} labels", predicted.len(), labels.len()),
        ));
    }
    let mut confusion = vec![0.0; clusters * classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        if p >= clusters || l >= classes {
            return Err(Error::invalid("cluster_accuracy", format!("cluster {p} or label {l} out of range")));
        }
        confusion[p * classes + l] += 1.0;
    }
    let mapping = max_weight_assignment(&confusion, clusters, classes);
    let hits: f64 = mapping
        .iter()
        .enumerate()
        .filter_map(|(p, l)| l.map(|l| confusion[p * classes + l]))
        .sum();
    let warning = (clusters != classes)
        .then(|| format!("{clusters} categories matched against {classes} classes; unmatched ones count as errors"));
    Ok(ClusterAccuracy {
        accuracy: hits / predicted.len() as f64,
        mapping,
        clusters,
        classes,
        warning,
    })
}

/// Argmax category of the single discrete variable for every image.
pub fn predict_clusters(model: &Model<f32>, data: &Dataset) -> Result<Vec<usize>> {
    if model.latent_spec().discrete_dims.len() != 1 {
        return Err(Error::invalid(
            "cluster_accuracy",
            format!("needs exactly one discrete variable, model has {}", model.latent_spec().discrete_dims.len()),
        ));
    }
    let post = encode_dataset(model, data)?;
    let c = &post.concretes[0];
    Ok(c.logits
        .chunks(c.categories)
        .map(|row| (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("non-empty"))
        .collect())
}

/// Cluster accuracy of the discrete variable against ground-truth factor `factor`.
pub fn model_cluster_accuracy(model: &Model<f32>, data: &Dataset, factor: usize) -> Result<ClusterAccuracy> {
    let labels: Vec<usize> = data
        .factor_column(factor)
        .ok_or_else(|| Error::invalid("cluster_accuracy", format!("dataset has no factor {factor}")))?
        .into_iter()
        .map(|v| v as usize)
        .collect();
    let classes = data.factor_sizes.as_ref().map(|s| s[factor]).unwrap_or(0);
    let predicted = predict_clusters(model, data)?;
    cluster_accuracy(&predicted, &labels, model.latent_spec().discrete_dims[0], classes)
}
