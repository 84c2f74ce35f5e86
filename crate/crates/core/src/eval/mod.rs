//! Post-training analysis: traversals, KL ranking, disentanglement scores and image output.

mod assignment;
mod metric;
pub mod raster;
mod traverse;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ConcreteBatch, GaussianBatch, Model, PosteriorParams};

pub use assignment::max_weight_assignment;
pub use metric::{
    cluster_accuracy, factor_metric, factor_metric_representation, model_cluster_accuracy, predict_clusters, ClusterAccuracy,
    FactorMetricOptions, FactorMetricResult, COLLAPSED_STD, DEFAULT_BATCH_PER_VOTE, DEFAULT_VOTES,
};
pub use traverse::{
    conditional_latents, conditional_sample, prior_center, traversal_latents, traversal_values, traverse_all, traverse_unit,
    traverse_unit_over, LatentUnit, TraversalGrid, TraversalRow, MONTAGE_GAP, TRAVERSAL_QUANTILES,
};

/// Images encoded per forward pass when sweeping a dataset.
pub const ENCODE_CHUNK: usize = 256;

/// Posterior parameters of every image in `data`, encoded in chunks.
pub fn encode_dataset(model: &Model<f32>, data: &Dataset) -> Result<PosteriorParams> {
    if data.is_empty() {
        return Err(Error::invalid("encode", "dataset is empty"));
    }
    let spec = model.latent_spec();
    let mut all = PosteriorParams {
        batch: 0,
        gaussian: GaussianBatch {
            dim: spec.continuous_dim,
            mu: Vec::new(),
            logvar: Vec::new(),
        },
        concretes: spec
            .discrete_dims
            .iter()
            .map(|&n| ConcreteBatch {
                categories: n,
                logits: Vec::new(),
                temperature: spec.temperature,
            })
            .collect(),
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(ENCODE_CHUNK) {
        let p = model.encode(&data.batch(chunk))?;
        all.batch += p.batch;
        all.gaussian.mu.extend(p.gaussian.mu);
        all.gaussian.logvar.extend(p.gaussian.logvar);
        for (dst, src) in all.concretes.iter_mut().zip(p.concretes) {
            dst.logits.extend(src.logits);
        }
    }
    Ok(all)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedLatent {
    pub unit: LatentUnit,
    pub label: String,
    /// Data-averaged KL to the prior, in nats.
    pub kl: f64,
}

/// Latent units in decreasing order of data-averaged KL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRanking {
    pub entries: Vec<RankedLatent>,
}

impl LatentRanking {
    pub fn from_posterior(post: &PosteriorParams) -> Result<Self> {
        let b = post.batch as f64;
        let d = post.gaussian.dim;
        let mut entries = Vec::new();
        let kz = post.kl_continuous()?;
        for j in 0..d {
            let unit = LatentUnit::Continuous(j);
            entries.push(RankedLatent {
                unit,
                label: unit.label(),
                kl: (0..post.batch).map(|i| kz[i * d + j]).sum::<f64>() / b,
            });
        }
        let m = post.concretes.len();
        let kc = post.kl_discrete()?;
        for v in 0..m {
            let unit = LatentUnit::Discrete(v);
            entries.push(RankedLatent {
                unit,
                label: unit.label(),
                kl: (0..post.batch).map(|i| kc[i * m + v]).sum::<f64>() / b,
            });
        }
        // stable: ties keep continuous-then-discrete order
        entries.sort_by(|a, b| b.kl.total_cmp(&a.kl));
        Ok(LatentRanking { entries })
    }

    /// Sum of per-unit KLs, the data-averaged bound on latent-data mutual information.
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.kl).sum()
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<6} {:<6} {:>10}\n", "rank", "unit", "kl_nats");
        for (r, e) in self.entries.iter().enumerate() {
            s.push_str(&format!("{:<6} {:<6} {:>10.4}\n", r, e.label, e.kl));
        }
        s
    }
}

pub fn rank_latents_by_kl(model: &Model<f32>, data: &Dataset) -> Result<LatentRanking> {
    LatentRanking::from_posterior(&encode_dataset(model, data)?)
}

/// Data-averaged KL of the full posterior to the prior, an upper bound on `I(x; z, c)`.
pub fn mi_upper_bound(model: &Model<f32>, data: &Dataset) -> Result<f64> {
    Ok(rank_latents_by_kl(model, data)?.total())
}

/// A scored evaluation written as JSON next to its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub metric: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub votes: Option<usize>,
    pub seed: u64,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}
