//! Batched posterior parameters and latent sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EncoderVars, LatentSpec};
use crate::autodiff::{softmax_slice, Scalar, Tape};
use crate::distributions::{
    gumbel_from_uniform, kl_categorical_uniform, kl_gaussian_std, ConcreteParams, GaussianParams, UNIFORM_EPS,
};
use crate::error::{Error, Result};

/// Row-major `[B, dim]` Gaussian posterior parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBatch {
    pub dim: usize,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianBatch {
    pub fn example(&self, i: usize) -> Result<GaussianParams> {
        let r = i * self.dim..(i + 1) * self.dim;
        GaussianParams::new(self.mu[r.clone()].to_vec(), self.logvar[r].to_vec())
    }
}

/// Row-major `[B, n]` logits of one discrete variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcreteBatch {
    pub categories: usize,
    pub logits: Vec<f64>,
    pub temperature: f64,
}

impl ConcreteBatch {
    pub fn example(&self, i: usize) -> Result<ConcreteParams> {
        let n = self.categories;
        ConcreteParams::new(self.logits[i * n..(i + 1) * n].to_vec(), self.temperature)
    }

    /// Softmax of the logits, `[B, n]`.
    pub fn probs(&self) -> Vec<f64> {
        let rows = self.logits.len() / self.categories;
        softmax_slice(&self.logits, rows, self.categories, 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams {
    pub batch: usize,
    pub gaussian: GaussianBatch,
    pub concretes: Vec<ConcreteBatch>,
}

impl PosteriorParams {
    pub(crate) fn from_tape<S: Scalar>(
        tape: &Tape<S>,
        enc: &EncoderVars,
        batch: usize,
        spec: &LatentSpec,
    ) -> Result<Self> {
        let read = |v| tape.value(v).to_f64_vec();
        let gaussian = GaussianBatch {
            dim: spec.continuous_dim,
            mu: enc.mu.map(read).unwrap_or_default(),
            logvar: enc.logvar.map(read).unwrap_or_default(),
        };
        let concretes = enc
            .logits
            .iter()
            .zip(&spec.discrete_dims)
            .map(|(&v, &n)| ConcreteBatch {
                categories: n,
                logits: read(v),
                temperature: spec.temperature,
            })
            .collect();
        Ok(PosteriorParams {
            batch,
            gaussian,
            concretes,
        })
    }

    /// Per-example continuous KL per unit, `[B, d]` row-major.
    pub fn kl_continuous(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.batch * self.gaussian.dim);
        for i in 0..self.batch {
            out.extend(kl_gaussian_std(&self.gaussian.example(i)?));
        }
        Ok(out)
    }

    /// Per-example KL of every discrete variable, `[B, n_vars]` row-major.
    pub fn kl_discrete(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.batch * self.concretes.len());
        for i in 0..self.batch {
            for c in &self.concretes {
                out.push(kl_categorical_uniform(&c.example(i)?));
            }
        }
        Ok(out)
    }

    /// `[B, d + sum n_i]` rows of `mu` followed by every `softmax(logits)`.
    pub fn mean_representation(&self) -> Vec<f64> {
        let probs: Vec<Vec<f64>> = self.concretes.iter().map(ConcreteBatch::probs).collect();
        let width = self.gaussian.dim + self.concretes.iter().map(|c| c.categories).sum::<usize>();
        let mut out = Vec::with_capacity(self.batch * width);
        for i in 0..self.batch {
            let d = self.gaussian.dim;
            out.extend_from_slice(&self.gaussian.mu[i * d..(i + 1) * d]);
            for (c, p) in self.concretes.iter().zip(&probs) {
                out.extend_from_slice(&p[i * c.categories..(i + 1) * c.categories]);
            }
        }
        out
    }
}

/// Fixed noise for one reparametrized forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentNoise {
    /// Standard normal draws, `[B, d]`.
    pub gaussian: Vec<f64>,
    /// Uniform draws per discrete variable, `[B, n_i]`.
    pub uniform: Vec<Vec<f64>>,
}

impl LatentNoise {
    /// Draws noise in a fixed order: all Gaussian values, then each discrete variable.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, batch: usize, spec: &LatentSpec) -> Self {
        let gaussian = (0..batch * spec.continuous_dim).map(|_| rng.sample(StandardNormal)).collect();
        let uniform = spec
            .discrete_dims
            .iter()
            .map(|&n| (0..batch * n).map(|_| rng.gen_range(UNIFORM_EPS..1.0 - UNIFORM_EPS)).collect())
            .collect();
        LatentNoise { gaussian, uniform }
    }

    /// Noise that turns reparametrized sampling into the mean path for the
    /// Gaussian part. Discrete parts still need uniform draws.
    pub fn zeros(batch: usize, spec: &LatentSpec) -> Self {
        LatentNoise {
            gaussian: vec![0.0; batch * spec.continuous_dim],
            uniform: spec.discrete_dims.iter().map(|&n| vec![0.5; batch * n]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Reparametrized draws from every posterior.
    Stochastic,
    /// `mu` for continuous units and `softmax(logits)` for discrete ones.
    Mean,
}

/// Concatenated latent rows `[B, d + sum n_i]`.
pub fn sample_latent<R: Rng + ?Sized>(params: &PosteriorParams, mode: SampleMode, rng: &mut R) -> Result<Vec<f64>> {
    match mode {
        SampleMode::Mean => Ok(params.mean_representation()),
        SampleMode::Stochastic => {
            let spec = LatentSpec {
                continuous_dim: params.gaussian.dim,
                discrete_dims: params.concretes.iter().map(|c| c.categories).collect(),
                temperature: params.concretes.first().map_or(1.0, |c| c.temperature),
            };
            let noise = LatentNoise::draw(rng, params.batch, &spec);
            sample_with_noise(params, &noise)
        }
    }
}

/// Reparametrized latent rows from explicit noise.
pub fn sample_with_noise(params: &PosteriorParams, noise: &LatentNoise) -> Result<Vec<f64>> {
    let d = params.gaussian.dim;
    if noise.gaussian.len() != params.batch * d || noise.uniform.len() != params.concretes.len() {
        return Err(Error::invalid("sample_latent", "noise does not match posterior shape"));
    }
    let mut out = Vec::new();
    for i in 0..params.batch {
        let g = &params.gaussian;
        for j in i * d..(i + 1) * d {
            out.push(g.mu[j] + (0.5 * g.logvar[j]).exp() * noise.gaussian[j]);
        }
        for (c, u) in params.concretes.iter().zip(&noise.uniform) {
            let n = c.categories;
            let row: Vec<f64> = (i * n..(i + 1) * n)
                .map(|j| (c.logits[j] + gumbel_from_uniform(u[j])) / c.temperature)
                .collect();
            out.extend(softmax_slice(&row, 1, n, 1));
        }
    }
    Ok(out)
}
