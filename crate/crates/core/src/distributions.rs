//! Reparametrizable latent distributions and their KL divergences to the
//! fixed priors: `N(0, I)` for continuous units and the uniform categorical
//! for each discrete variable.
//!
//! Every quantity exists in two forms: plain `f64` functions used by the
//! evaluation code and the tests, and tape builders (`*_on_tape`) used by
//! training, which must agree with the plain versions.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_slice, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Default relaxation temperature for the Gumbel-Softmax samples.
pub const DEFAULT_TEMPERATURE: f64 = 0.67;
/// Uniform noise is clamped to `[UNIFORM_EPS, 1 - UNIFORM_EPS]` before the Gumbel transform.
pub const UNIFORM_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mu.len() != logvar.len() {
            return Err(Error::invalid(
                "gaussian_params",
                format!("mu has {} entries, logvar {}", mu.len(), logvar.len()),
            ));
        }
        if mu.iter().chain(&logvar).any(|v| !v.is_finite()) {
            return Err(Error::invalid("gaussian_params", "non-finite parameter"));
        }
        Ok(GaussianParams { mu, logvar })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcreteParams {
    /// Unnormalized log class probabilities.
    pub logits: Vec<f64>,
    pub temperature: f64,
}

impl ConcreteParams {
    pub fn new(logits: Vec<f64>, temperature: f64) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::invalid("concrete_params", "at least two categories required"));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid("concrete_params", format!("temperature must be > 0, got {temperature}")));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("concrete_params", "non-finite logit"));
        }
        Ok(ConcreteParams { logits, temperature })
    }

    /// Class probabilities `alpha = softmax(logits)`.
    pub fn probs(&self) -> Vec<f64> {
        softmax_slice(&self.logits, 1, self.logits.len(), 1)
    }

    fn log_probs(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = self.logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        self.logits.iter().map(|&l| (l - max) - lse).collect()
    }
}

/// `z = mu + exp(logvar / 2) * eps`
pub fn sample_gaussian(params: &GaussianParams, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != params.len() {
        return Err(Error::invalid(
            "sample_gaussian",
            format!("noise has {} entries, latent has {}", noise.len(), params.len()),
        ));
    }
    Ok(params
        .mu
        .iter()
        .zip(&params.logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Per-unit `KL(N(mu, sigma^2) || N(0, 1)) = (mu^2 + sigma^2 - 1 - log sigma^2) / 2`.
pub fn kl_gaussian_std(params: &GaussianParams) -> Vec<f64> {
    params
        .mu
        .iter()
        .zip(&params.logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .collect()
}

/// Gumbel noise from uniform noise, clamped away from 0 and 1.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    -(-u.ln()).ln()
}

/// Relaxed one-hot sample `y = softmax((log alpha + g) / tau)`.
pub fn sample_concrete(params: &ConcreteParams, uniform_noise: &[f64]) -> Result<Vec<f64>> {
    if !(params.temperature > 0.0) {
        return Err(Error::invalid("sample_concrete", "temperature must be > 0"));
    }
    if uniform_noise.len() != params.logits.len() {
        return Err(Error::invalid(
            "sample_concrete",
            format!("noise has {} entries, expected {}", uniform_noise.len(), params.logits.len()),
        ));
    }
    let scaled: Vec<f64> = params
        .log_probs()
        .iter()
        .zip(uniform_noise)
        .map(|(&la, &u)| (la + gumbel_from_uniform(u)) / params.temperature)
        .collect();
    Ok(softmax_slice(&scaled, 1, scaled.len(), 1))
}

/// `KL(Cat(alpha) || Uniform(n)) = sum alpha log alpha + log n`, in `[0, log n]`.
pub fn kl_categorical_uniform(params: &ConcreteParams) -> f64 {
    let n = params.logits.len() as f64;
    // equal logits are the prior itself; skip the sum so rounding cannot leave a residue
    if params.logits.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let kl: f64 = params
        .probs()
        .iter()
        .zip(params.log_probs())
        .map(|(&a, la)| if a > 0.0 { a * la } else { 0.0 })
        .sum::<f64>()
        + n.ln();
    // rounding can leave a tiny negative residue near the uniform point
    kl.clamp(0.0, n.ln())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation followed by one Newton step on the
/// erfc-based CDF.
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("inverse_normal_cdf", format!("p must lie in (0, 1), got {p}")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    let density = normal_pdf(x);
    if density > 0.0 {
        Ok(x - (normal_cdf(x) - p) / density)
    } else {
        Ok(x)
    }
}

// Tape builders. Batched tensors are `[B, d]`.

/// Reparametrized sample `mu + exp(logvar / 2) * eps` with fixed noise `eps`.
pub fn gaussian_sample_on_tape<S: Scalar>(tape: &mut Tape<S>, mu: Var, logvar: Var, noise: Tensor<S>) -> Result<Var> {
    if noise.shape() != tape.shape(mu) {
        return Err(Error::ShapeMismatch {
            op: "sample_gaussian",
            lhs: tape.shape(mu).to_vec(),
            rhs: noise.shape().to_vec(),
        });
    }
    let eps = tape.constant(noise);
    let half = tape.scale(logvar, 0.5)?;
    let sigma = tape.exp(half)?;
    let spread = tape.mul(sigma, eps)?;
    tape.add(mu, spread)
}

/// Per-example, per-unit Gaussian KL `[B, d]`.
pub fn kl_gaussian_on_tape<S: Scalar>(tape: &mut Tape<S>, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(logvar)?;
    let s = tape.add(mu2, var)?;
    let s = tape.sub(s, logvar)?;
    let s = tape.add_scalar(s, -1.0)?;
    tape.scale(s, 0.5)
}

/// Relaxed categorical sample from `[B, n]` logits and fixed uniform noise.
pub fn concrete_sample_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    logits: Var,
    uniform_noise: &[f64],
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("sample_concrete", "temperature must be > 0"));
    }
    let shape = tape.shape(logits).to_vec();
    let gumbel: Vec<f64> = uniform_noise.iter().map(|&u| gumbel_from_uniform(u)).collect();
    let g = Tensor::from_f64(shape, &gumbel)?;
    let g = tape.constant(g);
    let perturbed = tape.add(logits, g)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature)?;
    tape.softmax(scaled, 1)
}

/// Per-example categorical KL to the uniform prior, shape `[B]`.
pub fn kl_categorical_on_tape<S: Scalar>(tape: &mut Tape<S>, logits: Var) -> Result<Var> {
    let n = tape.shape(logits)[1];
    let alpha = tape.softmax(logits, 1)?;
    let log_alpha = tape.log(alpha)?;
    let terms = tape.mul(alpha, log_alpha)?;
    let neg_entropy = tape.reduce_sum(terms, &[1])?;
    tape.add_scalar(neg_entropy, (n as f64).ln())
}
