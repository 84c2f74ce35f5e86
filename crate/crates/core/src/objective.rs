//! Training objectives and capacity scheduling.
//!
//! All KL terms are averaged over the batch before any capacity penalty.
//! The subgradient of `|u|` at `u = 0` is taken as 0.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::distributions::{
    concrete_sample_on_tape, gaussian_sample_on_tape, kl_categorical_on_tape, kl_gaussian_on_tape, ConcreteParams,
    GaussianParams,
};
use crate::error::{Error, Result};
use crate::model::{BoundParams, LatentNoise, LatentSpec, Model};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacitySchedule {
    pub gamma: f64,
    pub cz_max: f64,
    pub cz_ramp_iters: u64,
    pub cc_max: f64,
    pub cc_ramp_iters: u64,
}

impl CapacitySchedule {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !finite_nonneg(self.cz_max) || !finite_nonneg(self.cc_max) {
            return Err(Error::Config("capacities must be finite and nonnegative".into()));
        }
        if self.cz_ramp_iters == 0 || self.cc_ramp_iters == 0 {
            return Err(Error::Config("capacity ramps need at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveMode {
    Vae,
    BetaVae { beta: f64 },
    /// Single capacity on the total KL; the target follows the `C_z` ramp.
    CcBetaVae { gamma: f64, schedule: CapacitySchedule },
    JointVae { schedule: CapacitySchedule },
}

impl ObjectiveMode {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveMode::Vae => "vae",
            ObjectiveMode::BetaVae { .. } => "beta",
            ObjectiveMode::CcBetaVae { .. } => "ccbeta",
            ObjectiveMode::JointVae { .. } => "joint",
        }
    }

    pub fn validate(&self, spec: &LatentSpec) -> Result<()> {
        match self {
            ObjectiveMode::Vae => Ok(()),
            ObjectiveMode::BetaVae { beta } => {
                if *beta > 0.0 && beta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("beta must be > 0, got {beta}")))
                }
            }
            ObjectiveMode::CcBetaVae { gamma, schedule } => {
                schedule.validate()?;
                if *gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("gamma must be > 0, got {gamma}")))
                }
            }
            ObjectiveMode::JointVae { schedule } => {
                schedule.validate()?;
                if spec.discrete_dims.is_empty() {
                    Err(Error::Config("joint objective needs at least one discrete latent variable".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// `(C_z, C_c)` at a given iteration; `C_c` is clipped to `sum_i log n_i`.
pub fn capacity_at(schedule: &CapacitySchedule, iter: u64, discrete_dims: &[usize]) -> (f64, f64) {
    let ramp = |max: f64, iters: u64| max * (iter as f64 / iters.max(1) as f64).min(1.0);
    let cc_limit: f64 = discrete_dims.iter().map(|&n| (n as f64).ln()).sum();
    (
        ramp(schedule.cz_max, schedule.cz_ramp_iters),
        ramp(schedule.cc_max, schedule.cc_ramp_iters).min(cc_limit),
    )
}

/// Capacity targets under a mode, `(0, 0)` when the mode has none.
pub fn mode_capacities(mode: &ObjectiveMode, iter: u64, discrete_dims: &[usize]) -> (f64, f64) {
    match mode {
        ObjectiveMode::JointVae { schedule } => capacity_at(schedule, iter, discrete_dims),
        ObjectiveMode::CcBetaVae { schedule, .. } => (capacity_at(schedule, iter, discrete_dims).0, 0.0),
        _ => (0.0, 0.0),
    }
}

/// Bernoulli negative log-likelihood summed over pixels, averaged over the batch.
pub fn reconstruction_loss(probs: &[f64], targets: &[f64], batch: usize) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "reconstruction_loss",
            lhs: vec![probs.len()],
            rhs: vec![targets.len()],
        });
    }
    if batch == 0 {
        return Err(Error::invalid("reconstruction_loss", "batch must be nonempty"));
    }
    let eps = crate::autodiff::BCE_EPS;
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / batch as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub recon: f64,
    pub kl_continuous_per_unit: Vec<f64>,
    pub kl_discrete_per_var: Vec<f64>,
    /// `(C_z, C_c)` at this iteration.
    pub capacities: (f64, f64),
}

impl LossReport {
    pub fn kl_continuous(&self) -> f64 {
        self.kl_continuous_per_unit.iter().sum()
    }

    pub fn kl_discrete(&self) -> f64 {
        self.kl_discrete_per_var.iter().sum()
    }
}

fn combine(mode: &ObjectiveMode, recon: f64, kl_z: f64, kl_c: f64, caps: (f64, f64)) -> f64 {
    match mode {
        ObjectiveMode::Vae => recon + kl_z + kl_c,
        ObjectiveMode::BetaVae { beta } => recon + beta * (kl_z + kl_c),
        ObjectiveMode::CcBetaVae { gamma, .. } => recon + gamma * (kl_z + kl_c - caps.0).abs(),
        ObjectiveMode::JointVae { schedule } => {
            recon + schedule.gamma * (kl_z - caps.0).abs() + schedule.gamma * (kl_c - caps.1).abs()
        }
    }
}

/// Batch-averaged loss terms feeding [`total_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct LossInputs {
    pub recon: f64,
    pub kl_continuous_per_unit: Vec<f64>,
    pub kl_discrete_per_var: Vec<f64>,
}

pub fn total_loss(mode: &ObjectiveMode, spec: &LatentSpec, inputs: LossInputs, iter: u64) -> Result<LossReport> {
    mode.validate(spec)?;
    if inputs.kl_continuous_per_unit.len() != spec.continuous_dim
        || inputs.kl_discrete_per_var.len() != spec.discrete_dims.len()
    {
        return Err(Error::invalid(
            "total_loss",
            format!(
                "KL vectors of length {}/{} do not match latent spec {}/{}",
                inputs.kl_continuous_per_unit.len(),
                inputs.kl_discrete_per_var.len(),
                spec.continuous_dim,
                spec.discrete_dims.len()
            ),
        ));
    }
    let caps = mode_capacities(mode, iter, &spec.discrete_dims);
    let kl_z: f64 = inputs.kl_continuous_per_unit.iter().sum();
    let kl_c: f64 = inputs.kl_discrete_per_var.iter().sum();
    Ok(LossReport {
        total: combine(mode, inputs.recon, kl_z, kl_c, caps),
        recon: inputs.recon,
        kl_continuous_per_unit: inputs.kl_continuous_per_unit,
        kl_discrete_per_var: inputs.kl_discrete_per_var,
        capacities: caps,
    })
}

/// Recomputes the total of a report under `mode`.
pub fn recombine(mode: &ObjectiveMode, report: &LossReport) -> f64 {
    combine(mode, report.recon, report.kl_continuous(), report.kl_discrete(), report.capacities)
}

/// `|KL_joint - (sum KL_z + sum KL_c)|` where `KL_joint` is one pass over
/// every factor of the posterior.
pub fn kl_joint_split_check(gaussian: &GaussianParams, discretes: &[ConcreteParams]) -> f64 {
    let mut joint = 0.0;
    for (m, lv) in gaussian.mu.iter().zip(&gaussian.logvar) {
        joint += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    for c in discretes {
        let n = c.logits.len() as f64;
        for a in c.probs() {
            if a > 0.0 {
                joint += a * (a * n).ln();
            }
        }
    }
    let split: f64 = crate::distributions::kl_gaussian_std(gaussian).iter().sum::<f64>()
        + discretes.iter().map(crate::distributions::kl_categorical_uniform).sum::<f64>();
    (joint - split).abs()
}

/// Tape handles of one full forward pass.
pub struct ForwardPass {
    pub total: Var,
    pub recon: Var,
    /// Batch-mean KL per continuous unit, `[d]`.
    pub kl_units: Option<Var>,
    /// Batch-mean KL per discrete variable, scalars.
    pub kl_vars: Vec<Var>,
    pub probs: Var,
}

/// Encode, sample with fixed `noise`, decode and score `x: [B, C, H, W]`.
pub fn forward_loss<S: Scalar>(
    model: &Model<S>,
    tape: &mut Tape<S>,
    bound: &BoundParams,
    x: Var,
    noise: &LatentNoise,
    mode: &ObjectiveMode,
    iter: u64,
) -> Result<ForwardPass> {
    let spec = model.latent_spec();
    mode.validate(spec)?;
    let batch = model.check_images(tape.shape(x))?;
    let enc = model.encode_on_tape(tape, bound, x)?;

    let mut parts = Vec::new();
    let mut kl_units = None;
    if let (Some(mu), Some(logvar)) = (enc.mu, enc.logvar) {
        let eps = Tensor::from_f64(vec![batch, spec.continuous_dim], &noise.gaussian)?;
        parts.push(gaussian_sample_on_tape(tape, mu, logvar, eps)?);
        let kl = kl_gaussian_on_tape(tape, mu, logvar)?;
        kl_units = Some(tape.reduce_mean(kl, &[0])?);
    }
    let mut kl_vars = Vec::new();
    for (i, &logits) in enc.logits.iter().enumerate() {
        let u = noise
            .uniform
            .get(i)
            .ok_or_else(|| Error::invalid("forward_loss", "missing uniform noise for discrete variable"))?;
        parts.push(concrete_sample_on_tape(tape, logits, u, spec.temperature)?);
        let kl = kl_categorical_on_tape(tape, logits)?;
        kl_vars.push(tape.reduce_mean(kl, &[0])?);
    }
    let latent = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 1)? };
    let probs = model.decode_on_tape(tape, bound, latent)?;

    let bce = tape.binary_cross_entropy(probs, x)?;
    let bce = tape.sum_all(bce)?;
    let recon = tape.scale(bce, 1.0 / batch as f64)?;

    let kl_z = match kl_units {
        Some(v) => Some(tape.sum_all(v)?),
        None => None,
    };
    let kl_c = sum_scalars(tape, &kl_vars)?;
    let caps = mode_capacities(mode, iter, &spec.discrete_dims);
    let kl_all = match (kl_z, kl_c) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (a, b) => a.or(b),
    };

    let total = match mode {
        ObjectiveMode::Vae => add_opt(tape, recon, kl_all, 1.0)?,
        ObjectiveMode::BetaVae { beta } => add_opt(tape, recon, kl_all, *beta)?,
        ObjectiveMode::CcBetaVae { gamma, .. } => {
            let pen = penalty(tape, kl_all, caps.0, *gamma)?;
            tape.add(recon, pen)?
        }
        ObjectiveMode::JointVae { schedule } => {
            let pz = penalty(tape, kl_z, caps.0, schedule.gamma)?;
            let pc = penalty(tape, kl_c, caps.1, schedule.gamma)?;
            let t = tape.add(recon, pz)?;
            tape.add(t, pc)?
        }
    };
    Ok(ForwardPass {
        total,
        recon,
        kl_units,
        kl_vars,
        probs,
    })
}

fn sum_scalars<S: Scalar>(tape: &mut Tape<S>, xs: &[Var]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &x in xs {
        acc = Some(match acc {
            Some(a) => tape.add(a, x)?,
            None => x,
        });
    }
    Ok(acc)
}

fn add_opt<S: Scalar>(tape: &mut Tape<S>, base: Var, term: Option<Var>, weight: f64) -> Result<Var> {
    match term {
        Some(t) => {
            let w = tape.scale(t, weight)?;
            tape.add(base, w)
        }
        None => Ok(base),
    }
}

/// `gamma * |kl - capacity|`; a missing KL counts as 0.
fn penalty<S: Scalar>(tape: &mut Tape<S>, kl: Option<Var>, capacity: f64, gamma: f64) -> Result<Var> {
    match kl {
        Some(kl) => {
            let d = tape.add_scalar(kl, -capacity)?;
            let a = tape.abs(d)?;
            tape.scale(a, gamma)
        }
        None => Ok(tape.constant(Tensor::scalar(S::from_f64_lossy(gamma * capacity)))),
    }
}

/// Reads a [`LossReport`] back from an evaluated forward pass.
pub fn report_from_tape<S: Scalar>(
    tape: &Tape<S>,
    pass: &ForwardPass,
    mode: &ObjectiveMode,
    spec: &LatentSpec,
    iter: u64,
) -> LossReport {
    let scalar = |v: Var| tape.value(v).to_f64_vec()[0];
    LossReport {
        total: scalar(pass.total),
        recon: scalar(pass.recon),
        kl_continuous_per_unit: pass.kl_units.map(|v| tape.value(v).to_f64_vec()).unwrap_or_default(),
        kl_discrete_per_var: pass.kl_vars.iter().map(|&v| scalar(v)).collect(),
        capacities: mode_capacities(mode, iter, &spec.discrete_dims),
    }
}
