//! Seeded training loop with per-unit KL logging.

mod adam;
mod presets;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, LatentNoise, Model, ModelConfig, TrainingState};
use crate::objective::{forward_loss, report_from_tape, LossReport, ObjectiveMode};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use presets::{preset, ObjectiveKind, Preset, BASELINE_BETA, PRESET_NAMES, DESK_BATCH_SIZE, DESK_CZ_MAX, DESK_GAMMA, DESK_RAMP_ITERS, SYNTH_RAMP_ITERS};

pub const DEFAULT_KL_LOG_INTERVAL: u64 = 50;

// independent ChaCha streams derived from the run seed
const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: String,
    pub model: ModelConfig,
    pub objective: ObjectiveMode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub kl_log_interval: u64,
}

impl TrainConfig {
    pub fn from_preset(preset: &Preset, kind: ObjectiveKind, dataset: &str, seed: u64) -> Result<Self> {
        Ok(TrainConfig {
            dataset: dataset.to_string(),
            model: preset.model_config(kind)?,
            objective: preset.objective(kind),
            learning_rate: preset.learning_rate,
            batch_size: preset.batch_size,
            epochs: preset.epochs,
            seed,
            kl_log_interval: DEFAULT_KL_LOG_INTERVAL,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.objective.validate(&self.model.latent_spec)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.kl_log_interval == 0 {
            return Err(Error::Config("batch size, epochs and log interval must be positive".into()));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub epoch: usize,
    pub report: LossReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    /// CSV with `iteration, recon, kl_z_total, kl_c_total`, one column per
    /// continuous unit, one per discrete variable, then total and capacities.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,recon,kl_z_total,kl_c_total");
        if let Some(first) = self.rows.first() {
            for j in 0..first.report.kl_continuous_per_unit.len() {
                let _ = write!(out, ",kl_z{j}");
            }
            for j in 0..first.report.kl_discrete_per_var.len() {
                let _ = write!(out, ",kl_c{j}");
            }
        }
        out.push_str(",total,capacity_z,capacity_c\n");
        for row in &self.rows {
            let r = &row.report;
            let _ = write!(out, "{},{},{},{}", row.iteration, r.recon, r.kl_continuous(), r.kl_discrete());
            for v in r.kl_continuous_per_unit.iter().chain(&r.kl_discrete_per_var) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{},{}", r.total, r.capacities.0, r.capacities.1);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&TrainLogRow> {
        self.rows.last()
    }
}

pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<(Checkpoint, TrainLog)> {
    train_with_observer(config, dataset, |_| {})
}

/// Like [`train`], calling `observe` for every logged row.
pub fn train_with_observer(
    config: &TrainConfig,
    dataset: &Dataset,
    mut observe: impl FnMut(&TrainLogRow),
) -> Result<(Checkpoint, TrainLog)> {
    config.validate()?;
    if dataset.image_shape != config.model.image_shape {
        return Err(Error::Config(format!(
            "dataset images {:?} do not match model input {:?}",
            dataset.image_shape, config.model.image_shape
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let spec = config.model.latent_spec.clone();
    let mut model = Model::<f32>::build(config.model.clone(), config.seed)?;
    let mut adam = AdamState::new(&model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(NOISE_STREAM);

    let total_iters = config.iterations_per_epoch(dataset.len()) * config.epochs as u64;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut iteration = 0u64;
    let last_report = |log: &TrainLog| {
        log.last()
            .map(|r| serde_json::to_string(r).unwrap_or_default())
            .unwrap_or_else(|| "none".into())
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let x = dataset.batch(chunk);
            let noise = LatentNoise::draw(&mut noise_rng, chunk.len(), &spec);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let xv = tape.constant(x);
            let pass = match forward_loss(&model, &mut tape, &bound, xv, &noise, &config.objective, iteration) {
                Ok(pass) => pass,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        iteration,
                        last_report: last_report(&log),
                    })
                }
                Err(e) => return Err(e),
            };
            let report = report_from_tape(&tape, &pass, &config.objective, &spec, iteration);
            if !report.total.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    last_report: last_report(&log),
                });
            }
            tape.backward(pass.total)?;
            let grads: Vec<&[f32]> = bound
                .vars()
                .iter()
                .map(|&v| tape.grad(v).expect("parameter leaves carry gradients"))
                .collect();
            adam.update(&mut model, &grads, config.learning_rate)?;

            if iteration % config.kl_log_interval == 0 || iteration + 1 == total_iters {
                let row = TrainLogRow {
                    iteration,
                    epoch,
                    report,
                };
                observe(&row);
                log.rows.push(row);
            }
            iteration += 1;
        }
    }

    let state = TrainingState {
        iteration,
        seed: config.seed,
        metadata: serde_json::to_value(config)?,
        extra: adam.to_tensors(&model),
    };
    Ok((Checkpoint { model, state }, log))
}

#[cfg(test)]
mod tests;
