//! Command-line workflows and the HTTP inference service.

pub mod data_source;
pub mod server;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use jointvae_core::eval::{
    conditional_sample, factor_metric, model_cluster_accuracy, prior_center, rank_latents_by_kl, traverse_all, traverse_unit_over,
    FactorMetricOptions, LatentUnit, ResultRecord, DEFAULT_BATCH_PER_VOTE, DEFAULT_VOTES, MONTAGE_GAP,
};
use jointvae_core::eval::raster::{image_to_png, montage};
use jointvae_core::model::{load_checkpoint, save_checkpoint, Checkpoint};
use jointvae_core::train::{preset, train_with_observer, ObjectiveKind, TrainConfig};
use jointvae_core::util::config_hash;

use data_source::{limit, load_source, Split};

/// Exit status for malformed or inconsistent arguments.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failures while doing the work.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn runtime(context: impl fmt::Display) -> impl FnOnce(jointvae_core::Error) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

#[derive(Parser, Debug)]
#[command(name = "jointvae", version, about = "Train and inspect joint continuous/discrete VAEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    Fashion,
    Dsprites,
    Synth,
}

impl DatasetArg {
    fn name(self) -> &'static str {
        match self {
            DatasetArg::Mnist => "mnist",
            DatasetArg::Fashion => "fashion",
            DatasetArg::Dsprites => "dsprites",
            DatasetArg::Synth => "synth",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Vae,
    Beta,
    Ccbeta,
    Joint,
}

impl From<ObjectiveArg> for ObjectiveKind {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Vae => ObjectiveKind::Vae,
            ObjectiveArg::Beta => ObjectiveKind::Beta,
            ObjectiveArg::Ccbeta => ObjectiveKind::CcBeta,
            ObjectiveArg::Joint => ObjectiveKind::Joint,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint plus a per-iteration CSV log.
    Train {
        #[arg(long, value_enum)]
        dataset: DatasetArg,
        /// Hyperparameter preset; defaults to the dataset's own.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, value_enum, default_value = "joint")]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint path; the log goes to the same path with `.csv` appended.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train on a seeded subset of this many images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Decode latent traversals into a PNG montage.
    Traverse {
        #[arg(long)]
        ckpt: PathBuf,
        /// Unit id (continuous units first, then discrete variables); all units if omitted.
        #[arg(long)]
        unit: Option<usize>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode prior samples with the discrete variables fixed.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Category per discrete variable, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        fix_discrete: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print latent units ranked by data-averaged KL.
    Rank {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Print the factor-vote disentanglement score as JSON.
    Metric {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = DEFAULT_VOTES)]
        votes: usize,
        #[arg(long, default_value_t = DEFAULT_BATCH_PER_VOTE)]
        batch_per_vote: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Print unsupervised accuracy of the discrete variable as JSON.
    Accuracy {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: String,
        /// Ground-truth factor to match: a name or index (default 0).
        #[arg(long)]
        factor: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Serve encode/decode endpoints for a checkpoint.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_ckpt(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::Runtime(format!("--ckpt: {} does not exist", path.display())));
    }
    load_checkpoint(path).map_err(runtime(format!("--ckpt {}", path.display())))
}

fn write_file(path: &Path, flag: &str, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{flag}: cannot write {}: {e}", path.display())))
}

fn provenance(ckpt: &Checkpoint) -> (String, u64) {
    (config_hash(ckpt.model.config()), ckpt.state.seed)
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train {
            dataset,
            preset: preset_name,
            objective,
            seed,
            out,
            epochs,
            limit: subset,
        } => {
            let preset_name = preset_name.unwrap_or_else(|| dataset.name().to_string());
            let mut p = preset(&preset_name).map_err(|e| CliError::Usage(format!("--preset: {e}")))?;
            if let Some(e) = epochs {
                if e == 0 {
                    return Err(CliError::Usage("--epochs: must be at least 1".into()));
                }
                p.epochs = e;
            }
            if subset == Some(0) {
                return Err(CliError::Usage("--limit: must be at least 1".into()));
            }
            let config = TrainConfig::from_preset(&p, objective.into(), dataset.name(), seed)
                .map_err(|e| CliError::Usage(format!("--preset {preset_name}: {e}")))?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("jointvae-{}-{:?}-s{seed}.ckpt", dataset.name(), objective).to_lowercase()));
            let data = limit(load_source(dataset.name(), Split::Train, "--dataset")?, subset, seed);
            if data.image_shape != config.model.image_shape {
                return Err(CliError::Usage(format!(
                    "--preset {preset_name}: expects {:?} images but --dataset {} has {:?}",
                    config.model.image_shape,
                    dataset.name(),
                    data.image_shape
                )));
            }
            log::info!("training {} iterations per epoch on {} images", config.iterations_per_epoch(data.len()), data.len());
            let (ckpt, log) = train_with_observer(&config, &data, |row| {
                log::info!("iter {} recon {:.3} total {:.3}", row.iteration, row.report.recon, row.report.total);
            })
            .map_err(runtime("training"))?;
            save_checkpoint(&out, &ckpt.model, &ckpt.state).map_err(runtime(format!("--out {}", out.display())))?;
            let csv = PathBuf::from(format!("{}.csv", out.display()));
            log.write_csv(&csv).map_err(runtime(format!("--out {}", csv.display())))?;
            let last = log.last().expect("at least one row");
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": out.display().to_string(),
                    "log": csv.display().to_string(),
                    "iterations": ckpt.state.iteration,
                    "final_recon": last.report.recon,
                    "final_total": last.report.total,
                    "seed": seed,
                    "config_hash": config_hash(&config.model),
                })
            );
            Ok(())
        }
        Command::Traverse { ckpt, unit, steps, out } => {
            if steps < 2 {
                return Err(CliError::Usage(format!("--steps: must be at least 2, got {steps}")));
            }
            let c = load_ckpt(&ckpt)?;
            let spec = c.model.latent_spec().clone();
            let base = prior_center(&spec);
            let grid = match unit {
                Some(id) => {
                    let u = LatentUnit::from_id(&spec, id).map_err(|e| CliError::Usage(format!("--unit: {e}")))?;
                    traverse_unit_over(&c.model, &[base], u, steps)
                }
                None => traverse_all(&c.model, &base, steps),
            }
            .map_err(runtime("traverse"))?;
            let (hash, seed) = provenance(&c);
            let units: Vec<String> = grid.rows.iter().map(|r| r.unit.label()).collect();
            let png = grid
                .to_png(&[("config_hash", hash), ("seed", seed.to_string()), ("rows", units.join(","))])
                .map_err(runtime("--out"))?;
            write_file(&out, "--out", &png)?;
            println!("wrote {} rows x {} columns to {}", grid.rows.len(), grid.columns(), out.display());
            Ok(())
        }
        Command::Sample {
            ckpt,
            fix_discrete,
            count,
            seed,
            out,
        } => {
            if count == 0 {
                return Err(CliError::Usage("--count: must be at least 1".into()));
            }
            let c = load_ckpt(&ckpt)?;
            let dims = &c.model.latent_spec().discrete_dims;
            if fix_discrete.len() != dims.len() {
                return Err(CliError::Usage(format!(
                    "--fix-discrete: model has {} discrete variables, got {} categories",
                    dims.len(),
                    fix_discrete.len()
                )));
            }
            if let Some((i, (&k, &n))) = fix_discrete.iter().zip(dims).enumerate().find(|(_, (&k, &n))| k >= n) {
                return Err(CliError::Usage(format!("--fix-discrete: category {k} out of range for variable {i} with {n} categories")));
            }
            let frames = conditional_sample(&c.model, &fix_discrete, count, seed).map_err(runtime("sample"))?;
            let shape = c.model.config().image_shape;
            let per = shape.iter().product::<usize>();
            let cols = (count as f64).sqrt().ceil() as usize;
            let cells: Vec<Vec<Option<&[f32]>>> = frames.chunks(per).collect::<Vec<_>>().chunks(cols).map(|r| r.iter().map(|f| Some(*f)).collect()).collect();
            let (pixels, mshape) = montage(&cells, shape, MONTAGE_GAP, 0.5);
            let (hash, _) = provenance(&c);
            let png = image_to_png(&pixels, mshape, &[("config_hash", hash), ("seed", seed.to_string())]).map_err(runtime("--out"))?;
            write_file(&out, "--out", &png)?;
            println!("wrote {count} samples to {}", out.display());
            Ok(())
        }
        Command::Rank { ckpt, data, limit: subset } => {
            let c = load_ckpt(&ckpt)?;
            let ds = limit(load_source(&data, Split::Test, "--data")?, subset, 0);
            let ranking = rank_latents_by_kl(&c.model, &ds).map_err(runtime("--data"))?;
            print!("{}", ranking.to_table());
            println!("total {:.4}", ranking.total());
            Ok(())
        }
        Command::Metric {
            ckpt,
            data,
            votes,
            batch_per_vote,
            seed,
            limit: subset,
        } => {
            if votes == 0 {
                return Err(CliError::Usage("--votes: must be at least 1".into()));
            }
            if batch_per_vote < 2 {
                return Err(CliError::Usage("--batch-per-vote: must be at least 2".into()));
            }
            let c = load_ckpt(&ckpt)?;
            let ds = limit(load_source(&data, Split::Test, "--data")?, subset, seed);
            let opts = FactorMetricOptions {
                votes,
                batch_per_vote,
                seed,
            };
            let r = factor_metric(&c.model, &ds, &opts).map_err(runtime("--data"))?;
            let record = ResultRecord {
                metric: "factor_metric".into(),
                score: r.score,
                votes: Some(votes),
                seed,
                config_hash: provenance(&c).0,
                warning: None,
            };
            let mut v = serde_json::to_value(&record).expect("serializable");
            v["batch_per_vote"] = batch_per_vote.into();
            println!("{v}");
            Ok(())
        }
        Command::Accuracy {
            ckpt,
            data,
            factor,
            limit: subset,
        } => {
            let c = load_ckpt(&ckpt)?;
            if c.model.latent_spec().discrete_dims.len() != 1 {
                return Err(CliError::Usage(format!(
                    "--ckpt: accuracy needs exactly one discrete variable, model has {}",
                    c.model.latent_spec().discrete_dims.len()
                )));
            }
            let ds = limit(load_source(&data, Split::Test, "--data")?, subset, 0);
            let names = ds.factor_names.clone().unwrap_or_default();
            let index = match factor.as_deref() {
                None => 0,
                Some(f) => f.parse::<usize>().ok().or_else(|| names.iter().position(|n| n == f)).ok_or_else(|| {
                    CliError::Usage(format!("--factor: {f} is not one of {names:?}"))
                })?,
            };
            if index >= names.len().max(ds.num_factors()) {
                return Err(CliError::Usage(format!("--factor: index {index} out of range")));
            }
            let acc = model_cluster_accuracy(&c.model, &ds, index).map_err(runtime("--data"))?;
            if let Some(w) = &acc.warning {
                log::warn!("{w}");
            }
            let record = ResultRecord {
                metric: "cluster_accuracy".into(),
                score: acc.accuracy,
                votes: None,
                seed: c.state.seed,
                config_hash: provenance(&c).0,
                warning: acc.warning,
            };
            println!("{}", serde_json::to_string(&record).expect("serializable"));
            Ok(())
        }
        Command::Serve {
            ckpt,
            port,
            host,
            static_dir,
        } => {
            if let Some(d) = &static_dir {
                if !d.is_dir() {
                    return Err(CliError::Usage(format!("--static: {} is not a directory", d.display())));
                }
            }
            let c = load_ckpt(&ckpt)?;
            let app = server::router(c.model, static_dir);
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(format!("runtime: {e}")))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| CliError::Runtime(format!("--port {port}: cannot bind {host}: {e}")))?;
                let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
                println!("listening on http://{addr}");
                server::serve(listener, app).await.map_err(|e| CliError::Runtime(format!("serve: {e}")))
            })
        }
    }
}
