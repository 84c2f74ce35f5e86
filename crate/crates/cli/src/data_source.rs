//! Resolves `--dataset` / `--data` arguments to loaded datasets.

use std::path::{Path, PathBuf};

use jointvae_core::data::{load_dsprites, load_idx, synth_shapes, Dataset, DATA_DIR_ENV};

use crate::CliError;

/// Copies per grid cell in the synthetic dataset (12,288 images).
pub const SYNTH_PER_CELL: usize = 16;
pub const DSPRITES_ARCHIVE: &str = "dsprites_ndarray_co1sh3sc6or40x32y32_64x64.npz";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn data_root(flag: &str) -> Result<PathBuf, CliError> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
        CliError::Runtime(format!(
            "{flag}: {DATA_DIR_ENV} is not set; real datasets are read from that directory and never downloaded"
        ))
    })
}

/// `dir/name` or `dir/name.gz`, whichever exists.
fn idx_file(dir: &Path, name: &str) -> Option<PathBuf> {
    [dir.join(name), dir.join(format!("{name}.gz"))].into_iter().find(|p| p.is_file())
}

fn load_idx_dir(dir: &Path, split: Split, flag: &str) -> Result<Dataset, CliError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = idx_file(dir, &format!("{prefix}-images-idx3-ubyte"));
    let labels = idx_file(dir, &format!("{prefix}-labels-idx1-ubyte"));
    match (images, labels) {
        (Some(i), Some(l)) => load_idx(&i, &l).map_err(|e| CliError::Runtime(format!("{flag}: {e}"))),
        _ => Err(CliError::Runtime(format!(
            "{flag}: {} has no {prefix}-images-idx3-ubyte[.gz] / {prefix}-labels-idx1-ubyte[.gz] pair",
            dir.display()
        ))),
    }
}

fn load_npz(path: &Path, flag: &str) -> Result<Dataset, CliError> {
    load_dsprites(path, None, 0).map_err(|e| CliError::Runtime(format!("{flag}: {e}")))
}

/// Loads a named dataset or a path (an `.npz` archive or a directory of IDX files).
pub fn load_source(src: &str, split: Split, flag: &str) -> Result<Dataset, CliError> {
    match src {
        "synth" => Ok(synth_shapes(SYNTH_PER_CELL, 0)),
        "mnist" | "fashion" => load_idx_dir(&data_root(flag)?.join(src), split, flag),
        "dsprites" => load_npz(&data_root(flag)?.join("dsprites").join(DSPRITES_ARCHIVE), flag),
        other => {
            let path = Path::new(other);
            if path.is_dir() {
                load_idx_dir(path, split, flag)
            } else if path.is_file() {
                load_npz(path, flag)
            } else {
                Err(CliError::Runtime(format!(
                    "{flag}: {other} is neither a known dataset (synth, mnist, fashion, dsprites) nor an existing path"
                )))
            }
        }
    }
}

/// Applies an optional `--limit` as a seeded subset.
pub fn limit(data: Dataset, limit: Option<usize>, seed: u64) -> Dataset {
    match limit {
        Some(k) if k < data.len() => data.subset(k, seed),
        _ => data,
    }
}
