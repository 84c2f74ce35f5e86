//! Latent traversals and conditional sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::raster::{image_to_png, montage};
use crate::distributions::inverse_normal_cdf;
use crate::error::{Error, Result};
use crate::model::{LatentSpec, Model};

/// Lowest and highest prior quantile visited by a continuous traversal.
pub const TRAVERSAL_QUANTILES: (f64, f64) = (0.05, 0.95);
/// Separator width between montage cells, in pixels.
pub const MONTAGE_GAP: usize = 2;
const MONTAGE_SEPARATOR: f32 = 0.5;

/// One latent unit. Ids `0..d` are continuous units and `d..d + m` the discrete variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum LatentUnit {
    Continuous(usize),
    Discrete(usize),
}

impl LatentUnit {
    pub fn from_id(spec: &LatentSpec, id: usize) -> Result<Self> {
        let d = spec.continuous_dim;
        if id < d {
            Ok(LatentUnit::Continuous(id))
        } else if id < d + spec.discrete_dims.len() {
            Ok(LatentUnit::Discrete(id - d))
        } else {
            Err(Error::invalid(
                "traverse",
                format!("unit {id} out of range: model has {} units", d + spec.discrete_dims.len()),
            ))
        }
    }

    pub fn id(&self, spec: &LatentSpec) -> usize {
        match *self {
            LatentUnit::Continuous(j) => j,
            LatentUnit::Discrete(i) => spec.continuous_dim + i,
        }
    }

    pub fn all(spec: &LatentSpec) -> Vec<Self> {
        (0..spec.continuous_dim)
            .map(LatentUnit::Continuous)
            .chain((0..spec.discrete_dims.len()).map(LatentUnit::Discrete))
            .collect()
    }

    pub fn label(&self) -> String {
        match self {
            LatentUnit::Continuous(j) => format!("z{j}"),
            LatentUnit::Discrete(i) => format!("c{i}"),
        }
    }
}

/// `steps` prior quantiles `Phi^-1(p)`, with `p` evenly spaced over the quantile range.
pub fn traversal_values(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::invalid("traverse", format!("steps must be at least 2, got {steps}")));
    }
    let (lo, hi) = TRAVERSAL_QUANTILES;
    (0..steps)
        .map(|k| inverse_normal_cdf(lo + (hi - lo) * k as f64 / (steps - 1) as f64))
        .collect()
}

fn discrete_offset(spec: &LatentSpec, var: usize) -> usize {
    spec.continuous_dim + spec.discrete_dims[..var].iter().sum::<usize>()
}

/// The prior's central latent: zero continuous part, every discrete variable on category 0.
pub fn prior_center(spec: &LatentSpec) -> Vec<f64> {
    let mut z = vec![0.0; spec.latent_len()];
    for var in 0..spec.discrete_dims.len() {
        z[discrete_offset(spec, var)] = 1.0;
    }
    z
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraversalRow {
    pub unit: LatentUnit,
    /// Traversed value per column: a prior quantile, or the category index.
    pub values: Vec<f64>,
    /// Latent decoded in each column.
    pub latents: Vec<Vec<f64>>,
    /// Decoded frames, `columns x C x H x W`.
    pub frames: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraversalGrid {
    pub image_shape: [usize; 3],
    pub rows: Vec<TraversalRow>,
}

impl TraversalGrid {
    /// Widest row. Discrete rows span their category count, so rows can differ.
    pub fn columns(&self) -> usize {
        self.rows.iter().map(|r| r.values.len()).max().unwrap_or(0)
    }

    pub fn frame(&self, row: usize, col: usize) -> &[f32] {
        let per = self.image_shape.iter().product::<usize>();
        &self.rows[row].frames[col * per..(col + 1) * per]
    }

    /// Rows by columns image with separators; short rows are padded with separator colour.
    pub fn montage(&self) -> (Vec<f32>, [usize; 3]) {
        let cells: Vec<Vec<Option<&[f32]>>> = (0..self.rows.len())
            .map(|r| (0..self.rows[r].values.len()).map(|c| Some(self.frame(r, c))).collect())
            .collect();
        montage(&cells, self.image_shape, MONTAGE_GAP, MONTAGE_SEPARATOR)
    }

    pub fn to_png(&self, text: &[(&str, String)]) -> Result<Vec<u8>> {
        let (pixels, shape) = self.montage();
        image_to_png(&pixels, shape, text)
    }
}

fn check_base(spec: &LatentSpec, base: &[f64]) -> Result<()> {
    if base.len() != spec.latent_len() {
        return Err(Error::invalid(
            "traverse",
            format!("base latent has {} values, model expects {}", base.len(), spec.latent_len()),
        ));
    }
    Ok(())
}

/// Latents visited by traversing `unit` from `base`; every other coordinate is copied unchanged.
pub fn traversal_latents(spec: &LatentSpec, base: &[f64], unit: LatentUnit, steps: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_base(spec, base)?;
    match unit {
        LatentUnit::Continuous(j) if j < spec.continuous_dim => {
            let values = traversal_values(steps)?;
            let latents = values
                .iter()
                .map(|&v| {
                    let mut z = base.to_vec();
                    z[j] = v;
                    z
                })
                .collect();
            Ok((values, latents))
        }
        LatentUnit::Discrete(i) if i < spec.discrete_dims.len() => {
            let n = spec.discrete_dims[i];
            let off = discrete_offset(spec, i);
            let latents = (0..n)
                .map(|c| {
                    let mut z = base.to_vec();
                    z[off..off + n].iter_mut().enumerate().for_each(|(k, v)| *v = if k == c { 1.0 } else { 0.0 });
                    z
                })
                .collect();
            Ok(((0..n).map(|c| c as f64).collect(), latents))
        }
        _ => Err(Error::invalid("traverse", format!("unit {} is not part of the model", unit.label()))),
    }
}

pub fn traverse_unit(model: &Model<f32>, base: &[f64], unit: LatentUnit, steps: usize) -> Result<TraversalRow> {
    let (values, latents) = traversal_latents(model.latent_spec(), base, unit, steps)?;
    let flat: Vec<f64> = latents.iter().flatten().copied().collect();
    let frames = model.decode_f64(&flat)?.into_data();
    Ok(TraversalRow {
        unit,
        values,
        latents,
        frames,
    })
}

/// One row per base latent, all traversing the same unit.
pub fn traverse_unit_over(model: &Model<f32>, bases: &[Vec<f64>], unit: LatentUnit, steps: usize) -> Result<TraversalGrid> {
    let rows = bases.iter().map(|b| traverse_unit(model, b, unit, steps)).collect::<Result<_>>()?;
    Ok(TraversalGrid {
        image_shape: model.config().image_shape,
        rows,
    })
}

/// One row per latent unit, continuous units first.
pub fn traverse_all(model: &Model<f32>, base: &[f64], steps: usize) -> Result<TraversalGrid> {
    let rows = LatentUnit::all(model.latent_spec())
        .into_iter()
        .map(|u| traverse_unit(model, base, u, steps))
        .collect::<Result<_>>()?;
    Ok(TraversalGrid {
        image_shape: model.config().image_shape,
        rows,
    })
}

/// Latents with prior continuous parts and the given category of every discrete variable.
pub fn conditional_latents(spec: &LatentSpec, assignment: &[usize], count: usize, seed: u64) -> Result<Vec<f64>> {
    if assignment.len() != spec.discrete_dims.len() {
        return Err(Error::invalid(
            "sample",
            format!("{} categories given for {} discrete variables", assignment.len(), spec.discrete_dims.len()),
        ));
    }
    for (i, (&c, &n)) in assignment.iter().zip(&spec.discrete_dims).enumerate() {
        if c >= n {
            return Err(Error::invalid("sample", format!("category {c} out of range for variable {i} with {n} categories")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * spec.latent_len());
    for _ in 0..count {
        for _ in 0..spec.continuous_dim {
            out.push(StandardNormal.sample(&mut rng));
        }
        for (&c, &n) in assignment.iter().zip(&spec.discrete_dims) {
            out.extend((0..n).map(|k| if k == c { 1.0 } else { 0.0 }));
        }
    }
    Ok(out)
}

/// Decodes `count` samples conditioned on a category per discrete variable, `[count, C, H, W]`.
pub fn conditional_sample(model: &Model<f32>, assignment: &[usize], count: usize, seed: u64) -> Result<Vec<f32>> {
    if count == 0 {
        return Err(Error::invalid("sample", "count must be positive"));
    }
    let z = conditional_latents(model.latent_spec(), assignment, count, seed)?;
    Ok(model.decode_f64(&z)?.into_data())
}
