//! Datasets: IDX files, the dSprites archive and a synthetic shape grid.

mod dsprites;
mod idx;
pub(crate) mod npy;
mod synth;
pub(crate) mod zip;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use dsprites::{load_dsprites, DSPRITES_FACTOR_SIZES};
pub use idx::{load_idx, pad_to};
pub use synth::{synth_shapes, synth_shapes_with, SynthOptions, SYNTH_FACTOR_SIZES, SYNTH_SHAPES};

/// Environment variable naming the directory that holds downloaded datasets.
pub const DATA_DIR_ENV: &str = "JOINTVAE_DATA_DIR";

/// Images in `[0, 1]` with optional integer ground-truth factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Channels, height, width.
    pub image_shape: [usize; 3],
    /// Row-major `N x C x H x W`.
    pub images: Vec<f32>,
    /// Row-major `N x F` class indices.
    pub factors: Option<Vec<u32>>,
    pub factor_sizes: Option<Vec<usize>>,
    pub factor_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(image_shape: [usize; 3], images: Vec<f32>) -> Result<Self> {
        let per = image_shape.iter().product::<usize>();
        if per == 0 || images.len() % per != 0 {
            return Err(Error::invalid(
                "dataset",
                format!("{} values do not split into images of shape {image_shape:?}", images.len()),
            ));
        }
        if let Some(i) = images.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("dataset", format!("pixel {i} outside [0, 1]: {}", images[i])));
        }
        Ok(Dataset {
            image_shape,
            images,
            factors: None,
            factor_sizes: None,
            factor_names: None,
        })
    }

    pub fn with_factors(mut self, factors: Vec<u32>, sizes: Vec<usize>, names: Vec<String>) -> Result<Self> {
        let f = sizes.len();
        if f == 0 || factors.len() != self.len() * f || names.len() != f {
            return Err(Error::invalid(
                "dataset",
                format!("{} factor values for {} images and {f} factors", factors.len(), self.len()),
            ));
        }
        for (k, row) in factors.chunks(f).enumerate() {
            if let Some(j) = (0..f).find(|&j| row[j] as usize >= sizes[j]) {
                return Err(Error::invalid(
                    "dataset",
                    format!("image {k}: factor {} = {} outside [0, {})", names[j], row[j], sizes[j]),
                ));
            }
        }
        self.factors = Some(factors);
        self.factor_sizes = Some(sizes);
        self.factor_names = Some(names);
        Ok(self)
    }

    pub fn pixels_per_image(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.images.len() / self.pixels_per_image()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_factors(&self) -> usize {
        self.factor_sizes.as_ref().map_or(0, Vec::len)
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.pixels_per_image();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn factor_row(&self, i: usize) -> Option<&[u32]> {
        let f = self.num_factors();
        self.factors.as_ref().map(|v| &v[i * f..(i + 1) * f])
    }

    /// Stacks the given examples into a `[B, C, H, W]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let p = self.pixels_per_image();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.image_shape;
        Tensor::new(vec![indices.len(), c, h, w], data).expect("batch shape matches data")
    }

    /// Examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let f = self.num_factors();
        let factors = self
            .factors
            .as_ref()
            .map(|v| indices.iter().flat_map(|&i| v[i * f..(i + 1) * f].iter().copied()).collect());
        Dataset {
            image_shape: self.image_shape,
            images: self.batch(indices).into_data(),
            factors,
            factor_sizes: self.factor_sizes.clone(),
            factor_names: self.factor_names.clone(),
        }
    }

    /// First `k` examples of a seeded permutation.
    pub fn subset(&self, k: usize, seed: u64) -> Dataset {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(k.min(self.len()));
        self.select(&order)
    }

    /// Column `j` of the factor matrix.
    pub fn factor_column(&self, j: usize) -> Option<Vec<u32>> {
        let f = self.num_factors();
        (j < f).then(|| self.factors.as_ref().map(|v| v.iter().skip(j).step_by(f).copied().collect()))?
    }
}
