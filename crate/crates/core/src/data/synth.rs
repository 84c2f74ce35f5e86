//! Synthetic 32x32 binary shapes over a full factor grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;

pub const SYNTH_SHAPES: [&str; 3] = ["square", "disc", "cross"];
/// Class counts of shape, x position, y position and scale.
pub const SYNTH_FACTOR_SIZES: [usize; 4] = [3, 8, 8, 4];
const SIDE: usize = 32;
/// Half-extent in pixels of each scale class.
const HALF_SIZES: [f64; 4] = [4.0, 5.0, 6.0, 7.0];
/// Disc radius relative to the half-size. With the thin cross this keeps every
/// pair of shapes at least 40% as far apart in pixels as a one-class shift in
/// position; equal-area shapes are nearly indistinguishable at small scales.
const DISC_RADIUS: f64 = 0.85;
/// Cross arm half-width in pixels; at least 0.5 so an arm never falls between pixel centers.
const CROSS_ARM: f64 = 0.75;
const FIRST_CENTER: f64 = 8.0;
const CENTER_SPACING: f64 = 16.0 / 7.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    pub n_per_cell: usize,
    pub seed: u64,
    /// Shifts every rendered center by a seeded offset within ±0.4 class spacings.
    pub jitter: bool,
}

fn inside(shape: usize, dx: f64, dy: f64, s: f64) -> bool {
    match shape {
        0 => dx.abs() <= s && dy.abs() <= s,
        1 => dx * dx + dy * dy <= (DISC_RADIUS * s).powi(2),
        _ => (dx.abs() <= s && dy.abs() <= CROSS_ARM) || (dy.abs() <= s && dx.abs() <= CROSS_ARM),
    }
}

fn render(shape: usize, cx: f64, cy: f64, s: f64, out: &mut [f32]) {
    for r in 0..SIDE {
        for c in 0..SIDE {
            let dx = c as f64 + 0.5 - cx;
            let dy = r as f64 + 0.5 - cy;
            out[r * SIDE + c] = if inside(shape, dx, dy, s) { 1.0 } else { 0.0 };
        }
    }
}

/// Renders every (shape, x, y, scale) cell `n_per_cell` times, without jitter.
pub fn synth_shapes(n_per_cell: usize, seed: u64) -> Dataset {
    synth_shapes_with(SynthOptions {
        n_per_cell,
        seed,
        jitter: false,
    })
}

pub fn synth_shapes_with(opts: SynthOptions) -> Dataset {
    let cells: usize = SYNTH_FACTOR_SIZES.iter().product();
    let n = cells * opts.n_per_cell;
    let mut images = vec![0f32; n * SIDE * SIDE];
    let mut factors = Vec::with_capacity(n * 4);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut k = 0;
    for shape in 0..SYNTH_FACTOR_SIZES[0] {
        for x in 0..SYNTH_FACTOR_SIZES[1] {
            for y in 0..SYNTH_FACTOR_SIZES[2] {
                for scale in 0..SYNTH_FACTOR_SIZES[3] {
                    for _ in 0..opts.n_per_cell {
                        let (jx, jy) = if opts.jitter {
                            let j = 0.4 * CENTER_SPACING;
                            (rng.gen_range(-j..j), rng.gen_range(-j..j))
                        } else {
                            (0.0, 0.0)
                        };
                        let cx = FIRST_CENTER + x as f64 * CENTER_SPACING + jx;
                        let cy = FIRST_CENTER + y as f64 * CENTER_SPACING + jy;
                        render(shape, cx, cy, HALF_SIZES[scale], &mut images[k * SIDE * SIDE..(k + 1) * SIDE * SIDE]);
                        factors.extend([shape as u32, x as u32, y as u32, scale as u32]);
                        k += 1;
                    }
                }
            }
        }
    }
    Dataset::new([1, SIDE, SIDE], images)
        .and_then(|d| {
            d.with_factors(
                factors,
                SYNTH_FACTOR_SIZES.to_vec(),
                ["shape", "pos_x", "pos_y", "scale"].iter().map(|s| s.to_string()).collect(),
            )
        })
        .expect("generator output is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn every_cell_occupied_n_times() {
        let d = synth_shapes(2, 0);
        assert_eq!(d.len(), 3 * 8 * 8 * 4 * 2);
        let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
        for i in 0..d.len() {
            *counts.entry(d.factor_row(i).unwrap().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 768);
        assert!(counts.values().all(|&c| c == 2));
    }

    #[test]
    fn images_are_binary_and_in_frame() {
        let d = synth_shapes(1, 0);
        for i in 0..d.len() {
            let img = d.image(i);
            assert!(img.iter().all(|&v| v == 0.0 || v == 1.0));
            let on = img.iter().filter(|&&v| v == 1.0).count();
            assert!(on >= 9, "image {i} nearly empty");
            // shapes never touch the border
            for k in 0..SIDE {
                assert_eq!(img[k], 0.0);
                assert_eq!(img[k * SIDE], 0.0);
            }
        }
    }

    #[test]
    fn seed_matters_only_with_jitter() {
        assert_eq!(synth_shapes(1, 1), synth_shapes(1, 2));
        let a = synth_shapes_with(SynthOptions { n_per_cell: 1, seed: 1, jitter: true });
        let b = synth_shapes_with(SynthOptions { n_per_cell: 1, seed: 2, jitter: true });
        assert_ne!(a.images, b.images);
        assert_eq!(a.factors, b.factors);
        assert_eq!(a, synth_shapes_with(SynthOptions { n_per_cell: 1, seed: 1, jitter: true }));
    }

    #[test]
    fn intensity_grows_with_scale() {
        let d = synth_shapes(1, 0);
        let mut sums = [0.0f64; 4];
        let mut counts = [0usize; 4];
        for i in 0..d.len() {
            let scale = d.factor_row(i).unwrap()[3] as usize;
            sums[scale] += d.image(i).iter().map(|&v| v as f64).sum::<f64>() / (SIDE * SIDE) as f64;
            counts[scale] += 1;
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
    }

    #[test]
    fn shapes_are_nearly_as_distinct_as_a_position_step() {
        let d = synth_shapes(1, 0);
        let per_shape = 8 * 8 * 4;
        let diff = |a: &[f32], b: &[f32]| a.iter().zip(b).filter(|(x, y)| x != y).count();
        for cell in 0..per_shape {
            // neighbour one x class over, same y and scale; at least 40% of its pixel change
            let x = (cell / 32) % 8;
            let step = if x < 7 { cell + 32 } else { cell - 32 };
            let position = diff(d.image(cell), d.image(step));
            for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                let shape = diff(d.image(a * per_shape + cell), d.image(b * per_shape + cell));
                assert!(5 * shape >= 2 * position, "cell {cell}: shapes {a},{b} differ in {shape} px, position step {position}");
            }
        }
    }

    #[test]
    fn shapes_differ_within_a_cell() {
        let d = synth_shapes(1, 0);
        // same position and scale, different shape class
        let per_shape = 8 * 8 * 4;
        for cell in [0, 100, 255] {
            let a = d.image(cell);
            let b = d.image(per_shape + cell);
            let c = d.image(2 * per_shape + cell);
            assert_ne!(a, b);
            assert_ne!(a, c);
            assert_ne!(b, c);
        }
    }
}
