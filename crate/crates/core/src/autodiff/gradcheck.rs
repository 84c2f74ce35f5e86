use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates probed per leaf; all of them when the leaf is smaller.
    pub max_coords_per_leaf: usize,
    pub seed: u64,
    /// Skip coordinates whose value is within this distance of zero
    /// (keeps probes off a relu kink when the leaf feeds one directly).
    pub kink_margin: Option<f64>,
    /// Skip probes whose `x +- step` evaluations fall on a different relu/abs
    /// sign pattern than `x`; the one-sided pieces make central differences meaningless there.
    pub skip_kink_crossings: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tolerance: 1e-5,
            max_coords_per_leaf: 16,
            seed: 0,
            kink_margin: None,
            skip_kink_crossings: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub leaf: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: Option<Probe>,
    pub probes: usize,
    /// Probes dropped because they straddled a kink.
    pub kink_skipped: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `function` against central differences.
///
/// `function` builds a scalar from the leaves it is handed; it must be
/// deterministic (any noise has to be fixed outside of it).
pub fn gradient_check<F>(function: F, leaves: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let loss = function(&mut tape, &vars)?;
    let base_signature = tape.kink_signature();
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf registered with grad").to_vec())
        .collect();

    let eval = |probe_leaves: &[Tensor<f64>], leaf: usize, coord: usize| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe_leaves.iter().map(|t| tape.constant(t.clone())).collect();
        let out = function(&mut tape, &vars).map_err(|e| {
            Error::invalid("gradient_check", format!("leaf {leaf} coordinate {coord}: {e}"))
        })?;
        let value = tape
            .value(out)
            .item()
            .ok_or_else(|| Error::NonScalarLoss(tape.shape(out).to_vec()))?;
        Ok((value, tape.kink_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        probes: 0,
        kink_skipped: 0,
        passed: true,
    };
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (leaf, tensor) in leaves.iter().enumerate() {
        let n = tensor.numel();
        let coords: Vec<usize> = if n <= opts.max_coords_per_leaf {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords_per_leaf).into_vec();
            c.sort_unstable();
            c
        };
        for coord in coords {
            let x0 = tensor.data()[coord];
            if opts.kink_margin.is_some_and(|m| x0.abs() <= m) {
                continue;
            }
            work[leaf].data_mut()[coord] = x0 + opts.step;
            let (plus, sig_plus) = eval(&work, leaf, coord)?;
            work[leaf].data_mut()[coord] = x0 - opts.step;
            let (minus, sig_minus) = eval(&work, leaf, coord)?;
            work[leaf].data_mut()[coord] = x0;
            if opts.skip_kink_crossings && (sig_plus != base_signature || sig_minus != base_signature) {
                report.kink_skipped += 1;
                continue;
            }
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::invalid(
                    "gradient_check",
                    format!("non-finite objective at leaf {leaf} coordinate {coord}"),
                ));
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[leaf][coord];
            let err = relative_error(a, numeric);
            report.probes += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some(Probe {
                    leaf,
                    coord,
                    analytic: a,
                    numeric,
                    relative_error: err,
                });
            }
        }
    }
    report.passed = report.max_relative_error < opts.tolerance;
    Ok(report)
}
