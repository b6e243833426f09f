//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::{EnrollError, Result};

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per tensor; tensors at or below this size are
    /// checked exhaustively.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coords_per_tensor: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose one-sided slopes disagree, i.e. the perturbation
    /// crossed a ReLU kink and the derivative is undefined there.
    pub skipped_kinks: usize,
}

/// Compares the tape gradient of `loss_fn` with central differences.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParameterStore, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    finite_diff_check_with(
        loss_fn,
        params,
        &GradCheckOptions {
            eps,
            ..GradCheckOptions::default()
        },
    )
}

pub fn finite_diff_check_with<F>(
    loss_fn: F,
    params: &ParameterStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&opts.eps) {
        return Err(EnrollError::Config(format!(
            "finite-difference eps {} outside [1e-7, 1e-4]",
            opts.eps
        )));
    }
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)
    };
    let eval = |p: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new(p);
        let loss = loss_fn(&mut tape)?;
        Ok(tape.scalar(loss))
    };
    let f0 = eval(params)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for id in params.ids() {
        let n = params.get(id).len();
        let coords: Vec<usize> = if n <= opts.coords_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for k in coords {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + opts.eps;
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - opts.eps;
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;

            let central = (fp - fm) / (2.0 * opts.eps);
            let slope_up = (fp - f0) / opts.eps;
            let slope_down = (f0 - fm) / opts.eps;
            let scale = central.abs().max(REL_ERROR_FLOOR);
            if (slope_up - slope_down).abs() > 1e-3 * scale.max(1e-2) {
                report.skipped_kinks += 1;
                continue;
            }
            let a = analytic.get(id).data()[k];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
