//! Central-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TapeOptions, Var};
use crate::error::TensorError;
use crate::params::{ParamId, ParamStore};
use crate::tensor::PrecisionMode;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub training: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            training: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of `f` against the five-point central difference
/// `(-f(p+2h) + 8f(p+h) - 8f(p-h) + f(p-2h)) / 12h` for every element of every
/// trainable parameter. Always evaluated in double precision;
/// the dropout seed is fixed so every evaluation sees the same masks.
pub fn grad_check<F>(params: &mut ParamStore, opts: GradCheckOptions, f: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, TensorError>,
{
    let tape_opts = TapeOptions {
        mode: PrecisionMode::Double,
        training: opts.training,
        seed: opts.seed,
    };
    let eval = |params: &ParamStore| -> Result<f64, TensorError> {
        let mut tape = Tape::new(params, tape_opts);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    };
    let grads = {
        let mut tape = Tape::new(params, tape_opts);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<ParamId> = params.trainable_ids().collect();
    for id in ids {
        let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; params.get(id).len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = params.get(id).data()[i];
            let mut at = |offset: f64| -> Result<f64, TensorError> {
                params.get_mut(id).data_mut()[i] = orig + offset;
                eval(params)
            };
            let h = opts.step;
            let numeric = (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h);
            params.get_mut(id).data_mut()[i] = orig;
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Reduces `out` to a scalar via a fixed random projection, so every output
/// element carries a distinct, non-degenerate gradient.
pub fn probe_loss(tape: &mut Tape<'_>, out: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..tape.value(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    tape.dot_const(out, &weights)
}
