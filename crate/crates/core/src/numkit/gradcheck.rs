use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ParamTape;
use crate::error::Result;

/// A scalar function of the parameters with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &ParamTape) -> Result<f64>;

    /// Zeroes and then fills the gradients held in `params`; returns the loss.
    fn loss_and_grad(&self, params: &mut ParamTape) -> Result<f64>;

    /// Loss with a fingerprint of the branches taken by piecewise-linear
    /// operations; `None` for objectives without kinks.
    fn loss_with_branches(&self, params: &ParamTape) -> Result<(f64, Option<u64>)> {
        Ok((self.loss(params)?, None))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter (all of them when the parameter is smaller).
    pub coords_per_param: usize,
    /// Denominator floor for the relative error. Gradients below it are
    /// compared on an absolute scale (`tolerance * floor`), which has to stay
    /// above the round-off of the difference quotient, roughly
    /// `1e-16 * |loss| / step`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            coords_per_param: 32,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    /// Coordinates compared.
    pub coordinates: usize,
    /// Coordinates dropped because the stencil crossed a kink.
    pub straddled: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub loss: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients against central finite differences.
///
/// Coordinates whose stencil changes the branch fingerprint of the objective
/// are skipped and counted in [`ParamCheck::straddled`].
pub fn grad_check(objective: &dyn Objective, params: &ParamTape, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut analytic = params.clone();
    let loss = objective.loss_and_grad(&mut analytic)?;
    let branches = objective.loss_with_branches(params)?.1;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(params.len());

    for id in params.ids() {
        let n = params.value(id).len();
        // all coordinates of small parameters, otherwise a random order from
        // which the first `coords_per_param` smooth ones are used
        let order: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, n).into_vec()
        };
        let mut worst = (0.0, 0);
        let (mut checked, mut straddled) = (0, 0);
        for &k in &order {
            if checked == opts.coords_per_param {
                break;
            }
            let orig = params.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + opts.step;
            let (plus, plus_branches) = objective.loss_with_branches(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig - opts.step;
            let (minus, minus_branches) = objective.loss_with_branches(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig;
            if plus_branches != branches || minus_branches != branches {
                // the difference quotient is not a derivative across a kink
                straddled += 1;
                continue;
            }
            checked += 1;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = relative_error(analytic.grad(id).data()[k], numeric, opts.floor);
            // NaN must not compare as a pass
            if err.is_nan() || err > worst.0 {
                worst = (err, k);
            }
        }
        checks.push(ParamCheck {
            name: params.name(id).to_owned(),
            coordinates: checked,
            straddled,
            max_rel_error: worst.0,
            worst_coordinate: worst.1,
            passed: checked > 0 && worst.0 <= opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        loss,
        params: checks,
    })
}
