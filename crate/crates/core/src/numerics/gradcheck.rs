//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MilError, Result};
use crate::numerics::{ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub abs_floor: f64,
    /// Tensors with more entries than this are checked on a random subset.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-6,
            max_coords_per_param: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    pub passed: bool,
}

/// Relative error with a floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(abs_floor)
}

/// Compares the tape gradient of `f` against central finite differences on
/// every (or a sampled subset of every) parameter coordinate.
///
/// `f` builds a scalar loss on a fresh tape from the current parameter
/// values and must be deterministic. Gradients already in `params` are
/// zeroed first; values are restored on return.
pub fn grad_check<F>(params: &mut ParamStore, cfg: &GradCheckConfig, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    if cfg.eps <= 0.0 {
        return Err(MilError::Config("grad_check eps must be positive".into()));
    }
    params.zero_grads();
    {
        let mut tape = Tape::new();
        let loss = f(params, &mut tape)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(MilError::NonFinite(format!("grad_check objective evaluated to {v}")));
        }
        tape.backward(loss, params)?;
    }

    let mut eval = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(p, &mut tape)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(MilError::NonFinite(format!("grad_check objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
        passed: true,
    };
    for name in names {
        let len = params.value(&name)?.len();
        let coords: Vec<usize> = if len > cfg.max_coords_per_param {
            let mut c = sample(&mut rng, len, cfg.max_coords_per_param).into_vec();
            c.sort_unstable();
            c
        } else {
            (0..len).collect()
        };
        for k in coords {
            let analytic = params.grad(&name)?.data()[k];
            let original = params.value(&name)?.data()[k];
            params.slot_mut(&name)?.value.data_mut()[k] = original + cfg.eps;
            let plus = eval(params);
            params.slot_mut(&name)?.value.data_mut()[k] = original - cfg.eps;
            let minus = eval(params);
            params.slot_mut(&name)?.value.data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * cfg.eps);
            let err = relative_error(analytic, numeric, cfg.abs_floor);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tol;
    Ok(report)
}
