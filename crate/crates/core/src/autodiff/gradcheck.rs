use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// Settings for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub eps: f64,
    /// Absolute floor of the relative-error denominator.
    pub floor: f64,
    /// Check at most this many coordinates per input (evenly strided);
    /// `None` checks all of them.
    pub max_coords: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-5,
            floor: 1e-6,
            max_coords: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences `(f(x+ε) − f(x−ε)) / 2ε`, coordinate by coordinate.
///
/// The relative error of one coordinate is `|a − n| / max(|a|, |n|, floor)`;
/// the report carries the worst one.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], cfg: GradCheck) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&Tape<T>, &[Var<T>]) -> Result<Var<T>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<T>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let f0 = loss.value().item();
    if !f0.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|v| grads.wrt(v)).collect();

    let eval = |vals: &[Tensor<T>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<T>> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?.value().item().as_f64();
        if !out.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(out)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = match cfg.max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for coord in (0..n).step_by(stride) {
            let x0 = input.data()[coord];
            work[which].data_mut()[coord] = x0 + lit(cfg.eps);
            let fp = eval(&work)?;
            work[which].data_mut()[coord] = x0 - lit(cfg.eps);
            let fm = eval(&work)?;
            work[which].data_mut()[coord] = x0;
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let a = analytic[which].data()[coord].as_f64();
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (which, coord);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
