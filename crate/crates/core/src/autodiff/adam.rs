use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// A non-finite gradient aborts before anything is modified; the error names
/// the parameter.
pub fn adam_step<T: Real>(
    name: &str,
    params: &mut Tensor<T>,
    grads: &Tensor<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.shape() != grads.shape() || state.m.shape() != params.shape() {
        return Err(Error::shape(format!(
            "adam on {name}: params {:?}, grads {:?}, state {:?}",
            params.shape(),
            grads.shape(),
            state.m.shape()
        )));
    }
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate {lr} must be positive")));
    }
    grads.check_finite(&format!("gradient of {name}"))?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1t, b2t): (T, T) = (lit(b1), lit(b2));
    let (one_b1, one_b2): (T, T) = (lit(1.0 - b1), lit(1.0 - b2));
    let (c1t, c2t, lrt, epst): (T, T, T, T) = (lit(c1), lit(c2), lit(lr), lit(cfg.eps));
    let p = params.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for i in 0..p.len() {
        let g = grads.data()[i];
        m[i] = b1t * m[i] + one_b1 * g;
        v[i] = b2t * v[i] + one_b2 * g * g;
        let mhat = m[i] / c1t;
        let vhat = v[i] / c2t;
        p[i] = p[i] - lrt * mhat / (vhat.sqrt() + epst);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_identity() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[3]);
        adam_step("p", &mut p, &Tensor::zeros(&[3]), &mut st, 1e-3, &AdamConfig::default())
            .unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02] {
            let mut p = scalar(1.0);
            let mut st = AdamState::new(&[1]);
            adam_step("p", &mut p, &scalar(g), &mut st, 0.01, &AdamConfig::default()).unwrap();
            // mhat = g, vhat = g², update = lr·g/(|g| + ε).
            let expect = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p.item() - expect).abs() < 1e-15);
            assert!(((1.0 - p.item()).abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn two_steps_follow_reference_recurrence() {
        let g = 0.7;
        let lr = 0.05;
        let mut p = scalar(2.0);
        let mut st = AdamState::new(&[1]);
        let cfg = AdamConfig::default();
        adam_step("p", &mut p, &scalar(g), &mut st, lr, &cfg).unwrap();
        adam_step("p", &mut p, &scalar(g), &mut st, lr, &cfg).unwrap();

        // Hand-evaluated recurrence.
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut x = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.item() - x).abs() < 1e-12);
        assert!((st.m.item() - m).abs() < 1e-12);
        assert!((st.v.item() - v).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&[1]);
        let err = adam_step("lpf1.conv.kernel", &mut p, &scalar(f64::NAN), &mut st, 1e-3, &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("lpf1.conv.kernel"));
        assert_eq!(p.item(), 1.0);
        assert_eq!(st.step, 0);
    }
}
