//! Per-channel batch normalisation over every axis except the last.

use std::sync::Arc;

use super::tape::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old value in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Running mean/variance used in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Statistics of one training batch (variance is unbiased).
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
        }
    }

    pub fn update(&mut self, batch: &BatchStats<T>, momentum: f64) {
        let keep: T = lit(momentum);
        let take: T = lit(1.0 - momentum);
        for (r, &b) in self.mean.data_mut().iter_mut().zip(&batch.mean) {
            *r = keep * *r + take * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(&batch.var) {
            *r = keep * *r + take * b;
        }
    }
}

fn channels_of<T: Real>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>) -> Result<(usize, usize)> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("batch norm of a scalar"))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "batch norm over {c} channels with scale {:?} and shift {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok((c, x.value().len() / c.max(1)))
}

struct BnTrainOp<T: Real> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    gamma: Arc<Tensor<T>>,
    c: usize,
}

impl<T: Real> Backward<T> for BnTrainOp<T> {
    fn name(&self) -> &'static str {
        "batch_norm_train"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let c = self.c;
        let rows = g.len() / c;
        let gd = g.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for r in 0..rows {
            for ch in 0..c {
                let i = r * c + ch;
                dbeta[ch] = dbeta[ch] + gd[i];
                dgamma[ch] = dgamma[ch] + gd[i] * self.xhat[i];
            }
        }
        // dx = γ/σ · (dy − mean(dy) − x̂ · mean(dy · x̂))
        let n: T = lit(rows as f64);
        let gam = self.gamma.data();
        let mut dx = vec![T::zero(); g.len()];
        for r in 0..rows {
            for ch in 0..c {
                let i = r * c + ch;
                dx[i] = gam[ch]
                    * self.inv_std[ch]
                    * (gd[i] - dbeta[ch] / n - self.xhat[i] * dgamma[ch] / n);
            }
        }
        Ok(vec![
            Some(Tensor::new(g.shape(), dx)?),
            Some(Tensor::new(&[c], dgamma)?),
            Some(Tensor::new(&[c], dbeta)?),
        ])
    }
}

/// Training-mode batch norm: standardise each channel by its batch mean and
/// (biased) variance, then apply `gamma`, `beta`.
///
/// Returns the output and the batch statistics for the running-average update.
/// A zero-variance channel is standardised against `BN_EPS` and maps to `beta`.
pub fn batch_norm_train<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
) -> Result<(Var<T>, BatchStats<T>)> {
    let (c, rows) = channels_of(x, gamma, beta)?;
    if rows < 2 {
        return Err(Error::invalid(format!(
            "training-mode batch norm needs at least 2 samples per channel, got {rows}"
        )));
    }
    let xd = x.value().data();
    let n = rows as f64;
    let mut mean = vec![0.0f64; c];
    for r in 0..rows {
        for ch in 0..c {
            mean[ch] += xd[r * c + ch].as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; c];
    for r in 0..rows {
        for ch in 0..c {
            let d = xd[r * c + ch].as_f64() - mean[ch];
            var[ch] += d * d;
        }
    }
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| lit(1.0 / (v / n + BN_EPS).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| lit(m)).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    let (g, b) = (gamma.value().data(), beta.value().data());
    for r in 0..rows {
        for ch in 0..c {
            let i = r * c + ch;
            xhat[i] = (xd[i] - mean_t[ch]) * inv_std[ch];
            out[i] = g[ch] * xhat[i] + b[ch];
        }
    }
    let stats = BatchStats {
        mean: mean_t,
        var: var.iter().map(|&v| lit(v / (n - 1.0))).collect(),
    };
    let out = Tensor::new(x.shape(), out)?;
    let y = tape.record(out, &[x, gamma, beta], || {
        Box::new(BnTrainOp {
            xhat,
            inv_std,
            gamma: gamma.shared(),
            c,
        })
    });
    Ok((y, stats))
}

struct BnInferOp<T: Real> {
    xhat: Vec<T>,
    scale: Vec<T>,
    c: usize,
}

impl<T: Real> Backward<T> for BnInferOp<T> {
    fn name(&self) -> &'static str {
        "batch_norm_infer"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let c = self.c;
        let gd = g.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut dx = vec![T::zero(); g.len()];
        for (i, &gi) in gd.iter().enumerate() {
            let ch = i % c;
            dbeta[ch] = dbeta[ch] + gi;
            dgamma[ch] = dgamma[ch] + gi * self.xhat[i];
            dx[i] = gi * self.scale[ch];
        }
        Ok(vec![
            Some(Tensor::new(g.shape(), dx)?),
            Some(Tensor::new(&[c], dgamma)?),
            Some(Tensor::new(&[c], dbeta)?),
        ])
    }
}

/// Inference-mode batch norm using stored running statistics.
pub fn batch_norm_infer<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    stats: &RunningStats<T>,
) -> Result<Var<T>> {
    let (c, _) = channels_of(x, gamma, beta)?;
    if stats.mean.shape() != [c] || stats.var.shape() != [c] {
        return Err(Error::shape("running statistics do not match channel count"));
    }
    let inv_std: Vec<T> = stats
        .var
        .data()
        .iter()
        .map(|&v| T::one() / (v + lit(BN_EPS)).sqrt())
        .collect();
    let (g, b, mu) = (gamma.value().data(), beta.value().data(), stats.mean.data());
    let xd = x.value().data();
    let record = tape.is_recording();
    let mut xhat = if record { vec![T::zero(); xd.len()] } else { Vec::new() };
    let mut out = vec![T::zero(); xd.len()];
    for (i, &xi) in xd.iter().enumerate() {
        let ch = i % c;
        let h = (xi - mu[ch]) * inv_std[ch];
        if record {
            xhat[i] = h;
        }
        out[i] = g[ch] * h + b[ch];
    }
    let out = Tensor::new(x.shape(), out)?;
    Ok(tape.record(out, &[x, gamma, beta], || {
        let scale = (0..c).map(|ch| g[ch] * inv_std[ch]).collect();
        Box::new(BnInferOp { xhat, scale, c })
    }))
}
