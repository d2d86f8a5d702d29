use std::sync::Arc;

use super::tape::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// Negative-side slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub fn leaky_relu_scalar<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

fn same_shape<T: Real>(a: &Var<T>, b: &Var<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

struct AddOp;

impl<T: Real> Backward<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.clone()), Some(g.clone())])
    }
}

pub fn add<T: Real>(tape: &Tape<T>, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape(a, b, "add")?;
    let mut out = a.value().clone();
    out.add_assign(b.value());
    Ok(tape.record(out, &[a, b], || Box::new(AddOp)))
}

struct ScaleOp<T> {
    factor: T,
}

impl<T: Real> Backward<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.map(|v| v * self.factor))])
    }
}

pub fn scale<T: Real>(tape: &Tape<T>, a: &Var<T>, factor: T) -> Var<T> {
    let out = a.value().map(|v| v * factor);
    tape.record(out, &[a], || Box::new(ScaleOp { factor }))
}

struct SumOp {
    shape: Vec<usize>,
}

impl<T: Real> Backward<T> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(Tensor::full(&self.shape, g.item()))])
    }
}

/// Sum of all entries (scalar).
pub fn sum<T: Real>(tape: &Tape<T>, a: &Var<T>) -> Var<T> {
    let out = Tensor::scalar(a.value().sum());
    let shape = a.shape().to_vec();
    tape.record(out, &[a], || Box::new(SumOp { shape }))
}

struct HalfSqNormOp<T: Real> {
    input: Arc<Tensor<T>>,
}

impl<T: Real> Backward<T> for HalfSqNormOp<T> {
    fn name(&self) -> &'static str {
        "half_sq_norm"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let s = g.item();
        Ok(vec![Some(self.input.map(|v| v * s))])
    }
}

/// `‖a‖² / 2` (scalar).
pub fn half_sq_norm<T: Real>(tape: &Tape<T>, a: &Var<T>) -> Var<T> {
    let s: T = a.value().data().iter().map(|&v| v * v).sum();
    let out = Tensor::scalar(s * lit(0.5));
    tape.record(out, &[a], || {
        Box::new(HalfSqNormOp {
            input: a.shared(),
        })
    })
}

struct LeakyReluOp<T: Real> {
    input: Arc<Tensor<T>>,
    slope: T,
}

impl<T: Real> Backward<T> for LeakyReluOp<T> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let mut out = g.clone();
        for (o, &x) in out.data_mut().iter_mut().zip(self.input.data()) {
            if x < T::zero() {
                *o = *o * self.slope;
            }
        }
        Ok(vec![Some(out)])
    }
}

/// Elementwise `x` for `x ≥ 0`, `slope · x` otherwise.
pub fn leaky_relu<T: Real>(tape: &Tape<T>, x: &Var<T>, slope: T) -> Result<Var<T>> {
    if !(slope > T::zero() && slope < T::one()) {
        return Err(Error::invalid(format!("leaky slope {slope} outside (0, 1)")));
    }
    let out = x.value().map(|v| leaky_relu_scalar(v, slope));
    Ok(tape.record(out, &[x], || {
        Box::new(LeakyReluOp {
            input: x.shared(),
            slope,
        })
    }))
}

struct MseOp<T: Real> {
    pred: Arc<Tensor<T>>,
    target: Arc<Tensor<T>>,
}

impl<T: Real> Backward<T> for MseOp<T> {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let n: T = lit(self.pred.len() as f64);
        let k = g.item() * lit::<T>(2.0) / n;
        let mut dp = Tensor::zeros_like(&self.pred);
        for ((d, &p), &t) in dp
            .data_mut()
            .iter_mut()
            .zip(self.pred.data())
            .zip(self.target.data())
        {
            *d = k * (p - t);
        }
        let dt = dp.map(|v| -v);
        Ok(vec![Some(dp), Some(dt)])
    }
}

/// Mean squared error between `pred` and `target` (scalar).
pub fn mse_loss<T: Real>(tape: &Tape<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    same_shape(pred, target, "mse")?;
    if pred.value().is_empty() {
        return Err(Error::shape("mse of empty tensors"));
    }
    let n = pred.value().len() as f64;
    let s: T = pred
        .value()
        .data()
        .iter()
        .zip(target.value().data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    let out = Tensor::scalar(s / lit(n));
    Ok(tape.record(out, &[pred, target], || {
        Box::new(MseOp {
            pred: pred.shared(),
            target: target.shared(),
        })
    }))
}

struct ConcatOp {
    widths: Vec<usize>,
    rows: usize,
}

impl<T: Real> Backward<T> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let total: usize = self.widths.iter().sum();
        let gd = g.data();
        let mut off = 0;
        let mut out = Vec::with_capacity(self.widths.len());
        let lead = &g.shape()[..g.rank() - 1];
        for &w in &self.widths {
            let mut part = Vec::with_capacity(self.rows * w);
            for r in 0..self.rows {
                part.extend_from_slice(&gd[r * total + off..r * total + off + w]);
            }
            let mut shape = lead.to_vec();
            shape.push(w);
            out.push(Some(Tensor::new(&shape, part)?));
            off += w;
        }
        Ok(out)
    }
}

/// Concatenate tensors along their last (channel) axis.
pub fn concat_channels<T: Real>(tape: &Tape<T>, parts: &[Var<T>]) -> Result<Var<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    if first.value().rank() == 0 {
        return Err(Error::shape("concat of scalars"));
    }
    let lead = &first.shape()[..first.value().rank() - 1];
    for p in parts {
        if p.value().rank() != first.value().rank() || &p.shape()[..p.value().rank() - 1] != lead {
            return Err(Error::shape(format!(
                "concat: {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.value().data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    let out = Tensor::new(&shape, data)?;
    let refs: Vec<&Var<T>> = parts.iter().collect();
    Ok(tape.record(out, &refs, || Box::new(ConcatOp { widths, rows })))
}
