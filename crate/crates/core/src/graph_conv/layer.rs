//! A full graph-convolutional layer: local 3×3 convolution plus non-local
//! aggregation, averaged, plus a bias.

use super::aggregate::{attention_only_aggregate, nonlocal_aggregate, EccVars};
use super::fnet::{Aggregation, EccShape};
use crate::autodiff::{conv2d, Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::graph_builder::PixelGraph;
use crate::real::{lit, Real};
use crate::tensor::Tensor;

struct CombineOp {
    /// Per global pixel: does it have at least one neighbour.
    has: Vec<bool>,
    channels: usize,
}

impl<T: Real> Backward<T> for CombineOp {
    fn name(&self) -> &'static str {
        "graph_conv_combine"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let c = self.channels;
        let half: T = lit(0.5);
        let mut dl = g.data().to_vec();
        let mut dnl = vec![T::zero(); dl.len()];
        for (p, &h) in self.has.iter().enumerate() {
            if h {
                for ch in p * c..(p + 1) * c {
                    dl[ch] = dl[ch] * half;
                    dnl[ch] = dl[ch];
                }
            }
        }
        let mut db = vec![T::zero(); c];
        for row in g.data().chunks_exact(c) {
            for (a, &b) in db.iter_mut().zip(row) {
                *a = *a + b;
            }
        }
        Ok(vec![
            Some(Tensor::new(g.shape(), dl)?),
            Some(Tensor::new(g.shape(), dnl)?),
            Some(Tensor::new(&[c], db)?),
        ])
    }
}

/// `(H^NL + H^L) / 2 + b` where a pixel has neighbours, `H^L + b` where it
/// has none.
pub fn combine<T: Real>(
    tape: &Tape<T>,
    local: &Var<T>,
    nonlocal: &Var<T>,
    bias: &Var<T>,
    graphs: &[PixelGraph],
) -> Result<Var<T>> {
    let d = local.value().map_dims()?;
    if nonlocal.shape() != local.shape() || bias.shape() != [d.channels] {
        return Err(Error::shape(format!(
            "cannot combine local {:?}, non-local {:?} and bias {:?}",
            local.shape(),
            nonlocal.shape(),
            bias.shape()
        )));
    }
    let has: Vec<bool> = graphs
        .iter()
        .flat_map(|g| (0..g.nodes()).map(move |i| !g.neighbors(i).is_empty()))
        .collect();
    if has.len() != d.batch * d.pixels() {
        return Err(Error::shape("graph count does not match the feature map"));
    }
    let c = d.channels;
    let half: T = lit(0.5);
    let (l, nl, b) = (local.value().data(), nonlocal.value().data(), bias.value().data());
    let mut out = Vec::with_capacity(l.len());
    for (p, &h) in has.iter().enumerate() {
        for ch in 0..c {
            let i = p * c + ch;
            let v = if h { (l[i] + nl[i]) * half } else { l[i] };
            out.push(v + b[ch]);
        }
    }
    let out = Tensor::new(local.shape(), out)?;
    Ok(tape.record(out, &[local, nonlocal, bias], || Box::new(CombineOp { has, channels: c })))
}

/// Apply one graph-convolutional layer to `x` (`[B, H, W, Fin]`) over the
/// given per-image graphs.
pub fn graph_conv_layer<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    graphs: &[PixelGraph],
    shape: &EccShape,
    vars: &EccVars<T>,
    chunk_pixels: usize,
) -> Result<Var<T>> {
    let local = conv2d(tape, x, &vars.local, None)?;
    let nonlocal = match shape.aggregation {
        Aggregation::Ecc => nonlocal_aggregate(tape, x, graphs, shape, vars, chunk_pixels)?,
        Aggregation::AttentionOnly => {
            shape.validate()?;
            attention_only_aggregate(tape, x, graphs, shape.delta)?
        }
    };
    combine(tape, &local, &nonlocal, &vars.bias, graphs)
}
