//! 2-D cross-correlation with reflection padding ("same" output size).
//!
//! Feature maps are `[B, H, W, C]`, kernels `[kh, kw, Cin, Cout]`. The
//! forward pass lowers chunks of output pixels to an im2col buffer and runs a
//! GEMM per chunk; the backward pass rebuilds the buffers instead of keeping
//! them alive.

use std::sync::Arc;

use super::tape::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};
use crate::par;
use crate::real::Real;
use crate::tensor::{MapDims, Tensor};

/// Mirror an out-of-range coordinate back into `0..n` (edge sample not repeated).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    if r >= n as isize {
        (period - r) as usize
    } else {
        r as usize
    }
}

#[derive(Clone)]
struct Geometry {
    dims: MapDims,
    kh: usize,
    kw: usize,
    cout: usize,
    /// `ry[y * kh + dy]` is the source row for output row `y`, tap `dy`.
    ry: Vec<usize>,
    rx: Vec<usize>,
    chunk: usize,
}

impl Geometry {
    fn new(dims: MapDims, kh: usize, kw: usize, cout: usize) -> Self {
        let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
        let ry = (0..dims.height)
            .flat_map(|y| (0..kh).map(move |dy| reflect_index(y as isize + dy as isize - ph, dims.height)))
            .collect();
        let rx = (0..dims.width)
            .flat_map(|x| (0..kw).map(move |dx| reflect_index(x as isize + dx as isize - pw, dims.width)))
            .collect();
        let kd = kh * kw * dims.channels;
        let chunk = (262_144 / kd.max(1)).clamp(64, 4096);
        Geometry {
            dims,
            kh,
            kw,
            cout,
            ry,
            rx,
            chunk,
        }
    }

    fn kd(&self) -> usize {
        self.kh * self.kw * self.dims.channels
    }

    fn pixels(&self) -> usize {
        self.dims.batch * self.dims.pixels()
    }

    fn chunks(&self) -> usize {
        self.pixels().div_ceil(self.chunk)
    }

    fn chunk_range(&self, ci: usize) -> (usize, usize) {
        let start = ci * self.chunk;
        (start, (start + self.chunk).min(self.pixels()))
    }

    /// Source pixel index for output pixel `p`, tap `(dy, dx)`.
    #[inline]
    fn source(&self, p: usize, dy: usize, dx: usize) -> usize {
        let hw = self.dims.pixels();
        let (b, rem) = (p / hw, p % hw);
        let (y, x) = (rem / self.dims.width, rem % self.dims.width);
        b * hw + self.ry[y * self.kh + dy] * self.dims.width + self.rx[x * self.kw + dx]
    }

    fn im2col<T: Real>(&self, x: &[T], start: usize, end: usize) -> Vec<T> {
        let cin = self.dims.channels;
        let kd = self.kd();
        let mut col = vec![T::zero(); (end - start) * kd];
        for p in start..end {
            let row = &mut col[(p - start) * kd..(p - start + 1) * kd];
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let q = self.source(p, dy, dx);
                    let tap = (dy * self.kw + dx) * cin;
                    row[tap..tap + cin].copy_from_slice(&x[q * cin..(q + 1) * cin]);
                }
            }
        }
        col
    }
}

fn validate<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<(MapDims, usize, usize, usize)> {
    let dims = x.map_dims()?;
    let [kh, kw, cin, cout] = kernel.shape()[..] else {
        return Err(Error::shape(format!(
            "conv kernel must be [kh, kw, Cin, Cout], got {:?}",
            kernel.shape()
        )));
    };
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(format!("conv kernel {kh}x{kw} must have odd extents")));
    }
    if cin != dims.channels {
        return Err(Error::shape(format!(
            "conv expects {cin} input channels, input has {}",
            dims.channels
        )));
    }
    if kh > 2 * dims.height + 1 || kw > 2 * dims.width + 1 {
        return Err(Error::shape(format!(
            "{kh}x{kw} kernel too large for reflection padding of a {}x{} map",
            dims.height, dims.width
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(format!("conv bias {:?}, expected [{cout}]", b.shape())));
        }
    }
    Ok((dims, kh, kw, cout))
}

struct Conv2dOp<T: Real> {
    input: Arc<Tensor<T>>,
    kernel: Arc<Tensor<T>>,
    geo: Geometry,
    with_bias: bool,
}

impl<T: Real> Backward<T> for Conv2dOp<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let geo = &self.geo;
        let (kd, cout, cin) = (geo.kd(), geo.cout, geo.dims.channels);
        let x = self.input.data();
        let k = self.kernel.data();
        let gd = g.data();
        let parts = par::map_range(geo.chunks(), |ci| {
            let (start, end) = geo.chunk_range(ci);
            let rows = end - start;
            let col = geo.im2col(x, start, end);
            let gc = &gd[start * cout..end * cout];
            let mut dk = vec![T::zero(); kd * cout];
            gemm(kd, rows, cout, T::one(), &col, Op::T, gc, Op::N, T::zero(), &mut dk);
            let mut dcol = col;
            gemm(rows, cout, kd, T::one(), gc, Op::N, k, Op::T, T::zero(), &mut dcol);
            (dk, dcol)
        });
        let mut dkernel = vec![T::zero(); kd * cout];
        let mut dx = vec![T::zero(); x.len()];
        for (ci, (dk, dcol)) in parts.into_iter().enumerate() {
            for (a, b) in dkernel.iter_mut().zip(dk) {
                *a = *a + b;
            }
            let (start, end) = geo.chunk_range(ci);
            for p in start..end {
                let row = &dcol[(p - start) * kd..(p - start + 1) * kd];
                for dy in 0..geo.kh {
                    for dx_ in 0..geo.kw {
                        let q = geo.source(p, dy, dx_);
                        let tap = (dy * geo.kw + dx_) * cin;
                        for c in 0..cin {
                            dx[q * cin + c] = dx[q * cin + c] + row[tap + c];
                        }
                    }
                }
            }
        }
        let mut out = vec![
            Some(Tensor::new(self.input.shape(), dx)?),
            Some(Tensor::new(self.kernel.shape(), dkernel)?),
        ];
        if self.with_bias {
            let mut db = vec![T::zero(); cout];
            for row in gd.chunks_exact(cout) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
            out.push(Some(Tensor::new(&[cout], db)?));
        }
        Ok(out)
    }
}

/// Reflection-padded "same" convolution (cross-correlation) of a `[B, H, W, Cin]`
/// map with a `[kh, kw, Cin, Cout]` kernel and optional `[Cout]` bias.
pub fn conv2d<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    kernel: &Var<T>,
    bias: Option<&Var<T>>,
) -> Result<Var<T>> {
    let (dims, kh, kw, cout) = validate(x.value(), kernel.value(), bias.map(|b| b.value()))?;
    let geo = Geometry::new(dims, kh, kw, cout);
    let kd = geo.kd();
    let xd = x.value().data();
    let kdata = kernel.value().data();
    let bias_data = bias.map(|b| b.value().data());
    let mut out = vec![T::zero(); geo.pixels() * cout];
    par::for_each_chunk_mut(&mut out, geo.chunk * cout, |ci, oc| {
        let (start, end) = geo.chunk_range(ci);
        let col = geo.im2col(xd, start, end);
        gemm(end - start, kd, cout, T::one(), &col, Op::N, kdata, Op::N, T::zero(), oc);
        if let Some(b) = bias_data {
            for row in oc.chunks_exact_mut(cout) {
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o = *o + bv;
                }
            }
        }
    });
    let out = Tensor::new(&dims.with_channels(cout).shape(), out)?;
    let mut inputs = vec![x, kernel];
    if let Some(b) = bias {
        inputs.push(b);
    }
    Ok(tape.record(out, &inputs, || {
        Box::new(Conv2dOp {
            input: x.shared(),
            kernel: kernel.shared(),
            geo,
            with_bias: bias.is_some(),
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_mirrors_without_repeating_edge() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(3, 1), 0);
        for i in -20..20 {
            assert!(reflect_index(i, 3) < 3);
        }
    }

    #[test]
    fn constant_window_on_single_pixel() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::full(&[1, 1, 1, 1], 0.37));
        let k = tape.constant(Tensor::full(&[3, 3, 1, 1], 1.0 / 9.0));
        let y = conv2d(&tape, &x, &k, None).unwrap();
        assert!((y.value().item() - 0.37).abs() < 1e-15);
    }

    #[test]
    fn identity_kernel_adds_bias() {
        let tape = Tape::<f64>::no_grad();
        let x = Tensor::from_fn(&[1, 4, 5, 2], |i| (i as f64 * 0.7).sin());
        let mut k = Tensor::zeros(&[3, 3, 2, 2]);
        // centre tap, identity channel mixing
        k.data_mut()[((4) * 2) * 2] = 1.0;
        k.data_mut()[((4) * 2 + 1) * 2 + 1] = 1.0;
        let bias = Tensor::new(&[2], vec![0.5, -1.0]).unwrap();
        let xv = tape.constant(x.clone());
        let y = conv2d(&tape, &xv, &tape.constant(k), Some(&tape.constant(bias))).unwrap();
        for (i, (&o, &v)) in y.value().data().iter().zip(x.data()).enumerate() {
            let b = if i % 2 == 0 { 0.5 } else { -1.0 };
            assert!((o - v - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::zeros(&[1, 2, 2, 3]));
        let even = tape.constant(Tensor::zeros(&[2, 3, 3, 1]));
        assert!(conv2d(&tape, &x, &even, None).is_err());
        let wrong_cin = tape.constant(Tensor::zeros(&[3, 3, 2, 1]));
        assert!(conv2d(&tape, &x, &wrong_cin, None).is_err());
        let big = tape.constant(Tensor::zeros(&[7, 7, 3, 1]));
        assert!(conv2d(&tape, &x, &big, None).is_err());
        let ok = tape.constant(Tensor::zeros(&[5, 5, 3, 1]));
        assert!(conv2d(&tape, &x, &ok, None).is_ok());
    }
}
