//! Stacked partial circulant matrices.
//!
//! A head with `rows` outputs and `n` inputs is stored as `rows / m` free
//! rows of length `n`. Block `b` contributes `m` consecutive output rows,
//! the `s`-th being the free row cyclically shifted right by `s`.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Number of shifts actually used for a head with `rows` outputs when `m`
/// shifts are requested: `m` itself when it divides `rows`, otherwise the
/// greatest common divisor (1 degenerates to a dense head).
pub fn effective_shifts(m: usize, rows: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    if m == 0 || rows == 0 {
        1
    } else {
        gcd(m, rows)
    }
}

#[inline]
fn shifted<T: Copy>(row: &[T], s: usize, k: usize) -> T {
    let n = row.len();
    row[(k + n - s % n) % n]
}

/// `y = C x` for the stacked partial circulant `C` described by `free_rows`
/// (`[blocks, n]`) with `m` shifts per block; `out_rows` must equal `blocks · m`.
pub fn circulant_matvec<T: Real>(free_rows: &Tensor<T>, m: usize, out_rows: usize, x: &[T]) -> Result<Vec<T>> {
    let [blocks, n] = free_rows.shape()[..] else {
        return Err(Error::shape("circulant free rows must be a matrix"));
    };
    if m == 0 || out_rows % m != 0 {
        return Err(Error::shape(format!("{m} shifts do not divide {out_rows} output rows")));
    }
    if out_rows / m != blocks {
        return Err(Error::shape(format!(
            "{blocks} free rows cannot produce {out_rows} outputs with {m} shifts"
        )));
    }
    if x.len() != n {
        return Err(Error::shape(format!("circulant input has {} entries, expected {n}", x.len())));
    }
    let fr = free_rows.data();
    let mut y = Vec::with_capacity(out_rows);
    for b in 0..blocks {
        let row = &fr[b * n..(b + 1) * n];
        for s in 0..m {
            let mut acc = T::zero();
            for (k, &xk) in x.iter().enumerate() {
                acc = acc + shifted(row, s, k) * xk;
            }
            y.push(acc);
        }
    }
    Ok(y)
}

/// Dense `[blocks · m, n]` matrix equal to the circulant operator.
pub fn materialize<T: Real>(free_rows: &Tensor<T>, m: usize) -> Tensor<T> {
    let (blocks, n) = (free_rows.shape()[0], free_rows.shape()[1]);
    let fr = free_rows.data();
    let mut out = Vec::with_capacity(blocks * m * n);
    for b in 0..blocks {
        let row = &fr[b * n..(b + 1) * n];
        for s in 0..m {
            out.extend((0..n).map(|k| shifted(row, s, k)));
        }
    }
    Tensor::new(&[blocks * m, n], out).expect("materialized extents")
}

/// Pull a gradient with respect to the materialized matrix back onto the
/// free rows (sum over the positions each free entry occupies).
pub fn fold_gradient<T: Real>(dense_grad: &[T], blocks: usize, m: usize, n: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); blocks * n];
    for b in 0..blocks {
        for s in 0..m {
            let row = &dense_grad[(b * m + s) * n..(b * m + s + 1) * n];
            for (k, &g) in row.iter().enumerate() {
                let t = (k + n - s % n) % n;
                out[b * n + t] = out[b * n + t] + g;
            }
        }
    }
    Tensor::new(&[blocks, n], out).expect("folded extents")
}
