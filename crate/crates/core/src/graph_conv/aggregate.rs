//! Non-local aggregation over a pixel graph.
//!
//! For every edge the subnetwork is evaluated batched over all edges of a
//! chunk of target pixels (one GEMM per layer of the subnetwork). The message
//! `Θ H_j = Σ_s κ_s θ_L,s (θ_R,sᵀ H_j)` is then formed in the decoupled order,
//! `r(Fin + Fout + 1)` multiply-adds per edge, without ever building `Θ`.

use std::sync::Arc;

use super::circulant::{fold_gradient, materialize};
use super::fnet::{EccParams, EccShape};
use crate::autodiff::{leaky_relu_scalar, Backward, Tape, Var, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::graph_builder::{check_graphs, PixelGraph};
use crate::linalg::{axpy, dot, gemm, Op};
use crate::par;
use crate::real::{lit, Real};
use crate::tensor::{MapDims, Tensor};

/// Pixels whose edges are processed together; bounds the per-edge
/// intermediate buffers of a forward pass.
pub const DEFAULT_CHUNK_PIXELS: usize = 1024;

/// Subnetwork parameters bound to a tape.
#[derive(Clone, Debug)]
pub struct EccVars<T: Real> {
    pub w0: Var<T>,
    pub b0: Var<T>,
    pub wl: Var<T>,
    pub bl: Var<T>,
    pub wr: Var<T>,
    pub br: Var<T>,
    pub wk: Var<T>,
    pub bk: Var<T>,
    pub local: Var<T>,
    pub bias: Var<T>,
}

impl<T: Real> EccParams<T> {
    /// Register every tensor as a differentiable leaf of `tape`.
    pub fn bind(&self, tape: &Tape<T>) -> EccVars<T> {
        EccVars {
            w0: tape.leaf(self.w0.clone()),
            b0: tape.leaf(self.b0.clone()),
            wl: tape.leaf(self.wl.clone()),
            bl: tape.leaf(self.bl.clone()),
            wr: tape.leaf(self.wr.clone()),
            br: tape.leaf(self.br.clone()),
            wk: tape.leaf(self.wk.clone()),
            bk: tape.leaf(self.bk.clone()),
            local: tape.leaf(self.local.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

/// Counts multiply-adds of the message computation.
pub trait MaddCounter: Default + Send {
    fn add(&mut self, n: u64);
    fn total(&self) -> u64;
}

#[derive(Default)]
pub struct NoCount;

impl MaddCounter for NoCount {
    #[inline(always)]
    fn add(&mut self, _: u64) {}
    fn total(&self) -> u64 {
        0
    }
}

#[derive(Default)]
pub struct CountMadds(u64);

impl MaddCounter for CountMadds {
    fn add(&mut self, n: u64) {
        self.0 += n;
    }
    fn total(&self) -> u64 {
        self.0
    }
}

/// Flattened edges of a batch: edge `e` goes from global pixel `src[e]` to the
/// target whose range in `offsets` contains `e`.
pub(crate) struct EdgeIndex {
    pub offsets: Vec<usize>,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

impl EdgeIndex {
    pub fn new(d: MapDims, graphs: &[PixelGraph]) -> Result<Self> {
        check_graphs(d, graphs)?;
        let n = d.pixels();
        let mut offsets = Vec::with_capacity(d.batch * n + 1);
        offsets.push(0);
        let total: usize = graphs.iter().map(PixelGraph::num_edges).sum();
        let mut src = Vec::with_capacity(total);
        let mut tgt = Vec::with_capacity(total);
        for (b, g) in graphs.iter().enumerate() {
            for i in 0..n {
                for &j in g.neighbors(i) {
                    src.push(b * n + j as usize);
                    tgt.push(b * n + i);
                }
                offsets.push(src.len());
            }
        }
        Ok(EdgeIndex { offsets, src, tgt })
    }

    pub fn degree(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    pub fn pixels(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Intermediates of one chunk kept for the backward pass.
struct ChunkCache<T> {
    d: Vec<T>,
    z0: Vec<T>,
    hh: Vec<T>,
    tl: Vec<T>,
    tr: Vec<T>,
    kp: Vec<T>,
    proj: Vec<T>,
    gamma: Vec<T>,
}

struct Weights<'a, T> {
    w0: &'a [T],
    b0: &'a [T],
    ml: &'a [T],
    bl: &'a [T],
    mr: &'a [T],
    br: &'a [T],
    wk: &'a [T],
    bk: &'a [T],
}

fn add_rows<T: Real>(m: &mut [T], bias: &[T]) {
    for row in m.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_chunk<T: Real, C: MaddCounter>(
    s: &EccShape,
    idx: &EdgeIndex,
    x: &[T],
    w: &Weights<'_, T>,
    p0: usize,
    p1: usize,
    keep: bool,
) -> (Vec<T>, Option<ChunkCache<T>>, u64) {
    let (fin, fout, r) = (s.fin, s.fout, s.rank);
    let (rl, rr) = (s.rows_left(), s.rows_right());
    let (e0, e1) = (idx.offsets[p0], idx.offsets[p1]);
    let ec = e1 - e0;
    let mut out = vec![T::zero(); (p1 - p0) * fout];
    if ec == 0 {
        let cache = keep.then(|| ChunkCache {
            d: vec![],
            z0: vec![],
            hh: vec![],
            tl: vec![],
            tr: vec![],
            kp: vec![],
            proj: vec![],
            gamma: vec![],
        });
        return (out, cache, 0);
    }
    let mut d = vec![T::zero(); ec * fin];
    for e in 0..ec {
        let (j, i) = (idx.src[e0 + e], idx.tgt[e0 + e]);
        let row = &mut d[e * fin..(e + 1) * fin];
        for c in 0..fin {
            row[c] = x[j * fin + c] - x[i * fin + c];
        }
    }
    let mut z0 = vec![T::zero(); ec * fin];
    gemm(ec, fin, fin, T::one(), &d, Op::N, w.w0, Op::T, T::zero(), &mut z0);
    add_rows(&mut z0, w.b0);
    let slope: T = lit(LEAKY_SLOPE);
    let hh: Vec<T> = z0.iter().map(|&v| leaky_relu_scalar(v, slope)).collect();
    let mut tl = vec![T::zero(); ec * rl];
    gemm(ec, fin, rl, T::one(), &hh, Op::N, w.ml, Op::T, T::zero(), &mut tl);
    add_rows(&mut tl, w.bl);
    let mut tr = vec![T::zero(); ec * rr];
    gemm(ec, fin, rr, T::one(), &hh, Op::N, w.mr, Op::T, T::zero(), &mut tr);
    add_rows(&mut tr, w.br);
    let mut kp = vec![T::zero(); ec * r];
    gemm(ec, fin, r, T::one(), &hh, Op::N, w.wk, Op::T, T::zero(), &mut kp);
    add_rows(&mut kp, w.bk);
    let inv_delta: T = lit(1.0 / s.delta);
    let gamma: Vec<T> = d
        .chunks_exact(fin)
        .map(|de| (-dot(de, de) * inv_delta).exp())
        .collect();

    let mut proj = vec![T::zero(); ec * r];
    let mut counter = C::default();
    for p in p0..p1 {
        let deg = idx.degree(p);
        if deg == 0 {
            continue;
        }
        let inv_deg: T = lit(1.0 / deg as f64);
        let acc = &mut out[(p - p0) * fout..(p - p0 + 1) * fout];
        for e in idx.offsets[p] - e0..idx.offsets[p + 1] - e0 {
            let xj = &x[idx.src[e0 + e] * fin..(idx.src[e0 + e] + 1) * fin];
            let wgt = gamma[e] * inv_deg;
            for k in 0..r {
                let pk = dot(&tr[e * rr + k * fin..e * rr + (k + 1) * fin], xj);
                proj[e * r + k] = pk;
                let q = kp[e * r + k] * pk;
                axpy(wgt * q, &tl[e * rl + k * fout..e * rl + (k + 1) * fout], acc);
                counter.add((fin + 1 + fout) as u64);
            }
        }
    }
    let cache = keep.then_some(ChunkCache {
        d,
        z0,
        hh,
        tl,
        tr,
        kp,
        proj,
        gamma,
    });
    (out, cache, counter.total())
}

struct AggregateOp<T: Real> {
    shape: EccShape,
    idx: Arc<EdgeIndex>,
    x: Arc<Tensor<T>>,
    w0: Arc<Tensor<T>>,
    ml: Tensor<T>,
    mr: Tensor<T>,
    wk: Arc<Tensor<T>>,
    chunks: Vec<(usize, usize)>,
    caches: Vec<ChunkCache<T>>,
}

struct ChunkGrads<T> {
    dw0: Vec<T>,
    db0: Vec<T>,
    dml: Vec<T>,
    dbl: Vec<T>,
    dmr: Vec<T>,
    dbr: Vec<T>,
    dwk: Vec<T>,
    dbk: Vec<T>,
    /// Gradient w.r.t. each edge label.
    dd: Vec<T>,
    /// Direct gradient w.r.t. each edge's source features.
    dxj: Vec<T>,
}

fn col_sums<T: Real>(m: &[T], cols: usize) -> Vec<T> {
    let mut s = vec![T::zero(); cols];
    for row in m.chunks_exact(cols) {
        for (a, &b) in s.iter_mut().zip(row) {
            *a = *a + b;
        }
    }
    s
}

impl<T: Real> AggregateOp<T> {
    fn backward_chunk(&self, ci: usize, g: &[T]) -> ChunkGrads<T> {
        let s = &self.shape;
        let (fin, fout, r) = (s.fin, s.fout, s.rank);
        let (rl, rr) = (s.rows_left(), s.rows_right());
        let (p0, p1) = self.chunks[ci];
        let idx = &*self.idx;
        let e0 = idx.offsets[p0];
        let ec = idx.offsets[p1] - e0;
        let c = &self.caches[ci];
        let x = self.x.data();
        let mut dtl = vec![T::zero(); ec * rl];
        let mut dtr = vec![T::zero(); ec * rr];
        let mut dkp = vec![T::zero(); ec * r];
        let mut dd = vec![T::zero(); ec * fin];
        let mut dxj = vec![T::zero(); ec * fin];
        let scale_d: T = lit(-2.0 / s.delta);
        for p in p0..p1 {
            let deg = idx.degree(p);
            if deg == 0 {
                continue;
            }
            let inv_deg: T = lit(1.0 / deg as f64);
            let gp = &g[p * fout..(p + 1) * fout];
            for e in idx.offsets[p] - e0..idx.offsets[p + 1] - e0 {
                let j = idx.src[e0 + e];
                let xj = &x[j * fin..(j + 1) * fin];
                let wgt = c.gamma[e] * inv_deg;
                let mut dgamma = T::zero();
                for k in 0..r {
                    let tlk = &c.tl[e * rl + k * fout..e * rl + (k + 1) * fout];
                    let trk = &c.tr[e * rr + k * fin..e * rr + (k + 1) * fin];
                    let pk = c.proj[e * r + k];
                    let kk = c.kp[e * r + k];
                    let q = kk * pk;
                    let tg = dot(tlk, gp);
                    dgamma = dgamma + q * tg;
                    axpy(wgt * q, gp, &mut dtl[e * rl + k * fout..e * rl + (k + 1) * fout]);
                    let dq = wgt * tg;
                    dkp[e * r + k] = dq * pk;
                    let dp = dq * kk;
                    axpy(dp, xj, &mut dtr[e * rr + k * fin..e * rr + (k + 1) * fin]);
                    axpy(dp, trk, &mut dxj[e * fin..(e + 1) * fin]);
                }
                let coef = dgamma * inv_deg * c.gamma[e] * scale_d;
                axpy(coef, &c.d[e * fin..(e + 1) * fin], &mut dd[e * fin..(e + 1) * fin]);
            }
        }
        let mut dhh = vec![T::zero(); ec * fin];
        gemm(ec, rl, fin, T::one(), &dtl, Op::N, self.ml.data(), Op::N, T::zero(), &mut dhh);
        gemm(ec, rr, fin, T::one(), &dtr, Op::N, self.mr.data(), Op::N, T::one(), &mut dhh);
        gemm(ec, r, fin, T::one(), &dkp, Op::N, self.wk.data(), Op::N, T::one(), &mut dhh);
        let mut dml = vec![T::zero(); rl * fin];
        gemm(rl, ec, fin, T::one(), &dtl, Op::T, &c.hh, Op::N, T::zero(), &mut dml);
        let mut dmr = vec![T::zero(); rr * fin];
        gemm(rr, ec, fin, T::one(), &dtr, Op::T, &c.hh, Op::N, T::zero(), &mut dmr);
        let mut dwk = vec![T::zero(); r * fin];
        gemm(r, ec, fin, T::one(), &dkp, Op::T, &c.hh, Op::N, T::zero(), &mut dwk);
        let slope: T = lit(LEAKY_SLOPE);
        let dz0: Vec<T> = dhh
            .iter()
            .zip(&c.z0)
            .map(|(&gh, &z)| if z >= T::zero() { gh } else { gh * slope })
            .collect();
        let mut dw0 = vec![T::zero(); fin * fin];
        gemm(fin, ec, fin, T::one(), &dz0, Op::T, &c.d, Op::N, T::zero(), &mut dw0);
        gemm(ec, fin, fin, T::one(), &dz0, Op::N, self.w0.data(), Op::N, T::one(), &mut dd);
        ChunkGrads {
            dw0,
            db0: col_sums(&dz0, fin),
            dml,
            dbl: col_sums(&dtl, rl),
            dmr,
            dbr: col_sums(&dtr, rr),
            dwk,
            dbk: col_sums(&dkp, r),
            dd,
            dxj,
        }
    }
}

fn accumulate<T: Real>(acc: &mut [T], part: &[T]) {
    for (a, &b) in acc.iter_mut().zip(part) {
        *a = *a + b;
    }
}

impl<T: Real> Backward<T> for AggregateOp<T> {
    fn name(&self) -> &'static str {
        "nonlocal_aggregate"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let s = &self.shape;
        let (fin, r) = (s.fin, s.rank);
        let (rl, rr) = (s.rows_left(), s.rows_right());
        let gd = g.data();
        let parts = par::map_range(self.chunks.len(), |ci| self.backward_chunk(ci, gd));
        let mut dw0 = vec![T::zero(); fin * fin];
        let mut db0 = vec![T::zero(); fin];
        let mut dml = vec![T::zero(); rl * fin];
        let mut dbl = vec![T::zero(); rl];
        let mut dmr = vec![T::zero(); rr * fin];
        let mut dbr = vec![T::zero(); rr];
        let mut dwk = vec![T::zero(); r * fin];
        let mut dbk = vec![T::zero(); r];
        let mut dx = vec![T::zero(); self.x.len()];
        for (ci, part) in parts.iter().enumerate() {
            accumulate(&mut dw0, &part.dw0);
            accumulate(&mut db0, &part.db0);
            accumulate(&mut dml, &part.dml);
            accumulate(&mut dbl, &part.dbl);
            accumulate(&mut dmr, &part.dmr);
            accumulate(&mut dbr, &part.dbr);
            accumulate(&mut dwk, &part.dwk);
            accumulate(&mut dbk, &part.dbk);
            let e0 = self.idx.offsets[self.chunks[ci].0];
            let ec = part.dd.len() / fin;
            for e in 0..ec {
                let (j, i) = (self.idx.src[e0 + e], self.idx.tgt[e0 + e]);
                let dde = &part.dd[e * fin..(e + 1) * fin];
                let dxe = &part.dxj[e * fin..(e + 1) * fin];
                for c in 0..fin {
                    dx[j * fin + c] = dx[j * fin + c] + dde[c] + dxe[c];
                    dx[i * fin + c] = dx[i * fin + c] - dde[c];
                }
            }
        }
        let (ml, mr) = (s.shifts_left(), s.shifts_right());
        Ok(vec![
            Some(Tensor::new(self.x.shape(), dx)?),
            Some(Tensor::new(&[fin, fin], dw0)?),
            Some(Tensor::new(&[fin], db0)?),
            Some(fold_gradient(&dml, rl / ml, ml, fin)),
            Some(Tensor::new(&[rl], dbl)?),
            Some(fold_gradient(&dmr, rr / mr, mr, fin)),
            Some(Tensor::new(&[rr], dbr)?),
            Some(Tensor::new(&[r, fin], dwk)?),
            Some(Tensor::new(&[r], dbk)?),
        ])
    }
}

fn check_params<T: Real>(s: &EccShape, v: &EccVars<T>) -> Result<()> {
    s.validate()?;
    let expect: [(&str, &Var<T>, Vec<usize>); 8] = [
        ("W0", &v.w0, vec![s.fin, s.fin]),
        ("b0", &v.b0, vec![s.fin]),
        ("W_L", &v.wl, vec![s.rows_left() / s.shifts_left(), s.fin]),
        ("b_L", &v.bl, vec![s.rows_left()]),
        ("W_R", &v.wr, vec![s.rows_right() / s.shifts_right(), s.fin]),
        ("b_R", &v.br, vec![s.rows_right()]),
        ("W_kappa", &v.wk, vec![s.rank, s.fin]),
        ("b_kappa", &v.bk, vec![s.rank]),
    ];
    for (name, var, shape) in expect {
        if var.shape() != shape.as_slice() {
            return Err(Error::shape(format!(
                "{name} has shape {:?}, expected {shape:?}",
                var.shape()
            )));
        }
    }
    Ok(())
}

fn chunk_bounds(pixels: usize, chunk: usize) -> Vec<(usize, usize)> {
    let chunk = chunk.max(1);
    (0..pixels.div_ceil(chunk))
        .map(|c| (c * chunk, ((c + 1) * chunk).min(pixels)))
        .collect()
}

fn run_forward<T: Real, C: MaddCounter>(
    x: &Tensor<T>,
    graphs: &[PixelGraph],
    s: &EccShape,
    v: &EccVars<T>,
    chunk_pixels: usize,
    keep: bool,
) -> Result<(Tensor<T>, Arc<EdgeIndex>, Tensor<T>, Tensor<T>, Vec<(usize, usize)>, Vec<ChunkCache<T>>, u64)> {
    check_params(s, v)?;
    let d = x.map_dims()?;
    if d.channels != s.fin {
        return Err(Error::shape(format!(
            "graph conv expects {} input channels, got {}",
            s.fin, d.channels
        )));
    }
    let idx = Arc::new(EdgeIndex::new(d, graphs)?);
    let ml = materialize(v.wl.value(), s.shifts_left());
    let mr = materialize(v.wr.value(), s.shifts_right());
    let w = Weights {
        w0: v.w0.value().data(),
        b0: v.b0.value().data(),
        ml: ml.data(),
        bl: v.bl.value().data(),
        mr: mr.data(),
        br: v.br.value().data(),
        wk: v.wk.value().data(),
        bk: v.bk.value().data(),
    };
    let chunks = chunk_bounds(idx.pixels(), chunk_pixels);
    let xd = x.data();
    let results = par::map_range(chunks.len(), |ci| {
        let (p0, p1) = chunks[ci];
        forward_chunk::<T, C>(s, &idx, xd, &w, p0, p1, keep)
    });
    let mut out = Vec::with_capacity(idx.pixels() * s.fout);
    let mut caches = Vec::new();
    let mut madds = 0;
    for (o, c, n) in results {
        out.extend_from_slice(&o);
        caches.extend(c);
        madds += n;
    }
    let out = Tensor::new(&d.with_channels(s.fout).shape(), out)?;
    Ok((out, idx, ml, mr, chunks, caches, madds))
}

/// Low-rank edge-conditioned aggregation
/// `H_i^NL = Σ_{j∈S_i} γ_{j→i} Θ_{j→i} H_j / |S_i|`; pixels without
/// neighbours get the zero vector.
pub fn nonlocal_aggregate<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    graphs: &[PixelGraph],
    shape: &EccShape,
    vars: &EccVars<T>,
    chunk_pixels: usize,
) -> Result<Var<T>> {
    let keep = tape.is_recording();
    let (out, idx, ml, mr, chunks, caches, _) = run_forward::<T, NoCount>(x.value(), graphs, shape, vars, chunk_pixels, keep)?;
    let inputs = [x, &vars.w0, &vars.b0, &vars.wl, &vars.bl, &vars.wr, &vars.br, &vars.wk, &vars.bk];
    Ok(tape.record(out, &inputs, || {
        Box::new(AggregateOp {
            shape: *shape,
            idx,
            x: x.shared(),
            w0: vars.w0.shared(),
            ml,
            mr,
            wk: vars.wk.shared(),
            chunks,
            caches,
        })
    }))
}

/// Gradient-free evaluation of [`nonlocal_aggregate`] that also reports how
/// many multiply-adds the message computation performed.
pub fn nonlocal_aggregate_counted<T: Real>(
    x: &Tensor<T>,
    graphs: &[PixelGraph],
    params: &EccParams<T>,
) -> Result<(Tensor<T>, u64)> {
    let tape = Tape::no_grad();
    let vars = params.bind(&tape);
    let (out, .., madds) = run_forward::<T, CountMadds>(x, graphs, &params.shape, &vars, DEFAULT_CHUNK_PIXELS, false)?;
    Ok((out, madds))
}

struct AttentionOnlyOp<T: Real> {
    idx: Arc<EdgeIndex>,
    x: Arc<Tensor<T>>,
    gamma: Vec<T>,
    delta: f64,
}

impl<T: Real> Backward<T> for AttentionOnlyOp<T> {
    fn name(&self) -> &'static str {
        "attention_only_aggregate"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let c = *self.x.shape().last().unwrap();
        let x = self.x.data();
        let gd = g.data();
        let scale: T = lit(-2.0 / self.delta);
        let mut dx = vec![T::zero(); x.len()];
        for (e, (&j, &i)) in self.idx.src.iter().zip(&self.idx.tgt).enumerate() {
            let gi = &gd[i * c..(i + 1) * c];
            let xj = &x[j * c..(j + 1) * c];
            let dgamma = dot(xj, gi);
            let coef = dgamma * self.gamma[e] * scale;
            for ch in 0..c {
                let dd = coef * (x[j * c + ch] - x[i * c + ch]);
                dx[j * c + ch] = dx[j * c + ch] + self.gamma[e] * gi[ch] + dd;
                dx[i * c + ch] = dx[i * c + ch] - dd;
            }
        }
        Ok(vec![Some(Tensor::new(self.x.shape(), dx)?)])
    }
}

/// Ablation aggregation `H_i^NL = Σ_{j∈S_i} γ_{j→i} H_j` (no learned
/// matrices, no normalisation by the neighbourhood size).
pub fn attention_only_aggregate<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    graphs: &[PixelGraph],
    delta: f64,
) -> Result<Var<T>> {
    let d = x.value().map_dims()?;
    let idx = Arc::new(EdgeIndex::new(d, graphs)?);
    let c = d.channels;
    let xd = x.value().data();
    let inv_delta: T = lit(1.0 / delta);
    let gamma: Vec<T> = idx
        .src
        .iter()
        .zip(&idx.tgt)
        .map(|(&j, &i)| {
            let sq = crate::linalg::sq_dist(&xd[j * c..(j + 1) * c], &xd[i * c..(i + 1) * c]);
            (-sq * inv_delta).exp()
        })
        .collect();
    let mut out = vec![T::zero(); xd.len()];
    for (e, (&j, &i)) in idx.src.iter().zip(&idx.tgt).enumerate() {
        axpy(gamma[e], &xd[j * c..(j + 1) * c], &mut out[i * c..(i + 1) * c]);
    }
    let out = Tensor::new(x.shape(), out)?;
    Ok(tape.record(out, &[x], || {
        Box::new(AttentionOnlyOp {
            idx,
            x: x.shared(),
            gamma,
            delta,
        })
    }))
}
