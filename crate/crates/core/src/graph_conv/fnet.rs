//! The edge-label subnetwork: maps an edge label `d = H_j − H_i` to the
//! low-rank factors of that edge's aggregation matrix.
//!
//! `h = leaky_relu(W₀ d + b₀)`, then three parallel heads without output
//! nonlinearity: `θ_L = C_L h + b_L` (`r × Fout`), `θ_R = C_R h + b_R`
//! (`r × Fin`), `κ = W_κ h + b_κ` (`r`). `C_L`, `C_R` are stacked partial
//! circulant matrices; `W₀`, `W_κ` are dense.
//!
//! `θ_R` has the input width because it is contracted with `H_j`; `θ_L`
//! carries the output width.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::circulant::{circulant_matvec, effective_shifts};
use crate::autodiff::{leaky_relu_scalar, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// How the non-local branch aggregates neighbour features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Low-rank edge-conditioned aggregation with edge attention.
    Ecc,
    /// Ablation: `Σ_j γ_j H_j` with no learned matrices.
    AttentionOnly,
}

/// Hyperparameters of one graph-convolutional layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EccShape {
    pub fin: usize,
    pub fout: usize,
    pub rank: usize,
    /// Requested circulant shifts per block (`m`).
    pub shifts: usize,
    /// Edge-attention temperature `δ`.
    pub delta: f64,
    pub aggregation: Aggregation,
}

impl EccShape {
    pub fn new(fin: usize, fout: usize, rank: usize, shifts: usize, delta: f64) -> Self {
        EccShape {
            fin,
            fout,
            rank,
            shifts,
            delta,
            aggregation: Aggregation::Ecc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fin == 0 || self.fout == 0 {
            return Err(Error::Config("graph-conv widths must be positive".into()));
        }
        if self.rank == 0 || self.rank > self.fin {
            return Err(Error::Config(format!(
                "rank {} must satisfy 1 <= r <= Fin = {}",
                self.rank, self.fin
            )));
        }
        if self.shifts == 0 {
            return Err(Error::Config("circulant shifts must be at least 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta {} must be positive", self.delta)));
        }
        if self.aggregation == Aggregation::AttentionOnly && self.fin != self.fout {
            return Err(Error::Config(
                "attention-only aggregation needs equal input and output widths".into(),
            ));
        }
        Ok(())
    }

    pub fn rows_left(&self) -> usize {
        self.rank * self.fout
    }

    pub fn rows_right(&self) -> usize {
        self.rank * self.fin
    }

    pub fn shifts_left(&self) -> usize {
        effective_shifts(self.shifts, self.rows_left())
    }

    pub fn shifts_right(&self) -> usize {
        effective_shifts(self.shifts, self.rows_right())
    }

    /// Values produced by the subnetwork per edge: `r(Fin + Fout + 1)`.
    pub fn outputs_per_edge(&self) -> usize {
        self.rank * (self.fin + self.fout + 1)
    }
}

/// Trainable tensors of one graph-convolutional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EccParams<T> {
    pub shape: EccShape,
    /// `[Fin, Fin]`, row = output.
    pub w0: Tensor<T>,
    pub b0: Tensor<T>,
    /// `[r·Fout / m_L, Fin]` free rows.
    pub wl: Tensor<T>,
    pub bl: Tensor<T>,
    /// `[r·Fin / m_R, Fin]` free rows.
    pub wr: Tensor<T>,
    pub br: Tensor<T>,
    /// `[r, Fin]`.
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    /// Local 3×3 convolution, `[3, 3, Fin, Fout]`.
    pub local: Tensor<T>,
    /// Output bias `[Fout]`.
    pub bias: Tensor<T>,
}

/// Per-edge output of the subnetwork.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights<T> {
    /// `[r, Fout]` row-major.
    pub theta_l: Vec<T>,
    /// `[r, Fin]` row-major.
    pub theta_r: Vec<T>,
    pub kappa: Vec<T>,
    pub gamma: T,
}

impl<T: Real> EdgeWeights<T> {
    pub fn len(&self) -> usize {
        self.theta_l.len() + self.theta_r.len() + self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `exp(−‖d‖² / δ)`.
pub fn edge_attention<T: Real>(d: &[T], delta: f64) -> T {
    let sq = dot(d, d);
    (-sq / lit(delta)).exp()
}

fn dense_matvec<T: Real>(w: &Tensor<T>, b: &Tensor<T>, x: &[T]) -> Vec<T> {
    let n = x.len();
    w.data()
        .chunks_exact(n)
        .zip(b.data())
        .map(|(row, &bi)| dot(row, x) + bi)
        .collect()
}

/// Evaluate the subnetwork on a single edge label.
pub fn fnet_forward<T: Real>(d: &[T], p: &EccParams<T>) -> Result<EdgeWeights<T>> {
    let s = &p.shape;
    if d.len() != s.fin {
        return Err(Error::shape(format!("edge label has {} entries, expected {}", d.len(), s.fin)));
    }
    let slope: T = lit(LEAKY_SLOPE);
    let h: Vec<T> = dense_matvec(&p.w0, &p.b0, d)
        .into_iter()
        .map(|v| leaky_relu_scalar(v, slope))
        .collect();
    let mut theta_l = circulant_matvec(&p.wl, s.shifts_left(), s.rows_left(), &h)?;
    for (t, &b) in theta_l.iter_mut().zip(p.bl.data()) {
        *t = *t + b;
    }
    let mut theta_r = circulant_matvec(&p.wr, s.shifts_right(), s.rows_right(), &h)?;
    for (t, &b) in theta_r.iter_mut().zip(p.br.data()) {
        *t = *t + b;
    }
    let kappa = dense_matvec(&p.wk, &p.bk, &h);
    Ok(EdgeWeights {
        theta_l,
        theta_r,
        kappa,
        gamma: edge_attention(d, s.delta),
    })
}

fn normal<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], var: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, var.sqrt()).expect("finite variance");
    Tensor::from_fn(shape, |_| lit(dist.sample(rng)))
}

/// Initialise a graph-convolutional layer.
///
/// `W₀ ~ N(0, 1/Fin)`, circulant free rows `~ N(0, 1/Fin²)`,
/// `W_κ ~ N(0, 2/r)`, all head biases zero. The local kernel is Glorot-normal
/// over its `3·3·Fin` fan-in and `3·3·Fout` fan-out.
pub fn init_ecc<T: Real>(shape: EccShape, seed: u64) -> Result<EccParams<T>> {
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fin = shape.fin as f64;
    let (fi, fo, r) = (shape.fin, shape.fout, shape.rank);
    let w0 = normal(&mut rng, &[fi, fi], 1.0 / fin);
    let wl = normal(&mut rng, &[shape.rows_left() / shape.shifts_left(), fi], 1.0 / (fin * fin));
    let wr = normal(&mut rng, &[shape.rows_right() / shape.shifts_right(), fi], 1.0 / (fin * fin));
    let wk = normal(&mut rng, &[r, fi], 2.0 / r as f64);
    let local = normal(&mut rng, &[3, 3, fi, fo], 2.0 / (9.0 * (fi + fo) as f64));
    Ok(EccParams {
        shape,
        w0,
        b0: Tensor::zeros(&[fi]),
        wl,
        bl: Tensor::zeros(&[shape.rows_left()]),
        wr,
        br: Tensor::zeros(&[shape.rows_right()]),
        wk,
        bk: Tensor::zeros(&[r]),
        local,
        bias: Tensor::zeros(&[fo]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_values() {
        assert_eq!(edge_attention::<f64>(&[0.0, 0.0], 10.0), 1.0);
        let d = [1.0, 2.0, 3.0]; // ‖d‖² = 14
        assert!((edge_attention(&d, 14.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((edge_attention(&d, 1.4) - (-10.0f64).exp()).abs() < 1e-18);
        assert!((edge_attention(&d, 14.0) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn output_size_matches_rank_budget() {
        let s = EccShape::new(66, 66, 10, 3, 10.0);
        assert_eq!(s.outputs_per_edge(), 1330);
        let p = init_ecc::<f64>(EccShape::new(12, 12, 4, 3, 10.0), 1).unwrap();
        let w = fnet_forward(&vec![0.1; 12], &p).unwrap();
        assert_eq!(w.len(), 4 * (12 + 12 + 1));
    }

    #[test]
    fn zero_label_gives_unit_attention_and_bias_response() {
        let mut p = init_ecc::<f64>(EccShape::new(6, 6, 2, 3, 10.0), 5).unwrap();
        let w = fnet_forward(&[0.0; 6], &p).unwrap();
        assert_eq!(w.gamma, 1.0);
        assert!(w.theta_l.iter().chain(&w.theta_r).chain(&w.kappa).all(|&v| v == 0.0));
        // with a nonzero head bias the zero-input response is that bias
        p.bk = Tensor::new(&[2], vec![0.3, -0.4]).unwrap();
        let w = fnet_forward(&[0.0; 6], &p).unwrap();
        assert_eq!(w.kappa, vec![0.3, -0.4]);
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let s = EccShape::new(8, 8, 2, 2, 10.0);
        let a = init_ecc::<f32>(s, 9).unwrap();
        let b = init_ecc::<f32>(s, 9).unwrap();
        let c = init_ecc::<f32>(s, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.w0, c.w0);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        assert!(EccShape::new(4, 4, 5, 1, 10.0).validate().is_err());
        assert!(EccShape::new(4, 4, 0, 1, 10.0).validate().is_err());
        assert!(EccShape::new(4, 4, 2, 1, 0.0).validate().is_err());
        let mut s = EccShape::new(4, 2, 2, 1, 1.0);
        s.aggregation = Aggregation::AttentionOnly;
        assert!(s.validate().is_err());
    }
}
