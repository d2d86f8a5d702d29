//! Graph-convolutional denoising (GCDN).
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: dense tensors and a tape-based reverse-mode engine covering
//!   the operations the network needs (reflection-padded convolution, batch
//!   normalisation, leaky ReLU, Adam).
//! * [`graph_builder`]: dynamic K-nearest-neighbour pixel graphs in feature
//!   space, in whole-patch (training) and search-window (inference) regimes.
//! * [`graph_conv`]: the lightweight edge-conditioned convolution: circulant
//!   output heads, low-rank aggregation, edge attention.
//! * [`network`]: the full denoiser, training loop and checkpoint format.
//! * [`prox`]: the classical proximal-gradient graph-smoothness denoiser and
//!   its spectral filter interpretation.
//! * [`image`], [`metrics`], [`noise`], [`analysis`]: data ingestion, quality
//!   metrics, noise synthesis and the hidden-feature analyses.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod analysis;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod graph_builder;
pub mod graph_conv;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod noise;
pub mod par;
pub mod prox;
pub mod real;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
