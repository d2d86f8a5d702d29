//! Lightweight edge-conditioned graph convolution.

mod aggregate;
mod circulant;
mod fnet;
mod layer;
mod memory;

pub use aggregate::{
    attention_only_aggregate, nonlocal_aggregate, nonlocal_aggregate_counted, EccVars,
    DEFAULT_CHUNK_PIXELS,
};
pub use circulant::{circulant_matvec, effective_shifts, fold_gradient, materialize};
pub use fnet::{edge_attention, fnet_forward, init_ecc, Aggregation, EccParams, EccShape, EdgeWeights};
pub use layer::{combine, graph_conv_layer};
pub use memory::{memory_report, MemoryReport};
