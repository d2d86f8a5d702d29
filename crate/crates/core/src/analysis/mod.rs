//! Analyses of a trained model's hidden features.

mod distance;
mod edges;
mod receptive;
mod report;
mod spectrum;

pub use distance::{distance_map, DistanceMap};
pub use edges::{edge_accuracy, true_graph};
pub use receptive::{perturbation_probe, receptive_field, sensitivity_probe, Mask};
pub use report::{heatmap, range_sidecar, write_heatmap, Table};
pub use spectrum::{feature_dft, FeatureDft};

use std::sync::Arc;

use crate::graph_builder::PixelGraph;
use crate::network::ForwardTrace;

/// The distinct graphs of a traced forward pass, named by the first layer
/// that consumed each, in execution order.
pub fn layer_graphs<T>(trace: &ForwardTrace<T>) -> Vec<(String, Arc<Vec<PixelGraph>>)> {
    let mut out: Vec<(String, Arc<Vec<PixelGraph>>)> = Vec::new();
    for r in &trace.records {
        if let Some(g) = &r.graphs {
            if !out.iter().any(|(_, h)| Arc::ptr_eq(g, h)) {
                out.push((r.name.clone(), g.clone()));
            }
        }
    }
    out
}
