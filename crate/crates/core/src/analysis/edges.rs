//! How well hidden-layer graphs recover a reference pixel-similarity graph.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::graph_builder::{build_graph, GraphMode, PixelGraph};
use crate::image::GrayImage;
use crate::prox::local_means;
use crate::tensor::Tensor;

/// Reference graph: `k` nearest neighbours by 5×5 local mean of the clean
/// image, with the same exclusion and window rules as the network graphs.
pub fn true_graph(clean: &GrayImage, k: usize, mode: GraphMode) -> Result<PixelGraph> {
    let means = local_means(clean, 5);
    let t = Tensor::<f64>::new(&[1, clean.height(), clean.width(), 1], means)?;
    Ok(build_graph(&t, k, mode)?.remove(0))
}

/// Percentage of `truth` edges that are also edges of `predicted`
/// (100 when `truth` has no edges).
pub fn edge_accuracy(truth: &PixelGraph, predicted: &PixelGraph) -> Result<f64> {
    if truth.nodes() != predicted.nodes() {
        return Err(Error::shape("graphs are over different pixel sets"));
    }
    let pred: HashSet<(usize, usize)> = predicted.edges().collect();
    let total = truth.num_edges();
    if total == 0 {
        return Ok(100.0);
    }
    let hit = truth.edges().filter(|e| pred.contains(e)).count();
    Ok(100.0 * hit as f64 / total as f64)
}
