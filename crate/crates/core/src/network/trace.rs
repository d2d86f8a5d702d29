//! Records of a forward pass used by the analyses.

use std::sync::Arc;

use crate::graph_builder::PixelGraph;
use crate::tensor::Tensor;

/// How one feature map depends spatially on earlier ones.
#[derive(Clone, Debug)]
pub enum DepOp {
    /// The network input.
    Input,
    /// Reflection-padded convolution with the given half-widths.
    Local { input: usize, ry: usize, rx: usize },
    /// Graph convolution: the 3×3 local path plus every graph neighbour.
    Graph { input: usize, graphs: Arc<Vec<PixelGraph>> },
    /// Sum or concatenation of maps of the same spatial size.
    Union(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct DepNode {
    pub name: String,
    pub op: DepOp,
}

/// Spatial dependency structure of a forward pass, in execution order.
///
/// Pointwise stages (leaky ReLU, running-statistics batch norm) do not
/// appear. Training-mode batch norm couples all pixels and is not modelled.
#[derive(Clone, Debug)]
pub struct DepProgram {
    pub height: usize,
    pub width: usize,
    pub nodes: Vec<DepNode>,
}

impl DepProgram {
    pub fn new(height: usize, width: usize) -> Self {
        DepProgram {
            height,
            width,
            nodes: vec![DepNode {
                name: "input".into(),
                op: DepOp::Input,
            }],
        }
    }

    pub fn push(&mut self, name: impl Into<String>, op: DepOp) -> usize {
        self.nodes.push(DepNode { name: name.into(), op });
        self.nodes.len() - 1
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn output(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// A feature map produced during a traced forward pass.
#[derive(Clone, Debug)]
pub struct LayerRecord<T> {
    pub name: String,
    /// Post-activation features `[B, H, W, C]`.
    pub features: Tensor<T>,
    /// Graph consumed by this layer, for graph convolutions.
    pub graphs: Option<Arc<Vec<PixelGraph>>>,
    /// Node of this map in the [`DepProgram`].
    pub node: usize,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub records: Vec<LayerRecord<T>>,
    pub program: DepProgram,
}

impl<T> ForwardTrace<T> {
    pub fn record(&self, name: &str) -> Option<&LayerRecord<T>> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.name.as_str()).collect()
    }
}
