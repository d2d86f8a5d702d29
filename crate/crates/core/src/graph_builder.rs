//! Dynamic K-nearest-neighbour graphs over pixels in feature space.
//!
//! Each pixel is connected to the `K` pixels whose hidden feature vectors
//! are closest in Euclidean distance. The pixel itself and its 8-connected
//! neighbours are never candidates (the local 3×3 convolution already sees
//! them). Ties are broken by the smaller row-major pixel index, so graphs are
//! reproducible bit-for-bit regardless of thread count.
//!
//! Two regimes exist: training compares every pair of pixels of a patch,
//! inference only looks inside a square search window centred at each pixel
//! and truncated at the image border.

use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::par;
use crate::real::Real;
use crate::tensor::{MapDims, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphMode {
    /// All pixels of the patch are candidates.
    Train,
    /// Only pixels inside a `window × window` square around each pixel.
    Infer { window: usize },
}

/// Directed K-NN graph of one image; `neighbors(i)` lists the sources `j`
/// of edges `j → i`, nearest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelGraph {
    height: usize,
    width: usize,
    k: usize,
    mode: GraphMode,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl PixelGraph {
    /// Assemble a graph from explicit neighbour lists (validated).
    pub fn from_lists(height: usize, width: usize, k: usize, mode: GraphMode, lists: &[Vec<u32>]) -> Result<Self> {
        if lists.len() != height * width {
            return Err(Error::shape(format!(
                "{} neighbour lists for a {height}x{width} image",
                lists.len()
            )));
        }
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for l in lists {
            neighbors.extend_from_slice(l);
            offsets.push(neighbors.len());
        }
        let g = PixelGraph {
            height,
            width,
            k,
            mode,
            offsets,
            neighbors,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn nodes(&self) -> usize {
        self.height * self.width
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Offset of pixel `i`'s first edge in the flattened edge list.
    pub fn edge_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// All edges as `(target i, source j)`, grouped by target.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nodes()).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j as usize)))
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes();
        for i in 0..n {
            let list = self.neighbors(i);
            if list.len() > self.k {
                return Err(Error::invalid(format!(
                    "pixel {i} has {} neighbours (K = {})",
                    list.len(),
                    self.k
                )));
            }
            for (pos, &j) in list.iter().enumerate() {
                let j = j as usize;
                if j >= n {
                    return Err(Error::invalid(format!("pixel {i}: neighbour {j} out of range")));
                }
                let cheb = self.chebyshev(i, j);
                if cheb <= 1 {
                    return Err(Error::invalid(format!(
                        "pixel {i}: neighbour {j} is itself or 8-connected"
                    )));
                }
                if let GraphMode::Infer { window } = self.mode {
                    if cheb > window / 2 {
                        return Err(Error::invalid(format!(
                            "pixel {i}: neighbour {j} outside the {window}x{window} window"
                        )));
                    }
                }
                if list[..pos].contains(&(j as u32)) {
                    return Err(Error::invalid(format!("pixel {i}: duplicate neighbour {j}")));
                }
            }
        }
        Ok(())
    }

    pub fn chebyshev(&self, i: usize, j: usize) -> usize {
        let (yi, xi) = (i / self.width, i % self.width);
        let (yj, xj) = (j / self.width, j % self.width);
        yi.abs_diff(yj).max(xi.abs_diff(xj))
    }
}

/// Candidate rows/cols examined for pixel `(y, x)`.
fn candidate_box(y: usize, x: usize, h: usize, w: usize, mode: GraphMode) -> (usize, usize, usize, usize) {
    match mode {
        GraphMode::Train => (0, h, 0, w),
        GraphMode::Infer { window } => {
            let r = window / 2;
            (y.saturating_sub(r), (y + r + 1).min(h), x.saturating_sub(r), (x + r + 1).min(w))
        }
    }
}

fn select_neighbors<T: Real>(feat: &[T], h: usize, w: usize, c: usize, i: usize, k: usize, mode: GraphMode) -> Vec<u32> {
    if k == 0 {
        return Vec::new();
    }
    let (y, x) = (i / w, i % w);
    let fi = &feat[i * c..(i + 1) * c];
    let (y0, y1, x0, x1) = candidate_box(y, x, h, w, mode);
    // Sorted ascending by (distance, index); at most k entries.
    let mut best: Vec<(T, u32)> = Vec::with_capacity(k + 1);
    for yy in y0..y1 {
        for xx in x0..x1 {
            if yy.abs_diff(y) <= 1 && xx.abs_diff(x) <= 1 {
                continue;
            }
            let j = yy * w + xx;
            let mut d = sq_dist(fi, &feat[j * c..(j + 1) * c]);
            if d.is_nan() {
                d = T::infinity();
            }
            // Candidates arrive in increasing index order, so an equal
            // distance never displaces an earlier entry.
            if best.len() == k && !(d < best[k - 1].0) {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, j as u32));
            best.truncate(k);
        }
    }
    best.into_iter().map(|(_, j)| j).collect()
}

/// Build one graph per batch item of a `[B, H, W, C]` feature map.
pub fn build_graph<T: Real>(features: &Tensor<T>, k: usize, mode: GraphMode) -> Result<Vec<PixelGraph>> {
    let d = features.map_dims()?;
    if let GraphMode::Infer { window } = mode {
        if window < 3 || window % 2 == 0 {
            return Err(Error::invalid(format!("search window {window} must be odd and at least 3")));
        }
    }
    let n = d.pixels();
    let data = features.data();
    let lists = par::map_range(d.batch * n, |p| {
        let (b, i) = (p / n, p % n);
        let img = &data[b * n * d.channels..(b + 1) * n * d.channels];
        select_neighbors(img, d.height, d.width, d.channels, i, k, mode)
    });
    lists
        .chunks(n.max(1))
        .take(d.batch)
        .map(|chunk| assemble(d, k, mode, chunk))
        .collect()
}

fn assemble(d: MapDims, k: usize, mode: GraphMode, lists: &[Vec<u32>]) -> Result<PixelGraph> {
    let mut offsets = Vec::with_capacity(lists.len() + 1);
    offsets.push(0);
    let mut neighbors = Vec::with_capacity(lists.len() * k);
    for l in lists {
        neighbors.extend_from_slice(l);
        offsets.push(neighbors.len());
    }
    Ok(PixelGraph {
        height: d.height,
        width: d.width,
        k,
        mode,
        offsets,
        neighbors,
    })
}

/// Training-regime graph: all pairwise distances within each patch.
pub fn build_graph_train<T: Real>(features: &Tensor<T>, k: usize) -> Result<Vec<PixelGraph>> {
    build_graph(features, k, GraphMode::Train)
}

/// Inference-regime graph: neighbours searched in a `window × window` square.
pub fn build_graph_infer<T: Real>(features: &Tensor<T>, k: usize, window: usize) -> Result<Vec<PixelGraph>> {
    build_graph(features, k, GraphMode::Infer { window })
}

/// Edge labels `d = H_j − H_i`, one row per edge in graph order.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLabels<T> {
    pub labels: Tensor<T>,
}

/// Labels for every edge of `graphs` computed from `features`.
pub fn edge_labels<T: Real>(features: &Tensor<T>, graphs: &[PixelGraph]) -> Result<Vec<EdgeLabels<T>>> {
    let d = features.map_dims()?;
    check_graphs(d, graphs)?;
    let (n, c) = (d.pixels(), d.channels);
    graphs
        .iter()
        .enumerate()
        .map(|(b, g)| {
            let img = &features.data()[b * n * c..(b + 1) * n * c];
            let mut out = Vec::with_capacity(g.num_edges() * c);
            for (i, j) in g.edges() {
                for ch in 0..c {
                    out.push(img[j * c + ch] - img[i * c + ch]);
                }
            }
            Ok(EdgeLabels {
                labels: Tensor::new(&[g.num_edges(), c], out)?,
            })
        })
        .collect()
}

/// Verify that `graphs` index pixels of feature maps with extents `d`.
pub fn check_graphs(d: MapDims, graphs: &[PixelGraph]) -> Result<()> {
    if graphs.len() != d.batch {
        return Err(Error::shape(format!(
            "{} graphs for a batch of {}",
            graphs.len(),
            d.batch
        )));
    }
    for g in graphs {
        if g.height != d.height || g.width != d.width {
            return Err(Error::shape(format!(
                "graph built for {}x{} applied to {}x{} features",
                g.height, g.width, d.height, d.width
            )));
        }
    }
    Ok(())
}
