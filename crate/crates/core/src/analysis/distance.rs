//! Feature-space distance maps around one pixel.

use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::real::Real;
use crate::tensor::Tensor;

/// Euclidean distances from one pixel's feature vector to every pixel of its
/// (border-clamped) search window.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major over the window.
    pub values: Vec<f64>,
    pub center: (usize, usize),
}

impl DistanceMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[(y - self.y0) * self.width + (x - self.x0)]
    }

    /// The closest pixel outside the target's 3×3 neighbourhood, ties to
    /// the lowest row-major index.
    pub fn nearest_candidate(&self, image_width: usize) -> Option<usize> {
        let (cy, cx) = self.center;
        let mut best: Option<(f64, usize)> = None;
        for wy in 0..self.height {
            for wx in 0..self.width {
                let (y, x) = (self.y0 + wy, self.x0 + wx);
                if y.abs_diff(cy) <= 1 && x.abs_diff(cx) <= 1 {
                    continue;
                }
                let d = self.values[wy * self.width + wx];
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, y * image_width + x));
                }
            }
        }
        best.map(|(_, j)| j)
    }
}

/// Distance map on batch item 0 of a `[B, H, W, C]` feature map.
pub fn distance_map<T: Real>(features: &Tensor<T>, y: usize, x: usize, window: usize) -> Result<DistanceMap> {
    let d = features.map_dims()?;
    if y >= d.height || x >= d.width {
        return Err(Error::invalid(format!("pixel ({y}, {x}) outside {}×{}", d.height, d.width)));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("window {window} must be odd")));
    }
    let r = window / 2;
    let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(d.height));
    let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(d.width));
    let c = d.channels;
    let f = features.data();
    let fi = &f[(y * d.width + x) * c..(y * d.width + x + 1) * c];
    let mut values = Vec::with_capacity((y1 - y0) * (x1 - x0));
    for yy in y0..y1 {
        for xx in x0..x1 {
            let j = yy * d.width + xx;
            values.push(sq_dist(fi, &f[j * c..(j + 1) * c]).as_f64().sqrt());
        }
    }
    Ok(DistanceMap {
        y0,
        x0,
        height: y1 - y0,
        width: x1 - x0,
        values,
        center: (y, x),
    })
}
