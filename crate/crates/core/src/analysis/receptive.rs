//! Receptive fields: graph tracing and two probes.

use crate::autodiff::{reflect_index, Backward, Tape};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::network::{DepOp, DepProgram, ForwardOptions, Model};
use crate::real::Real;
use crate::tensor::Tensor;

/// A boolean pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Bounding box `(y0, x0, y1, x1)` (inclusive) of the set pixels.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &v)| v) {
            let (y, x) = (i / self.width, i % self.width);
            b = Some(match b {
                None => (y, x, y, x),
                Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
            });
        }
        b
    }

    /// Mask pixels white, the rest a dimmed copy of `img`.
    pub fn overlay(&self, img: &GrayImage) -> Result<GrayImage> {
        if img.height() != self.height || img.width() != self.width {
            return Err(Error::shape("mask and image differ in size"));
        }
        Ok(GrayImage::from_fn(self.height, self.width, |y, x| {
            if self.get(y, x) {
                1.0
            } else {
                0.4 * img.get(y, x).clamp(0.0, 1.0)
            }
        }))
    }
}

/// Input pixels of node `start` that can influence pixel `(y, x)` of node
/// `end`, following local windows (with reflection) and graph edges of batch
/// item 0.
pub fn receptive_field(program: &DepProgram, y: usize, x: usize, end: usize, start: usize) -> Result<Mask> {
    let (h, w) = (program.height, program.width);
    if y >= h || x >= w {
        return Err(Error::invalid(format!("pixel ({y}, {x}) outside {h}×{w}")));
    }
    if end >= program.nodes.len() || start > end {
        return Err(Error::invalid(format!(
            "invalid layer range {start}..={end} for {} layers",
            program.nodes.len()
        )));
    }
    let mut sets: Vec<Option<Vec<bool>>> = vec![None; program.nodes.len()];
    let mut seed = vec![false; h * w];
    seed[y * w + x] = true;
    sets[end] = Some(seed);
    let mark = |sets: &mut Vec<Option<Vec<bool>>>, node: usize, p: usize| {
        sets[node].get_or_insert_with(|| vec![false; h * w])[p] = true;
    };
    let local = |sets: &mut Vec<Option<Vec<bool>>>, node: usize, p: usize, ry: usize, rx: usize| {
        let (py, px) = ((p / w) as isize, (p % w) as isize);
        for dy in -(ry as isize)..=ry as isize {
            for dx in -(rx as isize)..=rx as isize {
                let q = reflect_index(py + dy, h) * w + reflect_index(px + dx, w);
                mark(sets, node, q);
            }
        }
    };
    for n in (start + 1..=end).rev() {
        let Some(cur) = sets[n].take() else { continue };
        let active: Vec<usize> = (0..h * w).filter(|&p| cur[p]).collect();
        match &program.nodes[n].op {
            DepOp::Input => {}
            DepOp::Local { input, ry, rx } => {
                for &p in &active {
                    local(&mut sets, *input, p, *ry, *rx);
                }
            }
            DepOp::Graph { input, graphs } => {
                let g = &graphs[0];
                for &p in &active {
                    local(&mut sets, *input, p, 1, 1);
                    for &j in g.neighbors(p) {
                        mark(&mut sets, *input, j as usize);
                    }
                }
            }
            DepOp::Union(inputs) => {
                for &i in inputs {
                    for &p in &active {
                        mark(&mut sets, i, p);
                    }
                }
            }
        }
        sets[n] = Some(cur);
    }
    let data = sets[start]
        .take()
        .ok_or_else(|| Error::invalid(format!("layer {start} does not feed layer {end}")))?;
    Ok(Mask { height: h, width: w, data })
}

/// Input pixels whose perturbation by `eps` changes output pixel `(y, x)` of
/// an inference forward pass (graphs rebuilt for every probe).
pub fn perturbation_probe<T: Real>(model: &Model<T>, img: &GrayImage, y: usize, x: usize, eps: f64) -> Result<Mask> {
    let (h, w) = (img.height(), img.width());
    if y >= h || x >= w {
        return Err(Error::invalid(format!("pixel ({y}, {x}) outside {h}×{w}")));
    }
    let reference = model.denoise(img, usize::MAX)?.get(y, x);
    let data = crate::par::map_range(h * w, |q| {
        let mut p = img.clone();
        p.pixels_mut()[q] += eps;
        model.denoise(&p, usize::MAX).map(|out| out.get(y, x) != reference)
    })
    .into_iter()
    .collect::<Result<Vec<bool>>>()?;
    Ok(Mask { height: h, width: w, data })
}

struct PickOp {
    index: usize,
    shape: Vec<usize>,
}

impl<T: Real> Backward<T> for PickOp {
    fn name(&self) -> &'static str {
        "pick"
    }

    fn backward(&self, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let mut out = Tensor::zeros(&self.shape);
        out.data_mut()[self.index] = g.item();
        Ok(vec![Some(out)])
    }
}

/// Input pixels with a non-zero derivative of output pixel `(y, x)` in an
/// inference forward pass, graphs held at those of `img`. Unlike
/// [`perturbation_probe`] this sees influences too weak to survive rounding.
pub fn sensitivity_probe<T: Real>(model: &Model<T>, img: &GrayImage, y: usize, x: usize) -> Result<Mask> {
    let (h, w) = (img.height(), img.width());
    if y >= h || x >= w {
        return Err(Error::invalid(format!("pixel ({y}, {x}) outside {h}×{w}")));
    }
    let tape = Tape::new();
    let input = tape.leaf(img.to_tensor());
    let params: Vec<_> = model.params().iter().map(|(_, t)| tape.constant(t.clone())).collect();
    let out = model.forward_with(&tape, &input, &params, ForwardOptions::infer(model.config().window))?;
    let index = y * w + x;
    let picked = Tensor::scalar(out.output.value().data()[index]);
    let shape = out.output.shape().to_vec();
    let pix = tape.record(picked, &[&out.output], || Box::new(PickOp { index, shape }));
    drop(out);
    let grads = tape.backward(&pix)?;
    let g = grads.wrt(&input);
    Ok(Mask {
        height: h,
        width: w,
        data: g.data().iter().map(|v| *v != T::zero()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_convs_give_five_by_five() {
        let mut p = DepProgram::new(11, 11);
        p.push("c1", DepOp::Local { input: 0, ry: 1, rx: 1 });
        p.push("c2", DepOp::Local { input: 1, ry: 1, rx: 1 });
        let m = receptive_field(&p, 5, 5, 2, 0).unwrap();
        assert_eq!(m.count(), 25);
        assert_eq!(m.bounds(), Some((3, 3, 7, 7)));
    }

    #[test]
    fn border_reflection_folds_inwards() {
        let mut p = DepProgram::new(6, 6);
        p.push("c", DepOp::Local { input: 0, ry: 1, rx: 1 });
        let m = receptive_field(&p, 0, 0, 1, 0).unwrap();
        assert_eq!(m.count(), 4);
        assert!(receptive_field(&p, 0, 0, 0, 1).is_err());
        assert!(receptive_field(&p, 6, 0, 1, 0).is_err());
    }
}
