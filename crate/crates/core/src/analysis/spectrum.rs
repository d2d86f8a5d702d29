//! Frequency content of feature maps.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

/// 2-D DFT summary of each channel of batch item 0.
#[derive(Clone, Debug)]
pub struct FeatureDft {
    pub height: usize,
    pub width: usize,
    /// Per channel, `ln(1 + |F|)` with the zero frequency moved to the centre.
    pub log_magnitude: Vec<Vec<f64>>,
    /// Per channel, energy inside the centred quarter band over total energy.
    pub low_ratio: Vec<f64>,
}

impl FeatureDft {
    pub fn mean_low_ratio(&self) -> f64 {
        self.low_ratio.iter().sum::<f64>() / self.low_ratio.len().max(1) as f64
    }
}

/// Signed frequency of DFT bin `k` of an `n`-point transform.
fn signed(k: usize, n: usize) -> isize {
    if k < n.div_ceil(2) {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// Bins with `|f_y| < H/4` and `|f_x| < W/4` form the low band; an all-zero
/// channel counts as entirely low-frequency.
pub fn feature_dft<T: Real>(features: &Tensor<T>) -> Result<FeatureDft> {
    let d = features.map_dims()?;
    let (h, w, c) = (d.height, d.width, d.channels);
    let mut planner = FftPlanner::<f64>::new();
    let (fft_w, fft_h) = (planner.plan_fft_forward(w), planner.plan_fft_forward(h));
    let data = features.data();
    let mut log_magnitude = Vec::with_capacity(c);
    let mut low_ratio = Vec::with_capacity(c);
    for ch in 0..c {
        let mut buf: Vec<Complex<f64>> = (0..h * w).map(|p| Complex::new(data[p * c + ch].as_f64(), 0.0)).collect();
        for row in buf.chunks_exact_mut(w) {
            fft_w.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            fft_h.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        let (mut low, mut total) = (0.0, 0.0);
        let mut shifted = vec![0.0; h * w];
        for ky in 0..h {
            for kx in 0..w {
                let v = buf[ky * w + kx];
                let e = v.norm_sqr();
                total += e;
                let (fy, fx) = (signed(ky, h), signed(kx, w));
                if 4 * fy.unsigned_abs() < h && 4 * fx.unsigned_abs() < w {
                    low += e;
                }
                let (sy, sx) = ((ky + h / 2) % h, (kx + w / 2) % w);
                shifted[sy * w + sx] = v.norm().ln_1p();
            }
        }
        low_ratio.push(if total == 0.0 { 1.0 } else { low / total });
        log_magnitude.push(shifted);
    }
    Ok(FeatureDft {
        height: h,
        width: w,
        log_magnitude,
        low_ratio,
    })
}
