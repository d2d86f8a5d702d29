//! Procedural piecewise-smooth grayscale scenes used as a stand-in for a
//! natural-image training corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::GrayImage;

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Disk { cy: f64, cx: f64, r: f64 },
    HalfPlane { ny: f64, nx: f64, off: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::HalfPlane { ny, nx, off } => y * ny + x * nx > off,
        }
    }
}

struct Layer {
    shape: Shape,
    level: f64,
    /// Optional sinusoidal texture `(amplitude, freq_y, freq_x, phase)`.
    texture: Option<(f64, f64, f64, f64)>,
}

/// A `height × width` scene: a shaded background, a few overlapping flat or
/// striped regions, values in `[0, 1]`.
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let base = rng.random_range(0.2..0.8);
    let (gy, gx) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let n_layers = rng.random_range(3..8);
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let shape = match rng.random_range(0..3) {
            0 => {
                let (ya, yb) = (rng.random_range(0.0..h), rng.random_range(0.0..h));
                let (xa, xb) = (rng.random_range(0.0..w), rng.random_range(0.0..w));
                Shape::Rect {
                    y0: ya.min(yb),
                    x0: xa.min(xb),
                    y1: ya.max(yb) + 2.0,
                    x1: xa.max(xb) + 2.0,
                }
            }
            1 => Shape::Disk {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                r: rng.random_range(2.0..h.max(w) / 2.5),
            },
            _ => {
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let (ny, nx) = (a.sin(), a.cos());
                // boundary through a random interior point
                let off = ny * rng.random_range(0.0..h) + nx * rng.random_range(0.0..w);
                Shape::HalfPlane { ny, nx, off }
            }
        };
        let texture = rng.random_bool(0.35).then(|| {
            let f = rng.random_range(0.15..1.2);
            let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
            (rng.random_range(0.05..0.2), f * a.sin(), f * a.cos(), rng.random_range(0.0..6.3))
        });
        layers.push(Layer {
            shape,
            level: rng.random_range(0.0..1.0),
            texture,
        });
    }
    GrayImage::from_fn(height, width, |y, x| {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        let mut v = base + gy * (fy / h - 0.5) + gx * (fx / w - 0.5);
        for l in &layers {
            if l.shape.contains(fy, fx) {
                v = l.level;
                if let Some((amp, ky, kx, ph)) = l.texture {
                    v += amp * (ky * fy + kx * fx + ph).sin();
                }
            }
        }
        v.clamp(0.0, 1.0)
    })
}
