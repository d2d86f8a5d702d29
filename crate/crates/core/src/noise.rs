//! Additive white Gaussian noise on the 0–255 scale.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// `x + n`, `n ~ N(0, (σ/255)²)` i.i.d.; values are not clipped.
pub fn add_awgn(img: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise level {sigma} must be a finite value >= 0")));
    }
    let mut out = img.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let std = sigma / 255.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.pixels_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += std * z;
    }
    Ok(out)
}
