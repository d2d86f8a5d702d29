//! Clean-image corpora and reproducible patch sampling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{load_image, GrayImage};
use crate::noise::add_awgn;
use crate::synthetic::synthetic_scene;
use crate::tensor::Tensor;

/// SplitMix64 finaliser over `(seed, index)`; gives independent streams per
/// iteration without storing an epoch order.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<GrayImage>,
}

impl Dataset {
    pub fn new(images: Vec<GrayImage>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("dataset has no images"));
        }
        Ok(Dataset { images })
    }

    /// Every `.pgm` / `.png` file in `dir`, in file-name order.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png"))
            })
            .collect();
        paths.sort();
        let images = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
        Dataset::new(images)
    }

    /// `count` procedural scenes of the given size.
    pub fn synthetic(count: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        Dataset::new(
            (0..count)
                .map(|i| synthetic_scene(height, width, derive_seed(seed, i as u64)))
                .collect(),
        )
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `batch` square patches drawn uniformly over images and positions.
    pub fn sample_patches(&self, batch: usize, patch: usize, seed: u64) -> Result<Vec<GrayImage>> {
        if let Some(small) = self.images.iter().find(|im| im.height() < patch || im.width() < patch) {
            return Err(Error::invalid(format!(
                "image {}×{} is smaller than the {patch}×{patch} patch",
                small.height(),
                small.width()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..batch)
            .map(|_| {
                let im = &self.images[rng.random_range(0..self.images.len())];
                let y = rng.random_range(0..=im.height() - patch);
                let x = rng.random_range(0..=im.width() - patch);
                im.crop(y, x, patch, patch)
            })
            .collect()
    }
}

/// Stack equally sized images into a `[B, H, W, 1]` map.
pub fn stack<T: crate::Real>(images: &[GrayImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("cannot stack zero images"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        if im.height() != h || im.width() != w {
            return Err(Error::shape("images in a batch must share one size"));
        }
        data.extend(im.pixels().iter().map(|&v| T::from_f64_lossy(v)));
    }
    Tensor::new(&[images.len(), h, w, 1], data)
}

/// Clean and noisy training maps for one iteration: each patch gets its own
/// noise stream derived from `seed`.
pub fn noisy_batch<T: crate::Real>(clean: &[GrayImage], sigma: f64, seed: u64) -> Result<(Tensor<T>, Tensor<T>)> {
    let noisy = clean
        .iter()
        .enumerate()
        .map(|(i, c)| add_awgn(c, sigma, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok((stack(clean)?, stack(&noisy)?))
}
