//! Small synthetic image families for smoke tests and quick experiments.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::structure::Grid;

fn stripes(grid: Grid, horizontal: bool, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let lines = if horizontal { grid.height } else { grid.width };
    let on: Vec<bool> = (0..lines).map(|_| rng.gen()).collect();
    for r in 0..grid.height {
        for c in 0..grid.width {
            let k = if horizontal { r } else { c };
            out.push(on[k] as u8 as f64);
        }
    }
}

/// Bars-and-stripes images: every row (or every column) is uniformly on or
/// off, with the orientation drawn per image.
pub fn bars_and_stripes(grid: Grid, n: usize, seed: u64) -> Result<ImageDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * grid.len());
    for _ in 0..n {
        let horizontal = rng.gen();
        stripes(grid, horizontal, &mut rng, &mut images);
    }
    Ok(ImageDataset::new(images, grid, None)?.with_tag("bars_and_stripes"))
}

/// Two-class orientation task: label 0 for horizontal stripes, 1 for
/// vertical. Constant images are redrawn since their class is ambiguous.
/// Each pixel is then flipped independently with probability `noise`.
pub fn oriented_stripes(grid: Grid, n: usize, noise: f64, seed: u64) -> Result<ImageDataset> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::invalid("noise must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * grid.len());
    let mut labels = Vec::with_capacity(n);
    let mut img = Vec::with_capacity(grid.len());
    for _ in 0..n {
        let label = rng.gen_range(0..2usize);
        loop {
            img.clear();
            stripes(grid, label == 0, &mut rng, &mut img);
            if img.iter().any(|&x| x != img[0]) {
                break;
            }
        }
        for x in &mut img {
            if rng.gen::<f64>() < noise {
                *x = 1.0 - *x;
            }
        }
        images.extend_from_slice(&img);
        labels.push(label);
    }
    Ok(ImageDataset::new(images, grid, Some(labels))?.with_tag("oriented_stripes"))
}

/// Flips `round(fraction * n_v)` distinct pixels of every image (`x -> 1 - x`).
pub fn salt_and_pepper(ds: &ImageDataset, fraction: f64, seed: u64) -> Result<ImageDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("corruption fraction must lie in [0, 1]"));
    }
    let n_v = ds.n_visible();
    let count = (fraction * n_v as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = ds.images().to_vec();
    for img in images.chunks_exact_mut(n_v.max(1)) {
        for i in sample(&mut rng, n_v, count) {
            img[i] = 1.0 - img[i];
        }
    }
    let tag = format!("salt_and_pepper_{fraction}");
    Ok(ImageDataset::new(images, ds.grid(), ds.labels().map(<[usize]>::to_vec))?.with_tag(tag))
}
