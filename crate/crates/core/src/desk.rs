//! Small image sets cut from a few large photographs.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::list_images;
use crate::image::RgbImage;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropConfig {
    /// Side of each square crop in pixels.
    pub size: u32,
    pub count: usize,
    pub seed: u64,
    /// Mirror half of the crops, chosen at random.
    pub flips: bool,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            size: 64,
            count: 1000,
            seed: 0,
            flips: true,
        }
    }
}

/// Loads every image in `dir` except those whose file stem is in `exclude`.
pub fn load_photos(dir: &Path, exclude: &[&str]) -> Result<Vec<(String, RgbImage)>> {
    let mut out = Vec::new();
    for p in list_images(dir)? {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if exclude.contains(&stem.as_str()) {
            continue;
        }
        out.push((stem, RgbImage::load(&p)?));
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

/// Crops at uniformly random positions; the source photo of each crop is
/// drawn with probability proportional to its number of crop positions.
pub fn random_crops(photos: &[RgbImage], cfg: &CropConfig) -> Result<Vec<RgbImage>> {
    let s = cfg.size;
    let weights: Vec<u64> = photos
        .iter()
        .map(|p| {
            if p.width() >= s && p.height() >= s {
                u64::from(p.width() - s + 1) * u64::from(p.height() - s + 1)
            } else {
                0
            }
        })
        .collect();
    let total: u64 = weights.iter().sum();
    if s == 0 || total == 0 {
        return Err(Error::Data(format!("no photo is at least {s}x{s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let mut pick = rng.random_range(0..total);
        let i = weights
            .iter()
            .position(|&w| {
                if pick < w {
                    true
                } else {
                    pick -= w;
                    false
                }
            })
            .expect("pick below total");
        let p = &photos[i];
        let x = rng.random_range(0..=p.width() - s);
        let y = rng.random_range(0..=p.height() - s);
        let crop = p.crop(x, y, s, s)?;
        let flip = cfg.flips && rng.random_bool(0.5);
        out.push(if flip { crop.flip_horizontal() } else { crop });
    }
    Ok(out)
}

/// Every `size`-square crop on a grid of step `stride`, row by row.
pub fn grid_crops(photo: &RgbImage, size: u32, stride: u32) -> Result<Vec<RgbImage>> {
    if size == 0 || stride == 0 {
        return Err(Error::Config("crop size and stride must be positive".into()));
    }
    let mut out = Vec::new();
    let mut y = 0;
    while y + size <= photo.height() {
        let mut x = 0;
        while x + size <= photo.width() {
            out.push(photo.crop(x, y, size, size)?);
            x += stride;
        }
        y += stride;
    }
    Ok(out)
}

/// Writes `images` as `{prefix}{index:05}.png`, returning the paths.
pub fn write_images(dir: &Path, images: &[RgbImage], prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    images
        .iter()
        .enumerate()
        .map(|(i, im)| {
            let p = dir.join(format!("{prefix}{i:05}.png"));
            im.save_png(&p)?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn photo() -> RgbImage {
        RgbImage::from_fn(80, 48, |x, y| [x as u8, y as u8, (x ^ y) as u8])
    }

    #[test]
    fn crops_are_seeded() {
        let cfg = CropConfig {
            size: 16,
            count: 20,
            seed: 4,
            flips: true,
        };
        let a = random_crops(&[photo()], &cfg).unwrap();
        assert_eq!(a, random_crops(&[photo()], &cfg).unwrap());
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|c| c.width() == 16 && c.height() == 16));
        let b = random_crops(&[photo()], &CropConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn too_small_photos_rejected() {
        let cfg = CropConfig {
            size: 64,
            ..CropConfig::default()
        };
        assert!(random_crops(&[photo()], &cfg).is_err());
    }

    #[test]
    fn grid_covers_photo() {
        let g = grid_crops(&photo(), 16, 16).unwrap();
        assert_eq!(g.len(), 5 * 3);
        assert_eq!(g[6], photo().crop(16, 16, 16, 16).unwrap());
    }
}
