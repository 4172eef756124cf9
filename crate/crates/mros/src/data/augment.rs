//! Train-time augmentation chain: zero padding, random crop back to the
//! original size, horizontal flip, channel normalization, random erasing.

use rand::{Rng, RngExt};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub pad: usize,
    pub flip_prob: f64,
    pub erase_prob: f64,
    /// Erased-area fraction bounds.
    pub erase_area: (f64, f64),
    /// Erased-region aspect-ratio bounds.
    pub erase_aspect: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            pad: 10,
            flip_prob: 0.5,
            erase_prob: 0.5,
            erase_area: (0.02, 0.4),
            erase_aspect: (0.3, 3.33),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseRect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

/// The random choices of one augmentation pass, separated from the transform
/// so tests can pin them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    /// Crop offset into the zero-padded image, each in `[0, 2·pad]`.
    pub crop: (usize, usize),
    pub flip: bool,
    pub erase: Option<EraseRect>,
}

impl AugmentDraw {
    /// Center crop, no flip, no erasing: the augmentation identity path.
    pub fn identity(cfg: &AugmentConfig) -> Self {
        AugmentDraw {
            crop: (cfg.pad, cfg.pad),
            flip: false,
            erase: None,
        }
    }
}

fn check_image(image: &Tensor) -> Result<(usize, usize)> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::Contract(format!(
            "augment expects [3,h,w], got {:?}",
            image.shape()
        )));
    }
    Ok((image.shape()[1], image.shape()[2]))
}

/// Samples the erase rectangle: rejection over target area and aspect ratio
/// until the rounded rectangle fits and its realized area fraction stays
/// within the configured bounds.
fn sample_erase(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Option<EraseRect> {
    let area = (h * w) as f64;
    for _ in 0..100 {
        let target = rng.random_range(cfg.erase_area.0..cfg.erase_area.1) * area;
        let aspect = rng.random_range(cfg.erase_aspect.0..cfg.erase_aspect.1);
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh > h || ew > w {
            continue;
        }
        let frac = (eh * ew) as f64 / area;
        if frac < cfg.erase_area.0 || frac > cfg.erase_area.1 {
            continue;
        }
        let y = rng.random_range(0..=h - eh);
        let x = rng.random_range(0..=w - ew);
        return Some(EraseRect { y, x, h: eh, w: ew });
    }
    None
}

/// Draws the augmentation randomness for one image.
pub fn draw(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> AugmentDraw {
    let crop = (
        rng.random_range(0..=2 * cfg.pad),
        rng.random_range(0..=2 * cfg.pad),
    );
    let flip = rng.random_bool(cfg.flip_prob);
    let erase = if rng.random_bool(cfg.erase_prob) {
        sample_erase(h, w, cfg, rng)
    } else {
        None
    };
    AugmentDraw { crop, flip, erase }
}

/// Applies the full chain with pinned random choices:
/// pad → crop → flip → normalize → erase.
pub fn augment_with(image: &Tensor, cfg: &AugmentConfig, d: &AugmentDraw) -> Result<Tensor> {
    let (h, w) = check_image(image)?;
    let pad = cfg.pad;
    let (oy, ox) = d.crop;
    if oy > 2 * pad || ox > 2 * pad {
        return Err(Error::Contract(format!(
            "crop offset ({oy},{ox}) outside padded range {}",
            2 * pad
        )));
    }
    let mut out = vec![0.0; 3 * h * w];
    for c in 0..3 {
        let (mean, std) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
        for y in 0..h {
            for x in 0..w {
                let dst_x = if d.flip { w - 1 - x } else { x };
                // position in the padded image, then back into the source
                let (py, px) = (y + oy, x + ox);
                let v = if py >= pad && py < pad + h && px >= pad && px < pad + w {
                    image.data()[c * h * w + (py - pad) * w + (px - pad)]
                } else {
                    0.0
                };
                out[c * h * w + y * w + dst_x] = (v - mean) / std;
            }
        }
    }
    if let Some(r) = d.erase {
        if r.y + r.h > h || r.x + r.w > w {
            return Err(Error::Contract(format!("erase rect {r:?} outside image")));
        }
        for c in 0..3 {
            // the fill is the ImageNet channel mean, which is exactly 0 in
            // normalized units
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    out[c * h * w + y * w + x] = 0.0;
                }
            }
        }
    }
    Tensor::new(vec![3, h, w], out)
}

/// Train-time augmentation; falls back to plain normalization when disabled.
pub fn augment(image: &Tensor, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Tensor> {
    if !cfg.enabled {
        return normalize(image);
    }
    let (h, w) = check_image(image)?;
    let d = draw(h, w, cfg, rng);
    augment_with(image, cfg, &d)
}

/// Channel normalization only — the test-time pipeline.
pub fn normalize(image: &Tensor) -> Result<Tensor> {
    let (h, w) = check_image(image)?;
    let mut out = vec![0.0; 3 * h * w];
    for c in 0..3 {
        let (mean, std) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
        for i in 0..h * w {
            out[c * h * w + i] = (image.data()[c * h * w + i] - mean) / std;
        }
    }
    Tensor::new(vec![3, h, w], out)
}
