//! Deterministic synthetic identity dataset for desk-scale experiments.
//!
//! Each identity gets a fixed banded color pattern; each camera applies a
//! mild tint; Gaussian pixel noise is added on top. The rendered images are
//! written as PNG files in the Market-style directory layout so the regular
//! loader picks them up.

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{format_market_filename, tensor_to_rgb8, DatasetSplit, ImageRecord, ParsedName};
use crate::error::{Error, Result};
use crate::tensor::{gaussian, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    pub images_per_identity: usize,
    pub num_cameras: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_identities: 20,
            images_per_identity: 12,
            num_cameras: 3,
            image_height: 48,
            image_width: 24,
            noise_level: 0.05,
            seed: 17,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::Config(format!(
                "need at least 2 identities, got {}",
                self.num_identities
            )));
        }
        // half the images train; the rest must cover one query and one
        // gallery entry per identity
        if self.images_per_identity < 3 {
            return Err(Error::Config(format!(
                "need at least 3 images per identity to split train/query/gallery, got {}",
                self.images_per_identity
            )));
        }
        if self.num_cameras == 0 {
            return Err(Error::Config("need at least one camera".into()));
        }
        if self.image_height < 8 || self.image_width < 8 {
            return Err(Error::Config(format!(
                "image size {}x{} too small",
                self.image_height, self.image_width
            )));
        }
        if self.noise_level.is_nan() || self.noise_level < 0.0 {
            return Err(Error::Config(format!(
                "noise level {} must be non-negative",
                self.noise_level
            )));
        }
        Ok(())
    }
}

const BANDS: usize = 4;

fn sub_seed(seed: u64, salt: u64, index: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Deterministic banded color pattern for one identity: `[3,h,w]` in [0,1].
fn identity_pattern(spec: &SyntheticSpec, identity: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 1, identity as u64));
    let (h, w) = (spec.image_height, spec.image_width);
    let mut band_colors = [[0.0; 3]; BANDS];
    for band in band_colors.iter_mut() {
        for ch in band.iter_mut() {
            *ch = rng.random_range(0.08..0.92);
        }
    }
    // one off-center vertical stripe so patterns carry horizontal structure
    let stripe_x = rng.random_range(0..w.max(1));
    let stripe_w = (w / 6).max(1);
    let stripe_color: [f64; 3] = [
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
    ];
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        let band = (y * BANDS / h).min(BANDS - 1);
        for x in 0..w {
            let in_stripe = x >= stripe_x && x < stripe_x + stripe_w;
            for c in 0..3 {
                let v = if in_stripe {
                    0.5 * band_colors[band][c] + 0.5 * stripe_color[c]
                } else {
                    band_colors[band][c]
                };
                data[c * h * w + y * w + x] = v;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("pattern shape")
}

/// Deterministic per-camera tint (multiplier and offset per channel).
fn camera_tint(spec: &SyntheticSpec, camera: u32) -> ([f64; 3], [f64; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 2, camera as u64));
    let mut mul = [0.0; 3];
    let mut add = [0.0; 3];
    for c in 0..3 {
        mul[c] = rng.random_range(0.92..1.08);
        add[c] = rng.random_range(-0.03..0.03);
    }
    (mul, add)
}

fn render(
    pattern: &Tensor,
    tint: ([f64; 3], [f64; 3]),
    noise_level: f64,
    noise_rng: &mut ChaCha8Rng,
) -> Tensor {
    let (h, w) = (pattern.shape()[1], pattern.shape()[2]);
    let mut data = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for i in 0..h * w {
            let mut v = pattern.data()[c * h * w + i] * tint.0[c] + tint.1[c];
            if noise_level > 0.0 {
                v += noise_level * gaussian(noise_rng);
            }
            data[c * h * w + i] = v.clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![3, h, w], data).expect("render shape")
}

/// Renders the dataset under `out` in the Market directory layout and
/// returns the split. Fully deterministic under `spec.seed`.
///
/// Split rule per identity: the first half of the images goes to train; of
/// the remainder, the first image seen per camera becomes a query and the
/// rest gallery. If that would leave an identity without any gallery image,
/// its last query is demoted to the gallery.
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<DatasetSplit> {
    spec.validate()?;
    let dirs = [
        out.join("bounding_box_train"),
        out.join("bounding_box_test"),
        out.join("query"),
    ];
    for d in &dirs {
        std::fs::create_dir_all(d)?;
    }

    let tints: Vec<([f64; 3], [f64; 3])> = (1..=spec.num_cameras as u32)
        .map(|cam| camera_tint(spec, cam))
        .collect();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 3, 0));

    let mut split = DatasetSplit::default();
    let n = spec.images_per_identity;
    let train_count = n / 2;

    for identity in 0..spec.num_identities {
        let pattern = identity_pattern(spec, identity);
        let file_id = identity as i32 + 1;

        #[derive(PartialEq, Clone, Copy)]
        enum Dest {
            Train,
            Query,
            Gallery,
        }
        let mut dests = Vec::with_capacity(n);
        let mut cameras_seen = std::collections::BTreeSet::new();
        let mut gallery_count = 0usize;
        let mut last_query: Option<usize> = None;
        for k in 0..n {
            let camera = (k % spec.num_cameras) as u32 + 1;
            let dest = if k < train_count {
                Dest::Train
            } else if cameras_seen.insert(camera) {
                last_query = Some(k);
                Dest::Query
            } else {
                gallery_count += 1;
                Dest::Gallery
            };
            dests.push(dest);
        }
        if gallery_count == 0 {
            let k = last_query.expect("at least one post-train image");
            dests[k] = Dest::Gallery;
        }

        for (k, dest) in dests.iter().enumerate() {
            let camera = (k % spec.num_cameras) as u32 + 1;
            let tensor = render(
                &pattern,
                tints[(camera - 1) as usize],
                spec.noise_level,
                &mut noise_rng,
            );
            let parsed = ParsedName {
                identity: file_id,
                camera,
                sequence: 1,
            };
            let name = format_market_filename(&parsed, k as u32, 0, "png");
            let dir = match dest {
                Dest::Train => &dirs[0],
                Dest::Gallery => &dirs[1],
                Dest::Query => &dirs[2],
            };
            let path = dir.join(&name);
            tensor_to_rgb8(&tensor)?.save(&path)?;
            let record = ImageRecord {
                identity: file_id,
                camera,
                sequence: 1,
                path,
            };
            match dest {
                Dest::Train => split.train.push(record),
                Dest::Gallery => split.gallery.push(record),
                Dest::Query => split.query.push(record),
            }
        }
    }
    split.validate()?;
    Ok(split)
}
