//! Dataset ingestion: the Market-1501 directory convention, identity
//! relabeling, and image decoding. Synthetic data, sampling and augmentation
//! live in the submodules.

pub mod augment;
pub mod sampler;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identity used for junk/distractor images.
pub const JUNK_IDENTITY: i32 = -1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    /// `-1` marks junk/distractor entries.
    pub identity: i32,
    pub camera: u32,
    pub sequence: u32,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<ImageRecord>,
    pub gallery: Vec<ImageRecord>,
    pub query: Vec<ImageRecord>,
}

impl DatasetSplit {
    /// Checks that every query identity also appears in the gallery.
    pub fn validate(&self) -> Result<()> {
        let gallery_ids: std::collections::BTreeSet<i32> =
            self.gallery.iter().map(|r| r.identity).collect();
        for q in &self.query {
            if !gallery_ids.contains(&q.identity) {
                return Err(Error::Config(format!(
                    "query identity {} missing from gallery",
                    q.identity
                )));
            }
        }
        Ok(())
    }
}

/// Fields carried by a dataset filename.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedName {
    pub identity: i32,
    pub camera: u32,
    pub sequence: u32,
}

fn all_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

fn parse_stem(stem: &str) -> Option<ParsedName> {
    let mut parts = stem.split('_');
    let (id_part, cs_part, frame, index) =
        (parts.next()?, parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let digits = id_part.strip_prefix('-').unwrap_or(id_part);
    if !all_digits(digits) || !all_digits(frame) || !all_digits(index) {
        return None;
    }
    let identity: i32 = id_part.parse().ok()?;
    let rest = cs_part.strip_prefix('c')?;
    let s_pos = rest.find('s')?;
    let (cam_str, seq_str) = (&rest[..s_pos], &rest[s_pos + 1..]);
    if !all_digits(cam_str) || !all_digits(seq_str) {
        return None;
    }
    Some(ParsedName {
        identity,
        camera: cam_str.parse().ok()?,
        sequence: seq_str.parse().ok()?,
    })
}

/// Parses a Market-1501 filename such as `0002_c1s1_000451_03.jpg`
/// (pattern `^(-?\d+)_c(\d+)s(\d+)_\d+_\d+\.jpe?g$`).
pub fn parse_market_filename(name: &str) -> Result<ParsedName> {
    let stem = name
        .strip_suffix(".jpg")
        .or_else(|| name.strip_suffix(".jpeg"))
        .ok_or_else(|| Error::Parse(name.to_string()))?;
    parse_stem(stem).ok_or_else(|| Error::Parse(name.to_string()))
}

/// Builds a filename in the dataset convention; `parse_market_filename`
/// recovers the identity/camera/sequence fields exactly (for `.jpg`/`.jpeg`).
pub fn format_market_filename(parsed: &ParsedName, frame: u32, index: u32, ext: &str) -> String {
    format!(
        "{:04}_c{}s{}_{:06}_{:02}.{ext}",
        parsed.identity, parsed.camera, parsed.sequence, frame, index
    )
}

/// Accepts the same stem convention with any of the supported image extensions;
/// `.png` is used by the synthetic renderer.
fn parse_any_image_name(name: &str) -> Option<ParsedName> {
    let stem = name
        .strip_suffix(".jpg")
        .or_else(|| name.strip_suffix(".jpeg"))
        .or_else(|| name.strip_suffix(".png"))?;
    parse_stem(stem)
}

fn scan_dir(dir: &Path) -> Result<Vec<ImageRecord>> {
    let mut by_name: BTreeMap<String, ImageRecord> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(parsed) = parse_any_image_name(name) {
            by_name.insert(
                name.to_string(),
                ImageRecord {
                    identity: parsed.identity,
                    camera: parsed.camera,
                    sequence: parsed.sequence,
                    path,
                },
            );
        }
    }
    Ok(by_name.into_values().collect())
}

/// Loads the Market-1501 layout (`bounding_box_train/`, `bounding_box_test/`,
/// `query/`). Junk identities are dropped from the training list and kept in
/// the gallery for the evaluation protocol to exclude.
pub fn load_market(root: &Path) -> Result<DatasetSplit> {
    let dirs = [
        root.join("bounding_box_train"),
        root.join("bounding_box_test"),
        root.join("query"),
    ];
    for d in &dirs {
        if !d.is_dir() {
            return Err(Error::Layout(d.clone()));
        }
    }
    let mut train = scan_dir(&dirs[0])?;
    let gallery = scan_dir(&dirs[1])?;
    let query = scan_dir(&dirs[2])?;
    if train.is_empty() && gallery.is_empty() && query.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    train.retain(|r| r.identity != JUNK_IDENTITY);
    if train.is_empty() {
        return Err(Error::EmptyDataset(dirs[0].clone()));
    }
    let split = DatasetSplit {
        train,
        gallery,
        query,
    };
    split.validate()?;
    Ok(split)
}

/// Dense relabeling of training identities to `[0, num_classes)`, persisted
/// as a two-column text file `original_id dense_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityMap {
    forward: BTreeMap<i32, usize>,
}

impl IdentityMap {
    pub fn from_train(train: &[ImageRecord]) -> Self {
        let ids: std::collections::BTreeSet<i32> = train.iter().map(|r| r.identity).collect();
        let forward = ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        IdentityMap { forward }
    }

    pub fn num_classes(&self) -> usize {
        self.forward.len()
    }

    pub fn dense(&self, identity: i32) -> Result<usize> {
        self.forward
            .get(&identity)
            .copied()
            .ok_or_else(|| Error::Contract(format!("identity {identity} not in the training map")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (orig, dense) in &self.forward {
            out.push_str(&format!("{orig} {dense}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut forward = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let (Some(orig), Some(dense)) = (it.next(), it.next()) else {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("bad identity-map line {line:?}"),
                });
            };
            let orig: i32 = orig.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                reason: format!("bad identity {orig:?}"),
            })?;
            let dense: usize = dense.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                reason: format!("bad index {dense:?}"),
            })?;
            forward.insert(orig, dense);
        }
        Ok(IdentityMap { forward })
    }
}

/// Decodes an image file into a `[3,h,w]` tensor with values in `[0,1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, pixel) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = pixel.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Quantizes a `[3,h,w]` tensor in `[0,1]` to an 8-bit RGB image.
pub fn tensor_to_rgb8(t: &Tensor) -> Result<image::RgbImage> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(Error::Contract(format!(
            "expected [3,h,w] image tensor, got {:?}",
            t.shape()
        )));
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px =
                |c: usize| (t.data()[c * h * w + y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
        }
    }
    Ok(img)
}
