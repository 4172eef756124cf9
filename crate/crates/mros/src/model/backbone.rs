//! Feature extractors producing the two tapped resolutions: a small trainable
//! convolutional stack for desk-scale runs, and a loader for precomputed
//! feature tensors exported from a stronger network.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::model::{BackboneOutput, Sample};
use crate::tensor::Tensor;

/// Output shapes of the two tapped stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneGeometry {
    pub c3: usize,
    pub h3: usize,
    pub w3: usize,
    pub c4: usize,
    pub h4: usize,
    pub w4: usize,
}

/// Geometry of the built-in convolutional backbone. Three stride-2 valid
/// convolutions halve each spatial dimension, so the tapped heights are
/// `input_height/4` and `input_height/8`; both must divide evenly by `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyBackboneConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub c1: usize,
    pub c3: usize,
    pub c4: usize,
    pub stripes: usize,
}

impl Default for ToyBackboneConfig {
    fn default() -> Self {
        ToyBackboneConfig {
            input_height: 48,
            input_width: 24,
            c1: 16,
            c3: 32,
            c4: 64,
            stripes: 6,
        }
    }
}

const KERNEL: usize = 2;
const STRIDE: usize = 2;

fn conv_out(extent: usize) -> Result<usize> {
    if extent < KERNEL {
        return Err(Error::Geometry(format!(
            "spatial extent {extent} smaller than kernel {KERNEL}"
        )));
    }
    Ok((extent - KERNEL) / STRIDE + 1)
}

/// Trainable three-layer conv backbone; each layer is a stride-2 valid
/// convolution with per-channel bias and ReLU. The taps after layers two and
/// three mirror the deeper network's channel-doubling, height-halving shape.
#[derive(Debug, Clone)]
pub struct ToyBackbone {
    pub cfg: ToyBackboneConfig,
    geometry: BackboneGeometry,
    pub k1: Tensor,
    pub b1: Tensor,
    pub k2: Tensor,
    pub b2: Tensor,
    pub k3: Tensor,
    pub b3: Tensor,
}

impl ToyBackbone {
    pub fn new(cfg: ToyBackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        let h1 = conv_out(cfg.input_height)?;
        let w1 = conv_out(cfg.input_width)?;
        let h3 = conv_out(h1)?;
        let w3 = conv_out(w1)?;
        let h4 = conv_out(h3)?;
        let w4 = conv_out(w3)?;
        for (name, h) in [("t3", h3), ("t4", h4)] {
            if h % cfg.stripes != 0 {
                return Err(Error::Geometry(format!(
                    "{name} height {h} not divisible by s={} (input height {})",
                    cfg.stripes, cfg.input_height
                )));
            }
        }
        let geometry = BackboneGeometry {
            c3: cfg.c3,
            h3,
            w3,
            c4: cfg.c4,
            h4,
            w4,
        };
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let kshape = |co: usize, ci: usize| vec![co, ci, KERNEL, KERNEL];
        Ok(ToyBackbone {
            k1: Tensor::randn(kshape(cfg.c1, 3), he(3 * KERNEL * KERNEL), rng).with_grad(),
            b1: Tensor::zeros(vec![cfg.c1]).with_grad(),
            k2: Tensor::randn(kshape(cfg.c3, cfg.c1), he(cfg.c1 * KERNEL * KERNEL), rng)
                .with_grad(),
            b2: Tensor::zeros(vec![cfg.c3]).with_grad(),
            k3: Tensor::randn(kshape(cfg.c4, cfg.c3), he(cfg.c3 * KERNEL * KERNEL), rng)
                .with_grad(),
            b3: Tensor::zeros(vec![cfg.c4]).with_grad(),
            cfg,
            geometry,
        })
    }
}

/// Pass-through for feature tensors computed elsewhere; carries no
/// parameters, only the geometry every imported pair must match.
#[derive(Debug, Clone)]
pub struct ImportBackbone {
    pub geometry: BackboneGeometry,
}

#[derive(Debug, Clone)]
pub enum Backbone {
    Toy(ToyBackbone),
    Import(ImportBackbone),
}

/// Tape ids of the backbone parameters for one forward pass.
pub struct BackboneBinding {
    ids: Vec<TensorId>,
}

impl BackboneBinding {
    pub fn param_ids(&self) -> Vec<TensorId> {
        self.ids.clone()
    }
}

impl Backbone {
    pub fn geometry(&self) -> BackboneGeometry {
        match self {
            Backbone::Toy(b) => b.geometry,
            Backbone::Import(b) => b.geometry,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Backbone::Toy(b) => vec![
                ("backbone.k1".into(), &b.k1),
                ("backbone.b1".into(), &b.b1),
                ("backbone.k2".into(), &b.k2),
                ("backbone.b2".into(), &b.b2),
                ("backbone.k3".into(), &b.k3),
                ("backbone.b3".into(), &b.b3),
            ],
            Backbone::Import(_) => Vec::new(),
        }
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Backbone::Toy(b) => vec![
                ("backbone.k1".into(), &mut b.k1),
                ("backbone.b1".into(), &mut b.b1),
                ("backbone.k2".into(), &mut b.k2),
                ("backbone.b2".into(), &mut b.b2),
                ("backbone.k3".into(), &mut b.k3),
                ("backbone.b3".into(), &mut b.b3),
            ],
            Backbone::Import(_) => Vec::new(),
        }
    }

    /// Registers the parameters on the tape once per batch so gradient
    /// contributions from every sample accumulate into the same leaves.
    pub fn bind(&self, tape: &mut Tape) -> BackboneBinding {
        let ids = match self {
            Backbone::Toy(b) => vec![
                tape.leaf(b.k1.clone()),
                tape.leaf(b.b1.clone()),
                tape.leaf(b.k2.clone()),
                tape.leaf(b.b2.clone()),
                tape.leaf(b.k3.clone()),
                tape.leaf(b.b3.clone()),
            ],
            Backbone::Import(_) => Vec::new(),
        };
        BackboneBinding { ids }
    }

    /// Produces the two tapped feature tensors for one sample.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &BackboneBinding,
        sample: &Sample,
    ) -> Result<(TensorId, TensorId)> {
        match (self, sample) {
            (Backbone::Toy(b), Sample::Image(image)) => {
                if image.shape() != [3, b.cfg.input_height, b.cfg.input_width] {
                    return Err(Error::ShapeMismatch {
                        op: "toy backbone input",
                        left: image.shape().to_vec(),
                        right: vec![3, b.cfg.input_height, b.cfg.input_width],
                    });
                }
                let x = tape.leaf(image.clone());
                let [k1, b1, k2, b2, k3, b3] = binding.ids[..] else {
                    return Err(Error::Contract("backbone binding mismatch".into()));
                };
                let c1 = tape.conv2d(x, k1, STRIDE)?;
                let c1 = tape.add_channel_bias(c1, b1)?;
                let c1 = tape.relu(c1);
                let c2 = tape.conv2d(c1, k2, STRIDE)?;
                let c2 = tape.add_channel_bias(c2, b2)?;
                let t3 = tape.relu(c2);
                let c3 = tape.conv2d(t3, k3, STRIDE)?;
                let c3 = tape.add_channel_bias(c3, b3)?;
                let t4 = tape.relu(c3);
                Ok((t3, t4))
            }
            (Backbone::Import(b), Sample::Features(out)) => {
                let g = b.geometry;
                if out.t3.shape() != [g.c3, g.h3, g.w3] || out.t4.shape() != [g.c4, g.h4, g.w4] {
                    return Err(Error::ShapeMismatch {
                        op: "imported features",
                        left: out.t3.shape().to_vec(),
                        right: vec![g.c3, g.h3, g.w3],
                    });
                }
                Ok((tape.leaf(out.t3.clone()), tape.leaf(out.t4.clone())))
            }
            (Backbone::Toy(_), Sample::Features(_)) => Err(Error::Contract(
                "toy backbone expects images, got imported features".into(),
            )),
            (Backbone::Import(_), Sample::Image(_)) => Err(Error::Contract(
                "import backbone expects precomputed features, got an image".into(),
            )),
        }
    }
}

/// Maps image ids to serialized `(t3, t4)` tensor files via a manifest of
/// `id,t3_path,t4_path` lines. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    entries: BTreeMap<String, (PathBuf, PathBuf)>,
}

impl FeatureStore {
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let (id, t3, t4) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        reason: format!("manifest line {} needs id,t3,t4", lineno + 1),
                    })
                }
            };
            let resolve = |p: &str| {
                let pb = PathBuf::from(p);
                if pb.is_absolute() {
                    pb
                } else {
                    base.join(pb)
                }
            };
            entries.insert(
                id.trim().to_string(),
                (resolve(t3.trim()), resolve(t4.trim())),
            );
        }
        if entries.is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "empty feature manifest".into(),
            });
        }
        Ok(FeatureStore { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn load(&self, id: &str) -> Result<BackboneOutput> {
        let (t3_path, t4_path) = self
            .entries
            .get(id)
            .ok_or_else(|| Error::Contract(format!("no feature entry for image id {id:?}")))?;
        Ok(BackboneOutput {
            t3: Tensor::load(t3_path)?,
            t4: Tensor::load(t4_path)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_geometry_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ToyBackbone::new(ToyBackboneConfig::default(), &mut rng).unwrap();
        let g = b.geometry;
        assert_eq!((g.c3, g.h3, g.w3), (32, 12, 6));
        assert_eq!((g.c4, g.h4, g.w4), (64, 6, 3));
        assert_eq!(g.h3 % 6, 0);
        assert_eq!(g.h4 % 6, 0);
        // t3 has twice the spatial height and half the channels of t4
        assert_eq!(g.h3, 2 * g.h4);
        assert_eq!(2 * g.c3, g.c4);
    }

    #[test]
    fn indivisible_tap_height_rejected_at_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ToyBackboneConfig {
            input_height: 40, // taps at 10 and 5; 5 % 6 != 0
            ..Default::default()
        };
        assert!(matches!(
            ToyBackbone::new(cfg, &mut rng),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn zero_input_with_zero_biases_gives_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let toy = ToyBackbone::new(ToyBackboneConfig::default(), &mut rng).unwrap();
        let backbone = Backbone::Toy(toy);
        let mut tape = Tape::new();
        let binding = backbone.bind(&mut tape);
        let image = Sample::Image(Tensor::zeros(vec![3, 48, 24]));
        let (t3, t4) = backbone.forward(&mut tape, &binding, &image).unwrap();
        assert!(tape.value(t3).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(t4).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_parameter_receives_gradient() {
        // statistical check across seeds: each parameter sees a nonzero
        // gradient from a scalar loss on the pooled descriptor
        let mut seen = vec![false; 6];
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let toy = ToyBackbone::new(ToyBackboneConfig::default(), &mut rng).unwrap();
            let backbone = Backbone::Toy(toy);
            let mut tape = Tape::new();
            let binding = backbone.bind(&mut tape);
            let data: Vec<f64> = (0..3 * 48 * 24)
                .map(|_| crate::tensor::gaussian(&mut rng))
                .collect();
            let image = Sample::Image(Tensor::new(vec![3, 48, 24], data).unwrap());
            let (t3, t4) = backbone.forward(&mut tape, &binding, &image).unwrap();
            let p3 = crate::model::pooling::overlap_pool(&mut tape, t3, 6).unwrap();
            let p4 = crate::model::pooling::overlap_pool(&mut tape, t4, 6).unwrap();
            let all: Vec<TensorId> = p3.into_iter().chain(p4).collect();
            let g = tape.concat(&all).unwrap();
            let loss = tape.sum(g);
            tape.backward(loss).unwrap();
            for (i, id) in binding.param_ids().iter().enumerate() {
                if tape.grad(*id).is_some_and(|g| g.iter().any(|&v| v != 0.0)) {
                    seen[i] = true;
                }
            }
        }
        assert!(seen.iter().all(|&b| b), "dead parameters: {seen:?}");
    }

    #[test]
    fn feature_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t3 = Tensor::full(vec![2, 6, 3], 1.5);
        let t4 = Tensor::full(vec![4, 6, 3], -0.5);
        t3.save(&dir.path().join("img0_t3.bin")).unwrap();
        t4.save(&dir.path().join("img0_t4.bin")).unwrap();
        let manifest = dir.path().join("features.csv");
        std::fs::write(&manifest, "img0,img0_t3.bin,img0_t4.bin\n").unwrap();
        let store = FeatureStore::load_manifest(&manifest).unwrap();
        assert_eq!(store.len(), 1);
        let out = store.load("img0").unwrap();
        assert_eq!(out.t3, t3);
        assert_eq!(out.t4, t4);
        assert!(store.load("missing").is_err());
    }
}
