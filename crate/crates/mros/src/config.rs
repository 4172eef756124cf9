//! Declarative run configuration: a flat `key = value` text file with
//! defaults for every field, a canonical serialization, and a content-hash
//! fingerprint embedded in every output artifact.

use std::path::{Path, PathBuf};

use crate::data::augment::AugmentConfig;
use crate::data::synthetic::SyntheticSpec;
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::losses::LossWeights;
use crate::model::{AblationSetting, ToyBackboneConfig};
use crate::train::schedule::LrSchedule;

/// FNV-1a 64-bit content hash, used to fingerprint configs and datasets.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Toy,
    Import,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub setting: AblationSetting,
    /// Stripe partition count.
    pub s: usize,
    /// Triplet margin.
    pub alpha: f64,
    /// Center-loss weight.
    pub beta: f64,
    /// Label-smoothing mass.
    pub epsilon: f64,
    pub center_update_rate: f64,

    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub warmup_coefficient: f64,
    pub decay_factor: f64,
    pub decay_period: usize,

    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,

    pub p: usize,
    pub k: usize,
    pub epochs: usize,
    /// Evaluate on query/gallery every this many epochs (0 = final only).
    pub eval_every: usize,

    pub augment: bool,
    pub pad_pixels: usize,
    pub flip_prob: f64,
    pub erase_prob: f64,

    pub metric: Metric,
    pub protocol_filter: bool,

    pub backbone: BackboneKind,
    pub feature_manifest: Option<PathBuf>,
    pub input_height: usize,
    pub input_width: usize,
    pub c1: usize,
    pub c3: usize,
    pub c4: usize,

    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub fc_init_std: f64,

    pub synth_identities: usize,
    pub synth_images_per_identity: usize,
    pub synth_cameras: usize,
    pub synth_noise: f64,

    pub data_root: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            setting: AblationSetting::IV,
            s: 6,
            alpha: 0.3,
            beta: 0.0005,
            epsilon: 0.1,
            center_update_rate: 0.5,
            base_lr: 0.001,
            warmup_epochs: 10,
            warmup_coefficient: 0.01,
            decay_factor: 0.1,
            decay_period: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            p: 32,
            k: 4,
            epochs: 120,
            eval_every: 10,
            augment: true,
            pad_pixels: 10,
            flip_prob: 0.5,
            erase_prob: 0.5,
            metric: Metric::L2,
            protocol_filter: true,
            backbone: BackboneKind::Toy,
            feature_manifest: None,
            input_height: 48,
            input_width: 24,
            c1: 16,
            c3: 32,
            c4: 64,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            fc_init_std: 0.001,
            synth_identities: 20,
            synth_images_per_identity: 12,
            synth_cameras: 3,
            synth_noise: 0.05,
            data_root: None,
        }
    }
}

impl RunConfig {
    /// Desk-scale defaults for the bundled synthetic dataset: P is reduced to
    /// fit 20 identities and the budget is 30 epochs.
    pub fn synthetic_default() -> Self {
        RunConfig {
            p: 8,
            k: 4,
            epochs: 30,
            eval_every: 10,
            ..Default::default()
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_identities: self.synth_identities,
            images_per_identity: self.synth_images_per_identity,
            num_cameras: self.synth_cameras,
            image_height: self.input_height,
            image_width: self.input_width,
            noise_level: self.synth_noise,
            seed: self.seed,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            warmup_epochs: self.warmup_epochs,
            warmup_coefficient: self.warmup_coefficient,
            decay_factor: self.decay_factor,
            decay_period: self.decay_period,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            enabled: self.augment,
            pad: self.pad_pixels,
            flip_prob: self.flip_prob,
            erase_prob: self.erase_prob,
            ..AugmentConfig::default()
        }
    }

    pub fn toy_backbone_config(&self) -> ToyBackboneConfig {
        ToyBackboneConfig {
            input_height: self.input_height,
            input_width: self.input_width,
            c1: self.c1,
            c3: self.c3,
            c4: self.c4,
            stripes: self.s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s < 2 {
            return Err(Error::Config(format!("s = {} must be at least 2", self.s)));
        }
        if self.p < 2 || self.k < 1 {
            return Err(Error::Config(format!(
                "P = {}, K = {} must be >= 2 and >= 1",
                self.p, self.k
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "label smoothing epsilon {} outside [0,1)",
                self.epsilon
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "margin alpha {} negative",
                self.alpha
            )));
        }
        if !(self.center_update_rate > 0.0 && self.center_update_rate <= 1.0) {
            return Err(Error::Config(format!(
                "center update rate {} outside (0,1]",
                self.center_update_rate
            )));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if self.backbone == BackboneKind::Import && self.feature_manifest.is_none() {
            return Err(Error::Config(
                "backbone = import requires feature_manifest".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form: sorted `key = value` lines. Parsing this text
    /// reproduces the config; its hash is the fingerprint.
    pub fn canonical_text(&self) -> String {
        let mut lines: Vec<String> = vec![
            format!("adam_beta1 = {}", self.adam_beta1),
            format!("adam_beta2 = {}", self.adam_beta2),
            format!("adam_eps = {}", self.adam_eps),
            format!("alpha = {}", self.alpha),
            format!("augment = {}", self.augment),
            format!(
                "backbone = {}",
                match self.backbone {
                    BackboneKind::Toy => "toy",
                    BackboneKind::Import => "import",
                }
            ),
            format!("base_lr = {}", self.base_lr),
            format!("beta = {}", self.beta),
            format!("bn_eps = {}", self.bn_eps),
            format!("bn_momentum = {}", self.bn_momentum),
            format!("c1 = {}", self.c1),
            format!("c3 = {}", self.c3),
            format!("c4 = {}", self.c4),
            format!("center_update_rate = {}", self.center_update_rate),
            format!("decay_factor = {}", self.decay_factor),
            format!("decay_period = {}", self.decay_period),
            format!("epochs = {}", self.epochs),
            format!("epsilon = {}", self.epsilon),
            format!("erase_prob = {}", self.erase_prob),
            format!("eval_every = {}", self.eval_every),
            format!("fc_init_std = {}", self.fc_init_std),
            format!("flip_prob = {}", self.flip_prob),
            format!("input_height = {}", self.input_height),
            format!("input_width = {}", self.input_width),
            format!("k = {}", self.k),
            format!("metric = {}", self.metric),
            format!("p = {}", self.p),
            format!("pad_pixels = {}", self.pad_pixels),
            format!("protocol_filter = {}", self.protocol_filter),
            format!("s = {}", self.s),
            format!("seed = {}", self.seed),
            format!("setting = {}", self.setting),
            format!("synth_cameras = {}", self.synth_cameras),
            format!("synth_identities = {}", self.synth_identities),
            format!(
                "synth_images_per_identity = {}",
                self.synth_images_per_identity
            ),
            format!("synth_noise = {}", self.synth_noise),
            format!("warmup_coefficient = {}", self.warmup_coefficient),
            format!("warmup_epochs = {}", self.warmup_epochs),
            format!("weight_decay = {}", self.weight_decay),
        ];
        if let Some(m) = &self.feature_manifest {
            lines.push(format!("feature_manifest = {}", m.display()));
        }
        if let Some(d) = &self.data_root {
            lines.push(format!("data_root = {}", d.display()));
        }
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }

    /// Fingerprint of everything that shapes the training trajectory.
    /// Budget-only fields (`epochs`, `eval_every`) are normalized out so a
    /// checkpoint can be resumed under an extended budget; all other changes
    /// still invalidate it.
    pub fn trajectory_fingerprint(&self) -> u64 {
        let mut normalized = self.clone();
        normalized.epochs = 0;
        normalized.eval_every = 0;
        fnv1a64(normalized.canonical_text().as_bytes())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let parse_err = |what: &str| Error::Config(format!("bad {what} value {v:?} for key {key}"));
        macro_rules! num {
            ($field:expr, $ty:ty, $what:expr) => {
                $field = v.parse::<$ty>().map_err(|_| parse_err($what))?
            };
        }
        match key.trim() {
            "seed" => num!(self.seed, u64, "integer"),
            "setting" => self.setting = AblationSetting::parse(v)?,
            "s" => num!(self.s, usize, "integer"),
            "alpha" => num!(self.alpha, f64, "number"),
            "beta" => num!(self.beta, f64, "number"),
            "epsilon" => num!(self.epsilon, f64, "number"),
            "center_update_rate" => num!(self.center_update_rate, f64, "number"),
            "base_lr" => num!(self.base_lr, f64, "number"),
            "warmup_epochs" => num!(self.warmup_epochs, usize, "integer"),
            "warmup_coefficient" => num!(self.warmup_coefficient, f64, "number"),
            "decay_factor" => num!(self.decay_factor, f64, "number"),
            "decay_period" => num!(self.decay_period, usize, "integer"),
            "adam_beta1" => num!(self.adam_beta1, f64, "number"),
            "adam_beta2" => num!(self.adam_beta2, f64, "number"),
            "adam_eps" => num!(self.adam_eps, f64, "number"),
            "weight_decay" => num!(self.weight_decay, f64, "number"),
            "p" => num!(self.p, usize, "integer"),
            "k" => num!(self.k, usize, "integer"),
            "epochs" => num!(self.epochs, usize, "integer"),
            "eval_every" => num!(self.eval_every, usize, "integer"),
            "augment" => num!(self.augment, bool, "boolean"),
            "pad_pixels" => num!(self.pad_pixels, usize, "integer"),
            "flip_prob" => num!(self.flip_prob, f64, "number"),
            "erase_prob" => num!(self.erase_prob, f64, "number"),
            "metric" => self.metric = Metric::parse(v)?,
            "protocol_filter" => num!(self.protocol_filter, bool, "boolean"),
            "backbone" => {
                self.backbone = match v {
                    "toy" => BackboneKind::Toy,
                    "import" => BackboneKind::Import,
                    _ => return Err(parse_err("backbone")),
                }
            }
            "feature_manifest" => self.feature_manifest = Some(PathBuf::from(v)),
            "input_height" => num!(self.input_height, usize, "integer"),
            "input_width" => num!(self.input_width, usize, "integer"),
            "c1" => num!(self.c1, usize, "integer"),
            "c3" => num!(self.c3, usize, "integer"),
            "c4" => num!(self.c4, usize, "integer"),
            "bn_eps" => num!(self.bn_eps, f64, "number"),
            "bn_momentum" => num!(self.bn_momentum, f64, "number"),
            "fc_init_std" => num!(self.fc_init_std, f64, "number"),
            "synth_identities" => num!(self.synth_identities, usize, "integer"),
            "synth_images_per_identity" => {
                num!(self.synth_images_per_identity, usize, "integer")
            }
            "synth_cameras" => num!(self.synth_cameras, usize, "integer"),
            "synth_noise" => num!(self.synth_noise, f64, "number"),
            "data_root" => self.data_root = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )));
            };
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.canonical_text())?;
        Ok(())
    }
}
