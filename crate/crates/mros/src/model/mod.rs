//! The embedding model: two backbone feature resolutions, horizontal stripe
//! pooling, per-stripe BN + classifier heads, and the concatenated descriptor
//! used at test time.

pub mod backbone;
pub mod head;
pub mod pooling;

use crate::autodiff::{Mode, Tape, TensorId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use backbone::{
    Backbone, BackboneGeometry, FeatureStore, ImportBackbone, ToyBackbone, ToyBackboneConfig,
};
pub use head::{BnParams, Head, HeadInit, StripeHead};

/// The two backbone stages the model taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    R3,
    R4,
}

impl Resolution {
    pub fn tag(&self) -> u8 {
        match self {
            Resolution::R3 => 3,
            Resolution::R4 => 4,
        }
    }
}

/// Feature tensors from the last two backbone stages.
#[derive(Debug, Clone)]
pub struct BackboneOutput {
    /// `[c3, h3, w3]`
    pub t3: Tensor,
    /// `[c4, h4, w4]`
    pub t4: Tensor,
}

/// One training or evaluation input: either a raw image for the built-in
/// backbone, or precomputed feature tensors from the import path.
#[derive(Debug, Clone)]
pub enum Sample {
    /// `[3, h, w]` normalized image.
    Image(Tensor),
    Features(BackboneOutput),
}

/// Incremental model wirings evaluated by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationSetting {
    /// Non-overlapping stripes at the last resolution; all losses on the
    /// local stripe features.
    I,
    /// Overlapping stripe pairs at the last resolution; losses stay local.
    II,
    /// Overlapping stripes with the metric losses moved to the concatenated
    /// global descriptor.
    III,
    /// The complete model: both resolutions feed the descriptor.
    IV,
}

impl AblationSetting {
    pub const ALL: [AblationSetting; 4] = [
        AblationSetting::I,
        AblationSetting::II,
        AblationSetting::III,
        AblationSetting::IV,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "i" | "1" => Ok(AblationSetting::I),
            "II" | "ii" | "2" => Ok(AblationSetting::II),
            "III" | "iii" | "3" => Ok(AblationSetting::III),
            "IV" | "iv" | "4" => Ok(AblationSetting::IV),
            other => Err(Error::Config(format!(
                "unknown setting {other:?}; expected one of I, II, III, IV"
            ))),
        }
    }

    pub fn resolutions(&self) -> &'static [Resolution] {
        match self {
            AblationSetting::IV => &[Resolution::R3, Resolution::R4],
            _ => &[Resolution::R4],
        }
    }

    pub fn overlapping(&self) -> bool {
        !matches!(self, AblationSetting::I)
    }

    /// Whether triplet/center consume the concatenated descriptor instead of
    /// the individual stripe vectors.
    pub fn metric_on_global(&self) -> bool {
        matches!(self, AblationSetting::III | AblationSetting::IV)
    }
}

impl std::fmt::Display for AblationSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AblationSetting::I => "I",
            AblationSetting::II => "II",
            AblationSetting::III => "III",
            AblationSetting::IV => "IV",
        };
        f.write_str(s)
    }
}

/// Identifies one stripe head within the model layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StripeKey {
    pub resolution: Resolution,
    pub index: usize,
}

/// Batch forward results. All matrices are `[m, ·]` with rows in sample order.
pub struct BatchForward {
    /// Concatenated pre-BN descriptor matrix `[m, d]` (the test-time feature).
    pub descriptors: TensorId,
    /// Per stripe: pooled pre-BN features `[m, c]`.
    pub stripe_g: Vec<TensorId>,
    /// Per stripe: batch-normalized features `[m, c]`.
    pub stripe_h: Vec<TensorId>,
    /// Per stripe: classifier outputs `[m, num_classes]`.
    pub stripe_logits: Vec<TensorId>,
}

/// Tape ids of all trainable parameters, aligned with
/// [`Model::named_params`] order.
pub struct BoundParams {
    pub ids: Vec<TensorId>,
}

pub struct Model {
    pub backbone: Backbone,
    pub head: Head,
    pub setting: AblationSetting,
    pub stripes_per_resolution: usize,
    /// Stripe partition count `s`.
    pub s: usize,
}

impl Model {
    /// Assembles a model for the given wiring. The head layout is derived
    /// from the backbone geometry and the setting's resolutions.
    pub fn new(
        backbone: Backbone,
        setting: AblationSetting,
        s: usize,
        num_classes: usize,
        init: HeadInit,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if s < 1 || (setting.overlapping() && s < 2) {
            return Err(Error::Geometry(format!(
                "stripe count s={s} incompatible with setting {setting}"
            )));
        }
        let geom = backbone.geometry();
        for r in setting.resolutions() {
            let h = match r {
                Resolution::R3 => geom.h3,
                Resolution::R4 => geom.h4,
            };
            if h % s != 0 {
                return Err(Error::Geometry(format!(
                    "feature height {h} not divisible by s={s}"
                )));
            }
        }
        let per_res = if setting.overlapping() { s - 1 } else { s };
        let mut layout = Vec::new();
        for &r in setting.resolutions() {
            let channels = match r {
                Resolution::R3 => geom.c3,
                Resolution::R4 => geom.c4,
            };
            for index in 0..per_res {
                layout.push((
                    StripeKey {
                        resolution: r,
                        index,
                    },
                    channels,
                ));
            }
        }
        let head = Head::new(&layout, num_classes, init, rng);
        Ok(Model {
            backbone,
            head,
            setting,
            stripes_per_resolution: per_res,
            s,
        })
    }

    /// Length of the concatenated descriptor.
    pub fn descriptor_len(&self) -> usize {
        self.head.stripes.iter().map(|st| st.channels).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.backbone.named_params();
        v.extend(self.head.named_params());
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.backbone.named_params_mut();
        v.extend(self.head.named_params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Full forward pass over a batch: backbone, stripe pooling, descriptor
    /// assembly, per-stripe BN and classification.
    pub fn forward_batch(
        &mut self,
        tape: &mut Tape,
        samples: &[Sample],
        mode: Mode,
    ) -> Result<(BatchForward, BoundParams)> {
        if samples.is_empty() {
            return Err(Error::Contract("forward_batch on empty batch".into()));
        }
        let backbone_binding = self.backbone.bind(tape);
        let per_sample_rows = self.pooled_rows(tape, samples, &backbone_binding)?;
        let m = samples.len();
        let n_stripes = self.head.stripes.len();

        // descriptor: concat each sample's rows, then stack into [m, d]
        let mut descriptor_rows = Vec::with_capacity(m);
        for rows in &per_sample_rows {
            descriptor_rows.push(tape.concat(rows)?);
        }
        let descriptors = tape.stack_rows(&descriptor_rows)?;

        // per-stripe batch matrices
        let mut stripe_g = Vec::with_capacity(n_stripes);
        for stripe in 0..n_stripes {
            let column: Vec<TensorId> = per_sample_rows.iter().map(|rows| rows[stripe]).collect();
            stripe_g.push(tape.stack_rows(&column)?);
        }

        let mut head_binding = Vec::with_capacity(n_stripes);
        let mut stripe_h = Vec::with_capacity(n_stripes);
        let mut stripe_logits = Vec::with_capacity(n_stripes);
        for (stripe, g) in self.head.stripes.iter_mut().zip(&stripe_g) {
            let bound = stripe.bind(tape);
            let h = tape.batch_norm1d(
                *g,
                bound.gamma,
                bound.beta,
                &mut stripe.bn.stats,
                mode,
                self.head.bn_eps,
                self.head.bn_momentum,
            )?;
            let scores = tape.matmul(h, bound.fc_w)?;
            let logits = tape.add_bias(scores, bound.fc_b)?;
            stripe_h.push(h);
            stripe_logits.push(logits);
            head_binding.push(bound);
        }

        let mut ids = backbone_binding.param_ids();
        for bound in &head_binding {
            ids.extend_from_slice(&[bound.gamma, bound.beta, bound.fc_w, bound.fc_b]);
        }

        Ok((
            BatchForward {
                descriptors,
                stripe_g,
                stripe_h,
                stripe_logits,
            },
            BoundParams { ids },
        ))
    }

    /// Descriptor-only forward used for embedding extraction; skips BN and
    /// the classifiers entirely (the descriptor is built from pre-BN
    /// features).
    pub fn forward_descriptors(&self, tape: &mut Tape, samples: &[Sample]) -> Result<TensorId> {
        if samples.is_empty() {
            return Err(Error::Contract("forward_descriptors on empty batch".into()));
        }
        let binding = self.backbone.bind(tape);
        let per_sample_rows = self.pooled_rows(tape, samples, &binding)?;
        let mut descriptor_rows = Vec::with_capacity(samples.len());
        for rows in &per_sample_rows {
            descriptor_rows.push(tape.concat(rows)?);
        }
        tape.stack_rows(&descriptor_rows)
    }

    /// Pooled stripe vectors per sample, ordered like the head layout
    /// (all resolution-3 rows first, then resolution-4).
    fn pooled_rows(
        &self,
        tape: &mut Tape,
        samples: &[Sample],
        binding: &backbone::BackboneBinding,
    ) -> Result<Vec<Vec<TensorId>>> {
        let mut out = Vec::with_capacity(samples.len());
        for sample in samples {
            let (t3, t4) = self.backbone.forward(tape, binding, sample)?;
            let mut rows = Vec::with_capacity(self.head.stripes.len());
            for &r in self.setting.resolutions() {
                let feat = match r {
                    Resolution::R3 => t3,
                    Resolution::R4 => t4,
                };
                let pooled = if self.setting.overlapping() {
                    pooling::overlap_pool(tape, feat, self.s)?
                } else {
                    pooling::non_overlap_pool(tape, feat, self.s)?
                };
                rows.extend(pooled);
            }
            out.push(rows);
        }
        Ok(out)
    }
}
