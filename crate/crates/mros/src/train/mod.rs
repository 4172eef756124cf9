//! Optimization loop: loss composition over a P×K batch, Adam updates, the
//! dedicated center-update rule, periodic evaluation, metrics logging and
//! bit-exact checkpoint/resume.

pub mod adam;
pub mod checkpoint;
pub mod schedule;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mode, RunningStats, Tape};
use crate::config::{BackboneKind, RunConfig};
use crate::data::augment::{augment, normalize};
use crate::data::sampler::PkSampler;
use crate::data::{load_image, load_market, IdentityMap, ImageRecord};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EmbeddingSet, EvalReport};
use crate::losses::{
    check_pk_labels, total_cross_entropy, update_centers, ClassCenters, LossWeights,
};
use crate::model::{Backbone, FeatureStore, HeadInit, ImportBackbone, Model, Sample, ToyBackbone};
use crate::tensor::Tensor;

use adam::{AdamHyper, OptimizerState};
use checkpoint::Checkpoint;
use schedule::lr_at_epoch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub triplet: f64,
    pub center: f64,
    pub cross: f64,
    pub total: f64,
}

/// One optimization step over a P×K batch: forward, the three losses,
/// backward, Adam on every model parameter, then the center update.
pub fn train_step(
    model: &mut Model,
    centers: &mut ClassCenters,
    opt: &mut OptimizerState,
    weights: &LossWeights,
    samples: &[Sample],
    labels: &[usize],
    lr: f64,
) -> Result<LossParts> {
    check_pk_labels(labels)?;
    let metric_on_global = model.setting.metric_on_global();
    let mut tape = Tape::new();
    let (fwd, bound) = model.forward_batch(&mut tape, samples, Mode::Train)?;

    let triplet = if metric_on_global {
        tape.triplet_batch_hard(fwd.descriptors, labels, weights.alpha)?
    } else {
        // metric losses stay on the local stripe features: mean of the
        // per-stripe batch-hard losses
        let per_stripe: Vec<_> = fwd
            .stripe_g
            .iter()
            .map(|&g| tape.triplet_batch_hard(g, labels, weights.alpha))
            .collect::<Result<_>>()?;
        let mut acc = per_stripe[0];
        for &t in &per_stripe[1..] {
            acc = tape.add(acc, t)?;
        }
        tape.scale(acc, 1.0 / per_stripe.len() as f64)
    };
    // the concatenated descriptor decomposes into the per-stripe vectors, so
    // center loss on it equals the summed local center losses
    let center = tape.center_loss(fwd.descriptors, labels, centers)?;
    let stripe_ce: Vec<_> = fwd
        .stripe_logits
        .iter()
        .map(|&l| tape.cross_entropy_ls(l, labels, weights.epsilon))
        .collect::<Result<_>>()?;
    let cross = total_cross_entropy(&mut tape, &stripe_ce)?;
    let total = tape.total_loss(triplet, center, cross, weights)?;

    let parts = LossParts {
        triplet: tape.value(triplet).item()?,
        center: tape.value(center).item()?,
        cross: tape.value(cross).item()?,
        total: tape.value(total).item()?,
    };

    tape.backward(total)?;

    opt.begin_step();
    let named = model.named_params_mut();
    debug_assert_eq!(named.len(), bound.ids.len());
    for (idx, ((name, param), id)) in named.into_iter().zip(&bound.ids).enumerate() {
        match tape.grad(*id) {
            Some(grad) => opt.update(idx, &name, param.data_mut(), grad, lr)?,
            None => {
                return Err(Error::Contract(format!(
                    "parameter {name} received no gradient"
                )))
            }
        }
    }

    update_centers(tape.value(fwd.descriptors), labels, centers)?;
    Ok(parts)
}

/// Descriptor extraction for a list of records, batched and in eval mode.
/// `store` supplies precomputed features for the import backbone.
pub fn compute_embeddings(
    model: &Model,
    records: &[ImageRecord],
    store: Option<&FeatureStore>,
) -> Result<EmbeddingSet> {
    if records.is_empty() {
        return Err(Error::Contract("no records to embed".into()));
    }
    let d = model.descriptor_len();
    let mut data = Vec::with_capacity(records.len() * d);
    for chunk in records.chunks(64) {
        let mut samples = Vec::with_capacity(chunk.len());
        for r in chunk {
            samples.push(sample_for_record(model, r, store)?);
        }
        let mut tape = Tape::new();
        let descriptors = model.forward_descriptors(&mut tape, &samples)?;
        data.extend_from_slice(tape.value(descriptors).data());
    }
    EmbeddingSet::new(
        Tensor::new(vec![records.len(), d], data)?,
        records.iter().map(|r| r.identity).collect(),
        records.iter().map(|r| r.camera).collect(),
        records
            .iter()
            .map(|r| r.path.display().to_string())
            .collect(),
    )
}

fn record_stem(record: &ImageRecord) -> Result<String> {
    record
        .path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.to_string())
        .ok_or_else(|| Error::Contract(format!("record path {:?} has no stem", record.path)))
}

fn sample_for_record(
    model: &Model,
    record: &ImageRecord,
    store: Option<&FeatureStore>,
) -> Result<Sample> {
    match (&model.backbone, store) {
        (Backbone::Toy(_), _) => {
            let image = load_image(&record.path)?;
            Ok(Sample::Image(normalize(&image)?))
        }
        (Backbone::Import(_), Some(store)) => {
            Ok(Sample::Features(store.load(&record_stem(record)?)?))
        }
        (Backbone::Import(_), None) => Err(Error::Config(
            "import backbone needs a feature manifest".into(),
        )),
    }
}

/// Builds the model from the config; the import backbone reads its geometry
/// from the first manifest entry.
pub fn build_model(
    cfg: &RunConfig,
    num_classes: usize,
    store: Option<&FeatureStore>,
) -> Result<Model> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let backbone = match cfg.backbone {
        BackboneKind::Toy => {
            Backbone::Toy(ToyBackbone::new(cfg.toy_backbone_config(), &mut init_rng)?)
        }
        BackboneKind::Import => {
            let store = store.ok_or_else(|| {
                Error::Config("backbone = import requires a feature manifest".into())
            })?;
            let first = store
                .ids()
                .next()
                .ok_or_else(|| Error::Config("feature manifest is empty".into()))?
                .clone();
            let probe = store.load(&first)?;
            let (s3, s4) = (probe.t3.shape(), probe.t4.shape());
            if s3.len() != 3 || s4.len() != 3 {
                return Err(Error::Config("imported features must be [c,h,w]".into()));
            }
            Backbone::Import(ImportBackbone {
                geometry: crate::model::BackboneGeometry {
                    c3: s3[0],
                    h3: s3[1],
                    w3: s3[2],
                    c4: s4[0],
                    h4: s4[1],
                    w4: s4[2],
                },
            })
        }
    };
    let init = HeadInit {
        fc_std: cfg.fc_init_std,
        bn_eps: cfg.bn_eps,
        bn_momentum: cfg.bn_momentum,
    };
    Model::new(
        backbone,
        cfg.setting,
        cfg.s,
        num_classes,
        init,
        &mut init_rng,
    )
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub parts: LossParts,
    pub map: Option<f64>,
    pub rank1: Option<f64>,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub epoch_log: Vec<EpochLog>,
    pub final_report: Option<EvalReport>,
    pub num_classes: usize,
}

fn stats_to_tensors(name: &str, stats: &RunningStats) -> [(String, Tensor); 2] {
    [
        (
            format!("{name}.mean"),
            Tensor::new(vec![stats.mean.len()], stats.mean.clone()).expect("stats shape"),
        ),
        (
            format!("{name}.var"),
            Tensor::new(vec![stats.var.len()], stats.var.clone()).expect("stats shape"),
        ),
    ]
}

/// Snapshot of the full training state.
pub fn make_checkpoint(
    model: &mut Model,
    centers: &ClassCenters,
    opt: &OptimizerState,
    epoch: usize,
    rng: &ChaCha8Rng,
    fingerprint: u64,
) -> Checkpoint {
    let mut ck = Checkpoint {
        fingerprint,
        epoch: epoch as u64,
        adam_step: opt.step,
        rng_seed: rng.get_seed(),
        rng_word_pos: rng.get_word_pos(),
        tensors: BTreeMap::new(),
    };
    let names: Vec<String> = model
        .named_params()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    for (name, t) in model.named_params() {
        let mut plain = t.clone();
        plain.grad = None;
        ck.insert(name, plain);
    }
    for (i, name) in names.iter().enumerate() {
        ck.insert(
            format!("adam.m.{name}"),
            Tensor::new(vec![opt.m[i].len()], opt.m[i].clone()).expect("moment shape"),
        );
        ck.insert(
            format!("adam.v.{name}"),
            Tensor::new(vec![opt.v[i].len()], opt.v[i].clone()).expect("moment shape"),
        );
    }
    for (name, stats) in model.head.named_stats_mut() {
        for (n, t) in stats_to_tensors(&name, stats) {
            ck.insert(n, t);
        }
    }
    ck.insert("centers", centers.centers.clone());
    ck
}

/// Restores just the model tensors (parameters and BN running statistics).
pub fn restore_model_params(ck: &Checkpoint, model: &mut Model) -> Result<()> {
    for (name, param) in model.named_params_mut() {
        let stored = ck.get(&name)?;
        if stored.shape() != param.shape() {
            return Err(Error::ShapeMismatch {
                op: "checkpoint restore",
                left: param.shape().to_vec(),
                right: stored.shape().to_vec(),
            });
        }
        param.data_mut().copy_from_slice(stored.data());
    }
    for (name, stats) in model.head.named_stats_mut() {
        stats
            .mean
            .copy_from_slice(ck.get(&format!("{name}.mean"))?.data());
        stats
            .var
            .copy_from_slice(ck.get(&format!("{name}.var"))?.data());
    }
    Ok(())
}

/// Restores model parameters, running stats, centers, optimizer moments and
/// the training RNG from a checkpoint.
pub fn restore_checkpoint(
    ck: &Checkpoint,
    model: &mut Model,
    centers: &mut ClassCenters,
    opt: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    restore_model_params(ck, model)?;
    for (i, (name, _)) in model.named_params().into_iter().enumerate() {
        opt.m[i].copy_from_slice(ck.get(&format!("adam.m.{name}"))?.data());
        opt.v[i].copy_from_slice(ck.get(&format!("adam.v.{name}"))?.data());
    }
    let stored_centers = ck.get("centers")?;
    if stored_centers.shape() != centers.centers.shape() {
        return Err(Error::ShapeMismatch {
            op: "checkpoint centers",
            left: centers.centers.shape().to_vec(),
            right: stored_centers.shape().to_vec(),
        });
    }
    centers
        .centers
        .data_mut()
        .copy_from_slice(stored_centers.data());
    opt.step = ck.adam_step;
    *rng = ChaCha8Rng::from_seed(ck.rng_seed);
    rng.set_word_pos(ck.rng_word_pos);
    Ok(())
}

fn write_metrics_csv(path: &Path, fingerprint: u64, log: &[EpochLog]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# config_fingerprint={fingerprint:016x}\n"));
    out.push_str("epoch,lr,l_triplet,l_center,l_cross,total,map,rank1\n");
    for e in log {
        let opt_fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.epoch,
            e.lr,
            e.parts.triplet,
            e.parts.center,
            e.parts.cross,
            e.parts.total,
            opt_fmt(e.map),
            opt_fmt(e.rank1),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Full training run over a dataset in the standard directory layout.
/// Writes `checkpoint.mrck`, `metrics.csv` and `id_map.txt` under `out`.
pub fn fit(
    cfg: &RunConfig,
    data_root: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let fingerprint = cfg.fingerprint();
    let trajectory = cfg.trajectory_fingerprint();

    let split = load_market(data_root)?;
    let id_map = IdentityMap::from_train(&split.train);
    let num_classes = id_map.num_classes();
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 identities, found {num_classes}"
        )));
    }
    id_map.save(&out.join("id_map.txt"))?;

    let store = match cfg.backbone {
        BackboneKind::Import => {
            let manifest = cfg.feature_manifest.as_ref().ok_or_else(|| {
                Error::Config("backbone = import requires feature_manifest".into())
            })?;
            Some(FeatureStore::load_manifest(manifest)?)
        }
        BackboneKind::Toy => None,
    };

    let mut model = build_model(cfg, num_classes, store.as_ref())?;
    let mut centers =
        ClassCenters::zeros(num_classes, model.descriptor_len(), cfg.center_update_rate);
    let sizes: Vec<usize> = model
        .named_params()
        .iter()
        .map(|(_, t)| t.numel())
        .collect();
    let mut opt = OptimizerState::new(
        &sizes,
        AdamHyper {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut start_epoch = 0usize;
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        if ck.fingerprint != trajectory {
            return Err(Error::Config(format!(
                "checkpoint fingerprint {:016x} does not match config trajectory {:016x}",
                ck.fingerprint, trajectory
            )));
        }
        restore_checkpoint(&ck, &mut model, &mut centers, &mut opt, &mut rng)?;
        start_epoch = ck.epoch as usize;
    }

    // cache the training inputs up front
    let train_labels: Vec<usize> = split
        .train
        .iter()
        .map(|r| id_map.dense(r.identity))
        .collect::<Result<_>>()?;
    let mut train_images = Vec::new();
    let mut train_features = Vec::new();
    match cfg.backbone {
        BackboneKind::Toy => {
            for r in &split.train {
                train_images.push(load_image(&r.path)?);
            }
        }
        BackboneKind::Import => {
            let store = store.as_ref().expect("checked above");
            for r in &split.train {
                train_features.push(store.load(&record_stem(r)?)?);
            }
        }
    }

    let sampler = PkSampler::new(&train_labels, cfg.p.min(num_classes), cfg.k)?;
    let weights = cfg.loss_weights();
    let sched = cfg.lr_schedule();
    let aug_cfg = cfg.augment_config();
    let checkpoint_path = out.join("checkpoint.mrck");
    let metrics_path = out.join("metrics.csv");

    let mut epoch_log: Vec<EpochLog> = Vec::new();
    let mut final_report = None;

    if cfg.epochs == 0 || start_epoch >= cfg.epochs {
        let ck = make_checkpoint(&mut model, &centers, &opt, start_epoch, &rng, trajectory);
        ck.save(&checkpoint_path)?;
        write_metrics_csv(&metrics_path, fingerprint, &epoch_log)?;
        return Ok(FitOutcome {
            checkpoint_path,
            metrics_path,
            epoch_log,
            final_report: None,
            num_classes,
        });
    }

    for epoch in start_epoch..cfg.epochs {
        let lr = lr_at_epoch(epoch, &sched);
        let mut sums = LossParts {
            triplet: 0.0,
            center: 0.0,
            cross: 0.0,
            total: 0.0,
        };
        let plans = sampler.epoch(&mut rng);
        let n_batches = plans.len();
        for plan in plans {
            let mut samples = Vec::with_capacity(plan.indices.len());
            for &idx in &plan.indices {
                let sample = match cfg.backbone {
                    BackboneKind::Toy => {
                        Sample::Image(augment(&train_images[idx], &aug_cfg, &mut rng)?)
                    }
                    BackboneKind::Import => Sample::Features(train_features[idx].clone()),
                };
                samples.push(sample);
            }
            let step = train_step(
                &mut model,
                &mut centers,
                &mut opt,
                &weights,
                &samples,
                &plan.labels,
                lr,
            );
            let parts = match step {
                Ok(p) => p,
                Err(e @ Error::Divergence(_)) => {
                    // preserve the last consistent state for post-mortem
                    let ck = make_checkpoint(&mut model, &centers, &opt, epoch, &rng, trajectory);
                    let _ = ck.save(&out.join("checkpoint.diverged.mrck"));
                    let _ = write_metrics_csv(&metrics_path, fingerprint, &epoch_log);
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            sums.triplet += parts.triplet;
            sums.center += parts.center;
            sums.cross += parts.cross;
            sums.total += parts.total;
        }
        let nb = n_batches as f64;
        let parts = LossParts {
            triplet: sums.triplet / nb,
            center: sums.center / nb,
            cross: sums.cross / nb,
            total: sums.total / nb,
        };

        let is_last = epoch + 1 == cfg.epochs;
        let evaluate_now = is_last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0);
        let (mut map, mut rank1) = (None, None);
        if evaluate_now && !split.query.is_empty() && !split.gallery.is_empty() {
            let q = compute_embeddings(&model, &split.query, store.as_ref())?;
            let g = compute_embeddings(&model, &split.gallery, store.as_ref())?;
            let report = evaluate(&q, &g, cfg.metric, cfg.protocol_filter)?;
            map = Some(report.map);
            rank1 = Some(report.rank1());
            if is_last {
                final_report = Some(report);
            }
        }

        epoch_log.push(EpochLog {
            epoch,
            lr,
            parts,
            map,
            rank1,
        });
        let ck = make_checkpoint(&mut model, &centers, &opt, epoch + 1, &rng, trajectory);
        ck.save(&checkpoint_path)?;
        write_metrics_csv(&metrics_path, fingerprint, &epoch_log)?;
    }

    Ok(FitOutcome {
        checkpoint_path,
        metrics_path,
        epoch_log,
        final_report,
        num_classes,
    })
}
