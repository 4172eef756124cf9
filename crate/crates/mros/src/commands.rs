//! The five operations behind the CLI subcommands, exposed as library
//! functions so tests and the Python bindings can drive them directly.

use std::path::{Path, PathBuf};

use crate::config::{fnv1a64, BackboneKind, RunConfig};
use crate::data::load_market;
use crate::data::synthetic::generate_synthetic;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EmbeddingSet, EvalReport, Metric};
use crate::model::{AblationSetting, FeatureStore};
use crate::train::checkpoint::Checkpoint;
use crate::train::{build_model, compute_embeddings, fit, restore_model_params, FitOutcome};

/// Published Market-1501 results for the four wirings (mAP %, Rank-1 %),
/// shown as a static reference column next to desk-scale runs.
pub const MARKET_REFERENCE: [(AblationSetting, f64, f64); 4] = [
    (AblationSetting::I, 81.8, 93.2),
    (AblationSetting::II, 82.8, 93.5),
    (AblationSetting::III, 84.0, 94.2),
    (AblationSetting::IV, 84.2, 94.4),
];

#[derive(Debug)]
pub struct SynthOutcome {
    pub manifest_path: PathBuf,
    pub dataset_hash: u64,
    pub train: usize,
    pub gallery: usize,
    pub query: usize,
}

/// Renders the synthetic dataset into `out` and writes a manifest carrying
/// the config fingerprint and a content hash of every rendered file.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<SynthOutcome> {
    if cfg.synth_images_per_identity < cfg.k {
        return Err(Error::Config(format!(
            "images_per_identity = {} is below K = {}; every identity must fill a K-slot",
            cfg.synth_images_per_identity, cfg.k
        )));
    }
    if out.exists()
        && out
            .read_dir()
            .map(|mut d| d.next().is_some())
            .unwrap_or(false)
        && !force
    {
        return Err(Error::Config(format!(
            "output directory {} is not empty (use --force to overwrite)",
            out.display()
        )));
    }
    let split = generate_synthetic(&cfg.synthetic_spec(), out)?;

    let mut rows: Vec<(String, String, i32, u32, PathBuf)> = Vec::new();
    for (name, records) in [
        ("train", &split.train),
        ("gallery", &split.gallery),
        ("query", &split.query),
    ] {
        for r in records {
            let file = r
                .path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            rows.push((name.to_string(), file, r.identity, r.camera, r.path.clone()));
        }
    }
    rows.sort();
    let mut hash_input = Vec::new();
    for (_, file, _, _, path) in &rows {
        hash_input.extend_from_slice(file.as_bytes());
        hash_input.extend_from_slice(&std::fs::read(path)?);
    }
    let dataset_hash = fnv1a64(&hash_input);

    let mut manifest = String::new();
    manifest.push_str(&format!(
        "# config_fingerprint={:016x}\n",
        cfg.fingerprint()
    ));
    manifest.push_str(&format!("# dataset_hash={dataset_hash:016x}\n"));
    manifest.push_str("split,filename,identity,camera\n");
    for (split_name, file, id, cam, _) in &rows {
        manifest.push_str(&format!("{split_name},{file},{id},{cam}\n"));
    }
    let manifest_path = out.join("manifest.csv");
    std::fs::write(&manifest_path, manifest)?;

    Ok(SynthOutcome {
        manifest_path,
        dataset_hash,
        train: split.train.len(),
        gallery: split.gallery.len(),
        query: split.query.len(),
    })
}

/// Trains per the config; writes checkpoint, metrics CSV, identity map and a
/// run summary under `out`.
pub fn cmd_train(
    cfg: &RunConfig,
    data_root: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<FitOutcome> {
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join("config.txt"))?;
    let outcome = fit(cfg, data_root, out, resume)?;

    // audit line: parameter count depends on the wiring
    let store = feature_store(cfg)?;
    let model = build_model(cfg, outcome.num_classes.max(2), store.as_ref())?;
    let summary = format!(
        "config_fingerprint={:016x}\nsetting={}\nclasses={}\ndescriptor_len={}\nparameters={}\nstripe_heads={}\n",
        cfg.fingerprint(),
        cfg.setting,
        outcome.num_classes,
        model.descriptor_len(),
        model.param_count(),
        model.head.stripes.len(),
    );
    std::fs::write(out.join("run.txt"), summary)?;
    Ok(outcome)
}

fn feature_store(cfg: &RunConfig) -> Result<Option<FeatureStore>> {
    match cfg.backbone {
        BackboneKind::Import => {
            let manifest = cfg.feature_manifest.as_ref().ok_or_else(|| {
                Error::Config("backbone = import requires feature_manifest".into())
            })?;
            Ok(Some(FeatureStore::load_manifest(manifest)?))
        }
        BackboneKind::Toy => Ok(None),
    }
}

/// Extracts descriptors for one dataset split from a trained checkpoint and
/// writes the embedding file plus sidecar.
pub fn cmd_embed(
    cfg: &RunConfig,
    checkpoint: &Path,
    data_root: &Path,
    split_name: &str,
    out: &Path,
) -> Result<PathBuf> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.fingerprint != cfg.trajectory_fingerprint() {
        return Err(Error::Config(format!(
            "checkpoint fingerprint {:016x} does not match config trajectory {:016x}",
            ck.fingerprint,
            cfg.trajectory_fingerprint()
        )));
    }
    let split = load_market(data_root)?;
    let records = match split_name {
        "train" => &split.train,
        "gallery" => &split.gallery,
        "query" => &split.query,
        other => {
            return Err(Error::Config(format!(
                "unknown split {other:?}; expected train, gallery or query"
            )))
        }
    };
    if records.is_empty() {
        return Err(Error::Contract(format!("split {split_name} is empty")));
    }
    let num_classes = ck.get("centers")?.shape()[0];
    let store = feature_store(cfg)?;
    let mut model = build_model(cfg, num_classes, store.as_ref())?;
    restore_model_params(&ck, &mut model)?;

    let embeddings = compute_embeddings(&model, records, store.as_ref())?;
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("embeddings_{split_name}.mreb"));
    embeddings.save(&path, cfg.fingerprint())?;
    Ok(path)
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub csv_path: PathBuf,
    pub md_path: PathBuf,
}

/// Scores query embeddings against gallery embeddings and writes the report
/// as CSV and markdown.
pub fn cmd_eval(
    query_path: &Path,
    gallery_path: &Path,
    metric: Metric,
    apply_protocol: bool,
    out: &Path,
    fingerprint: u64,
) -> Result<EvalOutcome> {
    let query = EmbeddingSet::load(query_path)?;
    let gallery = EmbeddingSet::load(gallery_path)?;
    if query.dim() != gallery.dim() {
        return Err(Error::ShapeMismatch {
            op: "embedding files",
            left: vec![query.dim()],
            right: vec![gallery.dim()],
        });
    }
    let report = evaluate(&query, &gallery, metric, apply_protocol)?;
    std::fs::create_dir_all(out)?;

    let mut csv = String::new();
    csv.push_str(&format!("# config_fingerprint={fingerprint:016x}\n"));
    csv.push_str("metric,map,rank1,rank5,rank10,queries,skipped\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        metric,
        report.map,
        report.rank(1),
        report.rank(5),
        report.rank(10),
        report.per_query_ap.len(),
        report.skipped_queries
    ));
    csv.push_str("query,ap\n");
    for (i, ap) in report.per_query_ap.iter().enumerate() {
        csv.push_str(&format!("{i},{ap}\n"));
    }
    let csv_path = out.join("report.csv");
    std::fs::write(&csv_path, csv)?;

    let mut md = String::new();
    md.push_str(&format!(
        "<!-- config_fingerprint={fingerprint:016x} -->\n\n"
    ));
    md.push_str("| mAP | Rank-1 | Rank-5 | Rank-10 |\n");
    md.push_str("|------|--------|--------|---------|\n");
    md.push_str(&format!(
        "| {:.4} | {:.4} | {:.4} | {:.4} |\n",
        report.map,
        report.rank(1),
        report.rank(5),
        report.rank(10)
    ));
    let md_path = out.join("report.md");
    std::fs::write(&md_path, md)?;

    Ok(EvalOutcome {
        report,
        csv_path,
        md_path,
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub map: Option<f64>,
    pub rank1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub csv_path: PathBuf,
    pub md_path: PathBuf,
}

/// Trains all four wirings under identical seed and budget and renders a
/// four-row comparison table. A failed row is marked and the remaining
/// settings still run.
pub fn cmd_ablate(cfg: &RunConfig, data_root: &Path, out: &Path) -> Result<AblationReport> {
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(4);
    for setting in AblationSetting::ALL {
        let mut run_cfg = cfg.clone();
        run_cfg.setting = setting;
        let run_out = out.join(format!("setting_{setting}"));
        match cmd_train(&run_cfg, data_root, &run_out, None) {
            Ok(outcome) => {
                let (map, rank1) = outcome
                    .final_report
                    .as_ref()
                    .map(|r| (Some(r.map), Some(r.rank1())))
                    .unwrap_or((None, None));
                rows.push(AblationRow {
                    setting,
                    map,
                    rank1,
                    error: None,
                });
            }
            Err(e) => rows.push(AblationRow {
                setting,
                map: None,
                rank1: None,
                error: Some(e.to_string()),
            }),
        }
    }

    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let mut csv = String::new();
    csv.push_str(&format!(
        "# config_fingerprint={:016x}\n",
        cfg.fingerprint()
    ));
    csv.push_str("setting,map,rank1,reference_map,reference_rank1,status\n");
    for (row, (_, ref_map, ref_r1)) in rows.iter().zip(&MARKET_REFERENCE) {
        csv.push_str(&format!(
            "{},{},{},{ref_map:.1},{ref_r1:.1},{}\n",
            row.setting,
            fmt_opt(row.map),
            fmt_opt(row.rank1),
            row.error.as_deref().unwrap_or("ok"),
        ));
    }
    let csv_path = out.join("ablation.csv");
    std::fs::write(&csv_path, &csv)?;

    let mut md = String::new();
    md.push_str(&format!(
        "<!-- config_fingerprint={:016x} -->\n\n",
        cfg.fingerprint()
    ));
    md.push_str("| # | setting | mAP | Rank-1 | Market-1501 reference mAP | reference Rank-1 |\n");
    md.push_str("|---|---------|-----|--------|---------------------------|------------------|\n");
    for (row, (_, ref_map, ref_r1)) in rows.iter().zip(&MARKET_REFERENCE) {
        let label = match row.setting {
            AblationSetting::I => "s non-overlapping stripes",
            AblationSetting::II => "s-1 overlapping stripes",
            AblationSetting::III => "overlap + global descriptor",
            AblationSetting::IV => "complete multi-resolution model",
        };
        md.push_str(&format!(
            "| {} | {} | {} | {} | {ref_map:.1} | {ref_r1:.1} |\n",
            row.setting,
            label,
            fmt_opt(row.map),
            fmt_opt(row.rank1),
        ));
    }
    md.push_str(
        "\nReference columns show published Market-1501 percentages for each wiring; \
         desk-scale runs on synthetic data are not comparable to them.\n",
    );
    let md_path = out.join("ablation.md");
    std::fs::write(&md_path, md)?;

    Ok(AblationReport {
        rows,
        csv_path,
        md_path,
    })
}
