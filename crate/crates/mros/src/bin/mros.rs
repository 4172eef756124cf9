//! Command-line entry point: dataset synthesis, training, embedding
//! extraction, retrieval evaluation and the four-setting ablation harness.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
//! divergence.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use mros::commands;
use mros::config::RunConfig;
use mros::error::{Error, Result};
use mros::eval::Metric;
use mros::model::AblationSetting;

#[derive(Parser)]
#[command(
    name = "mros",
    version,
    about = "Multi-resolution overlapping-stripe re-identification"
)]
struct Cli {
    /// Key=value config file; unset keys fall back to defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "mros-out")]
    out: PathBuf,

    /// Overwrite non-empty output locations.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic identity dataset.
    Synth,
    /// Train a model on a dataset in the standard directory layout.
    Train {
        /// Dataset root (falls back to data_root from the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Ablation setting override: I, II, III or IV.
        #[arg(long)]
        setting: Option<String>,
        /// Resume from a checkpoint written by an identical config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Extract descriptors for one dataset split from a checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// train, gallery or query.
        #[arg(long, default_value = "query")]
        split: String,
    },
    /// Score query embeddings against gallery embeddings.
    Eval {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// l2 or cosine.
        #[arg(long)]
        metric: Option<String>,
        /// Disable the same-camera/junk exclusion protocol.
        #[arg(long)]
        no_protocol_filter: bool,
    },
    /// Train settings I-IV under identical seed/budget and tabulate.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_root(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.data_root.clone())
        .ok_or_else(|| Error::Config("no dataset: pass --data or set data_root".into()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth => {
            let outcome = commands::cmd_synth(&cfg, &cli.out, cli.force)?;
            println!(
                "synthesized {} train / {} gallery / {} query images under {}",
                outcome.train,
                outcome.gallery,
                outcome.query,
                cli.out.display()
            );
            println!("dataset_hash={:016x}", outcome.dataset_hash);
        }
        Command::Train {
            data,
            setting,
            resume,
        } => {
            if let Some(s) = setting {
                cfg.setting = AblationSetting::parse(s)?;
            }
            let root = data_root(&cfg, data)?;
            let outcome = commands::cmd_train(&cfg, &root, &cli.out, resume.as_deref())?;
            if let Some(last) = outcome.epoch_log.last() {
                println!(
                    "epoch {}: total {:.4} (triplet {:.4}, center {:.4}, cross {:.4})",
                    last.epoch,
                    last.parts.total,
                    last.parts.triplet,
                    last.parts.center,
                    last.parts.cross
                );
            }
            if let Some(report) = &outcome.final_report {
                println!("mAP {:.4}  Rank-1 {:.4}", report.map, report.rank1());
            }
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            println!("metrics: {}", outcome.metrics_path.display());
        }
        Command::Embed {
            checkpoint,
            data,
            split,
        } => {
            let root = data_root(&cfg, data)?;
            let path = commands::cmd_embed(&cfg, checkpoint, &root, split, &cli.out)?;
            println!("wrote {}", path.display());
        }
        Command::Eval {
            query,
            gallery,
            metric,
            no_protocol_filter,
        } => {
            let metric = match metric {
                Some(m) => Metric::parse(m)?,
                None => cfg.metric,
            };
            let outcome = commands::cmd_eval(
                query,
                gallery,
                metric,
                !no_protocol_filter && cfg.protocol_filter,
                &cli.out,
                cfg.fingerprint(),
            )?;
            let r = &outcome.report;
            println!(
                "mAP {:.4}  Rank-1 {:.4}  Rank-5 {:.4}  Rank-10 {:.4}  ({} queries, {} skipped)",
                r.map,
                r.rank(1),
                r.rank(5),
                r.rank(10),
                r.per_query_ap.len(),
                r.skipped_queries
            );
            println!("report: {}", outcome.md_path.display());
        }
        Command::Ablate { data } => {
            let root = data_root(&cfg, data)?;
            let report = commands::cmd_ablate(&cfg, &root, &cli.out)?;
            for row in &report.rows {
                match (&row.error, row.map, row.rank1) {
                    (Some(e), _, _) => println!("setting {}: FAILED ({e})", row.setting),
                    (None, Some(m), Some(r1)) => {
                        println!("setting {}: mAP {:.4}  Rank-1 {:.4}", row.setting, m, r1)
                    }
                    _ => println!("setting {}: trained (no evaluation split)", row.setting),
                }
            }
            println!("table: {}", report.md_path.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; usage problems exit with 2
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
