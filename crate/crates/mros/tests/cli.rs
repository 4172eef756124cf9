//! Black-box tests of the `mros` binary: subcommand behavior, exit codes and
//! report files.

use std::path::Path;
use std::process::{Command, Output};

use mros::eval::EmbeddingSet;
use mros::tensor::Tensor;

fn mros(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mros"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("cfg.txt");
    let base = "p = 4\nk = 4\nepochs = 2\neval_every = 0\nsynth_identities = 6\nsynth_images_per_identity = 8\nsynth_cameras = 2\nseed = 3\n";
    std::fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let run = |out: &str, seed: &str| {
        let output = mros(
            &[
                "synth",
                "--config",
                cfg.to_str().unwrap(),
                "--seed",
                seed,
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(output.status.success(), "{output:?}");
        String::from_utf8(output.stdout).unwrap()
    };
    let a = run("data_a", "7");
    let b = run("data_b", "7");
    let c = run("data_c", "8");
    let hash = |s: &str| {
        s.lines()
            .find(|l| l.starts_with("dataset_hash="))
            .unwrap()
            .to_string()
    };
    assert_eq!(hash(&a), hash(&b));
    assert_ne!(hash(&a), hash(&c));
    assert!(dir.path().join("data_a/manifest.csv").is_file());
}

#[test]
fn synth_refuses_non_empty_output_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let args = ["synth", "--config", cfg.to_str().unwrap(), "--out", "data"];
    assert!(mros(&args, dir.path()).status.success());
    let second = mros(&args, dir.path());
    assert_eq!(second.status.code(), Some(2));
    let forced = mros(
        &[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "data",
            "--force",
        ],
        dir.path(),
    );
    assert!(forced.status.success());
}

#[test]
fn synth_rejects_too_few_images_per_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synth_images_per_identity = 3\nk = 4\n");
    let out = mros(
        &["synth", "--config", cfg.to_str().unwrap(), "--out", "data"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("below K"), "{stderr}");
}

#[test]
fn train_invalid_setting_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = mros(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            "nowhere",
            "--setting",
            "V",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("I, II, III, IV"), "{stderr}");
}

#[test]
fn train_missing_dataset_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = mros(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            "does_not_exist",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn full_cli_round_trip_and_setting_audit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg_s = cfg.to_str().unwrap();
    assert!(
        mros(&["synth", "--config", cfg_s, "--out", "data"], dir.path())
            .status
            .success()
    );

    for setting in ["I", "IV"] {
        let out_dir = format!("run_{setting}");
        let out = mros(
            &[
                "train",
                "--config",
                cfg_s,
                "--data",
                "data",
                "--out",
                &out_dir,
                "--setting",
                setting,
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{out:?}");
    }
    // wiring audit: different pooled widths per setting
    let run_txt =
        |name: &str| std::fs::read_to_string(dir.path().join(name).join("run.txt")).unwrap();
    let i = run_txt("run_I");
    let iv = run_txt("run_IV");
    assert!(i.contains("stripe_heads=6"), "{i}");
    assert!(iv.contains("stripe_heads=10"), "{iv}");
    let params = |s: &str| -> u64 {
        s.lines()
            .find_map(|l| l.strip_prefix("parameters="))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_ne!(params(&i), params(&iv));

    // embed + eval from the setting-IV checkpoint
    let embed = mros(
        &["embed", "--config", cfg_s, "--setting-ignored"],
        dir.path(),
    );
    // wrong flag: clap usage error
    assert_eq!(embed.status.code(), Some(2));

    for split in ["query", "gallery"] {
        let out = mros(
            &[
                "embed",
                "--config",
                cfg_s,
                "--checkpoint",
                "run_IV/checkpoint.mrck",
                "--data",
                "data",
                "--split",
                split,
                "--out",
                "emb",
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{out:?}");
    }
    let eval = mros(
        &[
            "eval",
            "--query",
            "emb/embeddings_query.mreb",
            "--gallery",
            "emb/embeddings_gallery.mreb",
            "--metric",
            "l2",
            "--out",
            "evalout",
        ],
        dir.path(),
    );
    assert!(eval.status.success(), "{eval:?}");
    let report = std::fs::read_to_string(dir.path().join("evalout/report.csv")).unwrap();
    assert!(report.contains("metric,map,rank1,rank5,rank10"));
    assert!(dir.path().join("evalout/report.md").is_file());
}

#[test]
fn eval_hand_fixture_reproduces_known_values() {
    let dir = tempfile::tempdir().unwrap();
    // three queries with known rankings under L2, protocol filtering on:
    //   q0 (id 1, cam 1): relevant at ranks 1 and 3 -> AP 5/6
    //   q1 (id 2, cam 1): relevant at rank 1 -> AP 1
    //   q2 (id 3, cam 1): decoy at 20.5 outranks the 21.0 match -> AP 1/2
    let gallery = EmbeddingSet::new(
        Tensor::new(
            vec![7, 1],
            vec![
                1.0,  // id 1 cam 2: d(q0)=0 -> rank 1 relevant
                2.0,  // id 9 cam 2
                3.0,  // id 1 cam 2: rank 3 relevant
                4.0,  // id 9 cam 2
                10.0, // id 2 cam 2: q1's match
                21.0, // id 3 cam 2: q2's match at rank 2
                20.5, // id 9 cam 2: q2's rank-1 decoy
            ],
        )
        .unwrap(),
        vec![1, 9, 1, 9, 2, 3, 9],
        vec![2, 2, 2, 2, 2, 2, 2],
        vec![String::new(); 7],
    )
    .unwrap();
    let query = EmbeddingSet::new(
        Tensor::new(vec![3, 1], vec![1.0, 10.0, 20.0]).unwrap(),
        vec![1, 2, 3],
        vec![1, 1, 1],
        vec![String::new(); 3],
    )
    .unwrap();
    let qpath = dir.path().join("q.mreb");
    let gpath = dir.path().join("g.mreb");
    query.save(&qpath, 1).unwrap();
    gallery.save(&gpath, 1).unwrap();

    let out = mros(
        &[
            "eval",
            "--query",
            "q.mreb",
            "--gallery",
            "g.mreb",
            "--out",
            "report",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{out:?}");
    let csv = std::fs::read_to_string(dir.path().join("report/report.csv")).unwrap();
    let row = csv.lines().nth(2).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    let map: f64 = fields[1].parse().unwrap();
    let rank1: f64 = fields[2].parse().unwrap();
    let expected_map = (5.0 / 6.0 + 1.0 + 0.5) / 3.0;
    assert!((map - expected_map).abs() < 1e-9, "map {map}");
    assert!((rank1 - 2.0 / 3.0).abs() < 1e-9, "rank1 {rank1}");
}

#[test]
fn eval_l2_and_cosine_agree_on_normalized_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let unit = |theta: f64| vec![theta.cos(), theta.sin()];
    let mk = |angles: &[f64], ids: &[i32], cams: &[u32]| {
        let data: Vec<f64> = angles.iter().flat_map(|&a| unit(a)).collect();
        EmbeddingSet::new(
            Tensor::new(vec![angles.len(), 2], data).unwrap(),
            ids.to_vec(),
            cams.to_vec(),
            vec![String::new(); angles.len()],
        )
        .unwrap()
    };
    mk(&[0.1, 1.9], &[1, 2], &[1, 1])
        .save(&dir.path().join("q.mreb"), 0)
        .unwrap();
    mk(&[0.2, 2.0, 0.9, 2.8], &[1, 2, 1, 2], &[2, 2, 2, 2])
        .save(&dir.path().join("g.mreb"), 0)
        .unwrap();
    let run = |metric: &str, out: &str| {
        let o = mros(
            &[
                "eval",
                "--query",
                "q.mreb",
                "--gallery",
                "g.mreb",
                "--metric",
                metric,
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{o:?}");
        std::fs::read_to_string(dir.path().join(out).join("report.csv"))
            .unwrap()
            .lines()
            .skip(2)
            .collect::<Vec<_>>()
            .join("\n")
    };
    let strip_metric = |s: String| s.split_once(',').unwrap().1.to_string();
    let l2 = strip_metric(run("l2", "out_l2"));
    let cos = strip_metric(run("cosine", "out_cos"));
    assert_eq!(l2, cos, "identical rankings imply identical AP rows");
}

#[test]
fn eval_mismatched_dims_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    EmbeddingSet::new(
        Tensor::zeros(vec![1, 2]),
        vec![1],
        vec![1],
        vec![String::new()],
    )
    .unwrap()
    .save(&dir.path().join("q.mreb"), 0)
    .unwrap();
    EmbeddingSet::new(
        Tensor::zeros(vec![1, 3]),
        vec![1],
        vec![2],
        vec![String::new()],
    )
    .unwrap()
    .save(&dir.path().join("g.mreb"), 0)
    .unwrap();
    let out = mros(
        &[
            "eval",
            "--query",
            "q.mreb",
            "--gallery",
            "g.mreb",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains('2') && stderr.contains('3'), "{stderr}");
}

#[test]
fn ablate_writes_deterministic_four_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eval_every = 2\n");
    let cfg_s = cfg.to_str().unwrap();
    assert!(
        mros(&["synth", "--config", cfg_s, "--out", "data"], dir.path())
            .status
            .success()
    );
    for out in ["ab1", "ab2"] {
        let o = mros(
            &["ablate", "--config", cfg_s, "--data", "data", "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{o:?}");
    }
    let md1 = std::fs::read_to_string(dir.path().join("ab1/ablation.md")).unwrap();
    let md2 = std::fs::read_to_string(dir.path().join("ab2/ablation.md")).unwrap();
    assert_eq!(md1, md2);
    let data_rows = md1
        .lines()
        .filter(|l| {
            l.starts_with("| I")
                || l.starts_with("| II")
                || l.starts_with("| III")
                || l.starts_with("| IV")
        })
        .count();
    assert_eq!(data_rows, 4);
    let csv1 = std::fs::read_to_string(dir.path().join("ab1/ablation.csv")).unwrap();
    let csv2 = std::fs::read_to_string(dir.path().join("ab2/ablation.csv")).unwrap();
    assert_eq!(csv1, csv2);
}
