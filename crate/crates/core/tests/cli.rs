//! End-to-end checks of the `aparl` binary.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use aparl::cli::{load_compare_run, TableRow};
use aparl::metrics::EvalRow;
use aparl::policy::{init_policy, save_params, Arch};
use aparl::{Algorithm, RunConfig};
use common::{smoke_config, tiny_config};
use sha2::{Digest, Sha256};
use tempfile::tempdir;

fn aparl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aparl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn gen_data(dir: &Path, cfg: &RunConfig, name: &str) -> String {
    let config = write_config(dir, cfg);
    let data = dir.join(name);
    ok(&aparl(&["gen-data", "--config", &config, "--out", data.to_str().unwrap()]));
    data.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(Algorithm::Aparl, 0);
    let a = gen_data(dir.path(), &cfg, "a");
    let b = gen_data(dir.path(), &cfg, "b");
    for file in ["train.jsonl", "test.jsonl", "meta.json"] {
        assert_eq!(
            digest(&Path::new(&a).join(file)),
            digest(&Path::new(&b).join(file)),
            "{file}"
        );
    }
}

#[test]
fn invalid_config_exits_one_without_output() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[data]\ntier_mix = [0.5, 0.5, 0.5, 0.0]\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = aparl(&["gen-data", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
    assert_eq!(aparl(&["train", "--bogus"]).status.code(), Some(1));
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_config(Algorithm::Aparl, 0));
    let missing = dir.path().join("nowhere");
    let out = aparl(&[
        "train",
        "--config",
        &config,
        "--data",
        missing.to_str().unwrap(),
        "--out",
        dir.path().join("runs").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn smoke_training_is_fast_and_reproducible() {
    let dir = tempdir().unwrap();
    let cfg = smoke_config(Algorithm::Aparl, 0);
    let data = gen_data(dir.path(), &cfg, "data");
    let config = dir.path().join("config.toml");
    let mut finals = Vec::new();
    for name in ["one", "two"] {
        let out = dir.path().join(name);
        let started = Instant::now();
        ok(&aparl(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            &data,
            "--out",
            out.to_str().unwrap(),
        ]));
        assert!(started.elapsed().as_secs() < 60, "smoke run took {:?}", started.elapsed());
        let run = out.join("run-s0");
        assert!(run.join("manifest.json").exists());
        assert!(run.join("metrics").join("run-s0.aparl.mu_p.csv").exists());
        finals.push(digest(&run.join("final.bin")));
    }
    assert_eq!(finals[0], finals[1]);
}

#[test]
fn eval_of_an_untrained_policy() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(Algorithm::Aparl, 0);
    let data = gen_data(dir.path(), &cfg, "data");
    let config = dir.path().join("config.toml");
    let ckpt = dir.path().join("random.bin");
    save_params(&ckpt, &init_policy(cfg.arch().unwrap(), 4)).unwrap();
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        ok(&aparl(&[
            "eval",
            "--config",
            config.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            &data,
            "--out",
            out.to_str().unwrap(),
        ]));
        reports.push(fs::read(&out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let row: EvalRow = serde_json::from_slice(&reports[0]).unwrap();
    assert!(row.f1 < 0.05, "untrained F1 {}", row.f1);

    let wrong = dir.path().join("wrong.bin");
    save_params(&wrong, &init_policy(Arch::new(64, 16, 32).unwrap(), 4)).unwrap();
    let out = aparl(&[
        "eval",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        wrong.to_str().unwrap(),
        "--data",
        &data,
        "--out",
        dir.path().join("c.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("shape"));
}

#[test]
fn comparison_table_is_recomputable_from_run_logs() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(Algorithm::Aparl, 0);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("cmp");
    ok(&aparl(&["compare", "--config", &config, "--seeds", "0,1", "--out", out.to_str().unwrap()]));
    for file in ["results.csv", "comparison.md", "pass1_hist.csv", "manifest.json"] {
        assert!(out.join(file).exists(), "{file}");
    }
    let table: Vec<TableRow> = csv::Reader::from_path(out.join("comparison.csv"))
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    let names: Vec<&str> = table.iter().map(|r| r.algorithm.as_str()).collect();
    assert_eq!(names, ["base", "sft", "grpo", "dapo", "aparl"]);

    for row in &table {
        assert_eq!((row.runs, row.failed), (2, 0));
        let finals: Vec<EvalRow> = [0, 1]
            .iter()
            .map(|&seed| {
                load_compare_run(&out, &row.algorithm, seed)
                    .unwrap()
                    .last_eval()
                    .unwrap()
                    .clone()
            })
            .collect();
        let check = |values: Vec<f64>, mean: f64, std: f64| {
            let m = (values[0] + values[1]) / 2.0;
            let s = (values[0] - values[1]).abs() / 2.0;
            assert!((m - mean).abs() <= 1e-12 && (s - std).abs() <= 1e-12, "{}", row.algorithm);
        };
        check(finals.iter().map(|e| e.precision).collect(), row.precision_mean, row.precision_std);
        check(finals.iter().map(|e| e.recall).collect(), row.recall_mean, row.recall_std);
        check(finals.iter().map(|e| e.f1).collect(), row.f1_mean, row.f1_std);
    }
}
