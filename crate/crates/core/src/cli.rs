//! Command implementations behind the `aparl` binary: `gen-data`, `train`,
//! `eval` and `compare`.
//!
//! Every command either produces its complete file set or exits nonzero.
//! Files are written to a temporary name and renamed into place, and
//! multi-file outputs are staged in a sibling directory first.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, RunConfig};
use crate::error::{AparlError, Result};
use crate::metrics::{self, EvalRow, MetricsLog};
use crate::policy::{self, PolicyParams};
use crate::task_env::{generate_dataset, read_jsonl, tier_counts, write_jsonl, DatasetMeta, Sample};
use crate::trainer::{self, base_policy, evaluate, Trainer, TrainerState};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const FINAL_PARAMS_FILE: &str = "final.bin";

/// Process exit code for an error: 1 usage/config, 2 data, 3 numeric abort.
pub fn exit_code(err: &AparlError) -> i32 {
    match err {
        AparlError::Config(_) => 1,
        AparlError::Numeric(_) => 3,
        _ => 2,
    }
}

/// Sizes the global worker pool from `APARL_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("APARL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| AparlError::Config(format!("APARL_THREADS must be a positive integer, got {value:?}")))?;
    // A pool that is already built (tests, embedding) is left alone.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| AparlError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        AparlError::io(path, e)
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    atomic_write(path, text.as_bytes())
}

/// Runs `fill` on a fresh staging directory and renames it to `dest`.
/// The staging directory is removed when `fill` fails.
fn staged<T>(dest: &Path, fill: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let mut name = dest.file_name().unwrap_or_default().to_owned();
    name.push(".partial");
    let stage = dest.with_file_name(name);
    if stage.exists() {
        fs::remove_dir_all(&stage).map_err(|e| AparlError::io(&stage, e))?;
    }
    fs::create_dir_all(&stage).map_err(|e| AparlError::io(&stage, e))?;
    let out = fill(&stage).and_then(|v| {
        if dest.exists() {
            fs::remove_dir_all(dest).map_err(|e| AparlError::io(dest, e))?;
        }
        fs::rename(&stage, dest).map_err(|e| AparlError::io(dest, e))?;
        Ok(v)
    });
    if out.is_err() {
        let _ = fs::remove_dir_all(&stage);
    }
    out
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn source_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .map_or_else(
            || format!("v{}", env!("CARGO_PKG_VERSION")),
            |rev| format!("v{} ({rev})", env!("CARGO_PKG_VERSION")),
        )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub source_revision: String,
    pub output_dir: PathBuf,
    pub started_at: u64,
    pub finished_at: Option<u64>,
}

impl RunManifest {
    fn new(run_id: &str, cfg: &RunConfig, seeds: Vec<u64>, output_dir: &Path) -> Self {
        RunManifest {
            run_id: run_id.into(),
            config_hash: cfg.hash(),
            seeds,
            source_revision: source_revision(),
            output_dir: output_dir.to_path_buf(),
            started_at: unix_time(),
            finished_at: None,
        }
    }
}

/// Generates the train and test splits into `out`.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<DatasetMeta> {
    cfg.data.validate()?;
    let (train, test) = generate_dataset(&cfg.data)?;
    let meta = DatasetMeta {
        vocab: cfg.data.vocab,
        n_train: train.len(),
        n_test: test.len(),
        seed: cfg.data.seed,
        tier_counts_train: tier_counts(&train),
        tier_counts_test: tier_counts(&test),
    };
    fs::create_dir_all(out).map_err(|e| AparlError::io(out, e))?;
    let files = [TRAIN_FILE, TEST_FILE, META_FILE];
    staged(&out.join(".gen-data"), |stage| {
        write_jsonl(&stage.join(TRAIN_FILE), &train)?;
        write_jsonl(&stage.join(TEST_FILE), &test)?;
        write_json(&stage.join(META_FILE), &meta)?;
        Ok(())
    })?;
    let stage = out.join(".gen-data");
    for f in files {
        fs::rename(stage.join(f), out.join(f)).map_err(|e| AparlError::io(out.join(f), e))?;
    }
    fs::remove_dir_all(&stage).map_err(|e| AparlError::io(&stage, e))?;
    Ok(meta)
}

pub fn load_split(data_dir: &Path) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let train = read_jsonl(&data_dir.join(TRAIN_FILE))?;
    let test = read_jsonl(&data_dir.join(TEST_FILE))?;
    Ok((train, test))
}

/// First free `{base}`, `{base}-2`, `{base}-3`, ... under `dir`.
fn unique_run_id(dir: &Path, base: &str) -> String {
    let taken = |id: &str| dir.join(id).exists() || dir.join(format!("{id}.partial")).exists();
    if !taken(base) {
        return base.to_string();
    }
    (2..)
        .map(|n| format!("{base}-{n}"))
        .find(|id| !taken(id))
        .expect("unbounded search")
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub log: MetricsLog,
    pub final_params: PathBuf,
}

/// Trains one run into `out/{run_id}/`. With `resume`, training continues
/// from a trainer checkpoint instead of the base policy.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    let (train, test) = load_split(data_dir)?;
    let trainer = Trainer::new(cfg, &train, &test)?;
    fs::create_dir_all(out).map_err(|e| AparlError::io(out, e))?;
    let run_id = unique_run_id(out, &trainer::run_id(cfg));
    let run_dir = out.join(&run_id);

    let mut state = match resume {
        Some(path) => {
            let mut s = trainer::restore(path)?;
            if s.params.arch != cfg.arch()? {
                return Err(AparlError::Shape("checkpoint does not match the configured architecture".into()));
            }
            s.log.run_id = run_id.clone();
            s
        }
        None => TrainerState::new(base_policy(cfg)?, &run_id, cfg.train.algorithm),
    };
    state.log.algorithm = cfg.train.algorithm.to_string();

    // Checkpoints land directly in the run directory so that they survive a
    // numeric abort; everything else is staged.
    let ckpt_dir = run_dir.join("checkpoints");
    let mut manifest = RunManifest::new(&run_id, cfg, vec![cfg.train.seed], &run_dir);
    fs::create_dir_all(&run_dir).map_err(|e| AparlError::io(&run_dir, e))?;
    write_json(&run_dir.join(MANIFEST_FILE), &manifest)?;
    atomic_write(&run_dir.join(CONFIG_ECHO_FILE), cfg.to_toml_string().as_bytes())?;

    let outcome = trainer.run(state, Some(&ckpt_dir))?;
    staged(&run_dir.join("metrics"), |stage| metrics::export(&outcome.log, stage))?;
    let final_params = run_dir.join(FINAL_PARAMS_FILE);
    atomic_write(&final_params, &policy::encode_params(&outcome.params))?;
    manifest.finished_at = Some(unix_time());
    write_json(&run_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(TrainReport {
        run_id,
        run_dir,
        log: outcome.log,
        final_params,
    })
}

/// Loads a policy from either a policy file or a trainer checkpoint.
pub fn load_any_params(path: &Path) -> Result<PolicyParams> {
    let bytes = fs::read(path).map_err(|e| AparlError::io(path, e))?;
    if bytes.starts_with(b"APRLTRN\0") {
        Ok(trainer::decode_checkpoint(&bytes, path)?.params)
    } else {
        let (params, used) = policy::decode_params(&bytes, path)?;
        if used != bytes.len() {
            return Err(AparlError::corrupt(path, "trailing bytes"));
        }
        Ok(params)
    }
}

fn check_shapes(params: &PolicyParams, cfg: &RunConfig, data: &[Sample]) -> Result<()> {
    let v = params.arch.vocab_size;
    if v != cfg.data.vocab.size() {
        return Err(AparlError::Shape(format!(
            "checkpoint vocabulary size {v} does not match the configured vocabulary size {}",
            cfg.data.vocab.size()
        )));
    }
    for s in data {
        if let Some(t) = s.prompt.iter().find(|&&t| t as usize >= v) {
            return Err(AparlError::Shape(format!(
                "sample {} contains token {t} but the checkpoint vocabulary has {v} entries",
                s.id
            )));
        }
    }
    Ok(())
}

/// Evaluates a checkpoint and writes the metrics as JSON. `data` is a JSONL
/// file or a `gen-data` directory, whose test split is used.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<EvalRow> {
    cfg.validate()?;
    let params = load_any_params(checkpoint)?;
    let data = if data.is_dir() { data.join(TEST_FILE) } else { data.to_path_buf() };
    let samples = read_jsonl(&data)?;
    check_shapes(&params, cfg, &samples)?;
    let row = evaluate(&params, &samples, cfg, 0)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AparlError::io(dir, e))?;
    }
    write_json(out, &row)?;
    Ok(row)
}

/// Final metrics of one comparison cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// `"base"` or an algorithm name.
    pub algorithm: String,
    pub seed: u64,
    pub status: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub validation_score: Option<f64>,
    pub response_length: Option<f64>,
    pub steps: Option<usize>,
    pub rollouts: Option<usize>,
    /// Test samples with pass@1 in (0,1) at the start and >= 0.9 at the end.
    pub promoted: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub algorithm: String,
    pub runs: usize,
    pub failed: usize,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub results: Vec<RunResult>,
    pub table: Vec<TableRow>,
    /// Logs of successful runs keyed by (algorithm, seed).
    pub logs: BTreeMap<(String, u64), MetricsLog>,
}

/// Count of samples whose pass@1 moved from (0,1) to at least 0.9.
pub fn promoted_count(start: &[f64], end: &[f64]) -> usize {
    start
        .iter()
        .zip(end)
        .filter(|(&s, &e)| s > 0.0 && s < 1.0 && e >= 0.9)
        .count()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn result_from_log(name: &str, seed: u64, log: &MetricsLog) -> RunResult {
    let last = log.last_eval();
    let promoted = match (log.evals.first(), last) {
        (Some(a), Some(b)) if a.pass1.len() == b.pass1.len() => Some(promoted_count(&a.pass1, &b.pass1)),
        _ => None,
    };
    RunResult {
        algorithm: name.into(),
        seed,
        status: "ok".into(),
        precision: last.map(|e| e.precision),
        recall: last.map(|e| e.recall),
        f1: last.map(|e| e.f1),
        validation_score: last.map(|e| e.validation_score),
        response_length: last.map(|e| e.mean_response_len),
        steps: Some(log.steps.len()),
        rollouts: Some(log.total_rollouts()),
        promoted,
    }
}

/// Aggregates per-run results into one table row per algorithm, in the
/// order the names first appear.
pub fn aggregate(results: &[RunResult]) -> Vec<TableRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.algorithm.as_str()) {
            names.push(&r.algorithm);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&RunResult> = results.iter().filter(|r| r.algorithm == name).collect();
            let ok: Vec<&&RunResult> = rows.iter().filter(|r| r.f1.is_some()).collect();
            let col = |f: fn(&RunResult) -> Option<f64>| mean_std(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            let (precision_mean, precision_std) = col(|r| r.precision);
            let (recall_mean, recall_std) = col(|r| r.recall);
            let (f1_mean, f1_std) = col(|r| r.f1);
            TableRow {
                algorithm: name.into(),
                runs: rows.len(),
                failed: rows.len() - ok.len(),
                precision_mean,
                precision_std,
                recall_mean,
                recall_std,
                f1_mean,
                f1_std,
            }
        })
        .collect()
}

fn pct(mean: f64, std: f64) -> String {
    if mean.is_nan() {
        "failed".into()
    } else {
        format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
    }
}

/// Plain-text table of mean ± population std (in percent).
pub fn render_table(table: &[TableRow]) -> String {
    let mut s = String::from("| algorithm | runs | precision | recall | F1 |\n|---|---|---|---|---|\n");
    for r in table {
        let runs = if r.failed > 0 {
            format!("{} ({} failed)", r.runs, r.failed)
        } else {
            r.runs.to_string()
        };
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.algorithm,
            runs,
            pct(r.precision_mean, r.precision_std),
            pct(r.recall_mean, r.recall_std),
            pct(r.f1_mean, r.f1_std)
        ));
    }
    s
}

#[derive(Serialize)]
struct HistRecord<'a> {
    algorithm: &'a str,
    seed: u64,
    phase: &'a str,
    step: usize,
    lo: f64,
    hi: f64,
    count: usize,
}

fn write_histograms(path: &Path, logs: &BTreeMap<(String, u64), MetricsLog>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for ((alg, seed), log) in logs {
        let phases = [("before", log.evals.first()), ("after", log.evals.last())];
        for (phase, eval) in phases {
            let Some(h) = eval.and_then(|e| e.histogram.as_ref()) else {
                continue;
            };
            let mut put = |lo: f64, hi: f64, count: usize| {
                w.serialize(HistRecord {
                    algorithm: alg,
                    seed: *seed,
                    phase,
                    step: h.step,
                    lo,
                    hi,
                    count,
                })
            };
            let res = put(0.0, 0.0, h.zeros)
                .and_then(|_| {
                    h.interior
                        .iter()
                        .enumerate()
                        .try_for_each(|(i, &c)| put(h.edges[i], h.edges[i + 1], c))
                })
                .and_then(|_| put(1.0, 1.0, h.ones));
            res.map_err(|e| AparlError::corrupt(path, e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| AparlError::corrupt(path, e.to_string()))?;
    atomic_write(path, &bytes)
}

fn write_results_csv(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(r).map_err(|e| AparlError::corrupt(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| AparlError::corrupt(path, e.to_string()))?;
    atomic_write(path, &bytes)
}

/// Trains every algorithm on every seed against one dataset and writes a
/// comparison table, per-run metrics, and before/after pass@1 histograms.
///
/// Layout of `out`: `data/`, `runs/{alg}-s{seed}/`, `results.csv`,
/// `comparison.csv`, `comparison.md`, `pass1_hist.csv`, `manifest.json`,
/// `config.toml`.
pub fn cmd_compare(cfg: &RunConfig, seeds: &[u64], out: &Path) -> Result<Comparison> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(AparlError::Config("compare needs at least one seed".into()));
    }
    fs::create_dir_all(out).map_err(|e| AparlError::io(out, e))?;
    let mut manifest = RunManifest::new("compare", cfg, seeds.to_vec(), out);
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    atomic_write(&out.join(CONFIG_ECHO_FILE), cfg.to_toml_string().as_bytes())?;
    let data_dir = out.join("data");
    cmd_gen_data(cfg, &data_dir)?;
    let (train, test) = load_split(&data_dir)?;
    let runs_dir = out.join("runs");

    let mut jobs: Vec<(Option<Algorithm>, u64)> = Vec::new();
    for &seed in seeds {
        jobs.push((None, seed));
        for alg in Algorithm::ALL {
            jobs.push((Some(alg), seed));
        }
    }
    let outcomes: Vec<(String, u64, Result<MetricsLog>)> = jobs
        .par_iter()
        .map(|&(alg, seed)| {
            let name = alg.map_or("base", Algorithm::as_str).to_string();
            let run = || -> Result<MetricsLog> {
                let cfg = cfg.variant(alg.unwrap_or(cfg.train.algorithm), seed);
                let id = format!("{name}-s{seed}");
                let (log, params) = match alg {
                    None => {
                        let params = base_policy(&cfg)?;
                        let mut log = MetricsLog::new(&id, "base");
                        log.push_eval(evaluate(&params, &test, &cfg, 0)?);
                        (log, params)
                    }
                    Some(_) => {
                        let mut outcome = trainer::train(&cfg, &train, &test, None)?;
                        outcome.log.run_id = id.clone();
                        (outcome.log, outcome.params)
                    }
                };
                staged(&runs_dir.join(&id), |stage| {
                    metrics::export(&log, stage)?;
                    atomic_write(&stage.join(FINAL_PARAMS_FILE), &policy::encode_params(&params))
                })?;
                Ok(log)
            };
            let res = run();
            if let Err(e) = &res {
                log::error!("{name} seed {seed} failed: {e}");
            }
            (name, seed, res)
        })
        .collect();

    let mut results = Vec::new();
    let mut logs = BTreeMap::new();
    for (name, seed, res) in outcomes {
        match res {
            Ok(log) => {
                results.push(result_from_log(&name, seed, &log));
                logs.insert((name, seed), log);
            }
            Err(e) => results.push(RunResult {
                algorithm: name,
                seed,
                status: format!("failed: {e}"),
                precision: None,
                recall: None,
                f1: None,
                validation_score: None,
                response_length: None,
                steps: None,
                rollouts: None,
                promoted: None,
            }),
        }
    }
    let table = aggregate(&results);
    write_results_csv(&out.join("results.csv"), &results)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &table {
        w.serialize(r).map_err(|e| AparlError::corrupt(out, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| AparlError::corrupt(out, e.to_string()))?;
    atomic_write(&out.join("comparison.csv"), &bytes)?;
    atomic_write(&out.join("comparison.md"), render_table(&table).as_bytes())?;
    write_histograms(&out.join("pass1_hist.csv"), &logs)?;
    manifest.finished_at = Some(unix_time());
    write_json(&out.join(MANIFEST_FILE), &manifest)?;

    if let Some(row) = table.iter().find(|r| r.failed == r.runs) {
        return Err(AparlError::Numeric(format!("every {} run failed", row.algorithm)));
    }
    Ok(Comparison { results, table, logs })
}

/// Reloads a run exported by `compare` from `runs/{alg}-s{seed}/`.
pub fn load_compare_run(out: &Path, algorithm: &str, seed: u64) -> Result<MetricsLog> {
    let id = format!("{algorithm}-s{seed}");
    metrics::import(&out.join("runs").join(&id), &id, algorithm)
}

/// Loads the dataset meta written by `gen-data`.
pub fn load_meta(data_dir: &Path) -> Result<DatasetMeta> {
    let path = data_dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| AparlError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| AparlError::corrupt(&path, e.to_string()))
}
