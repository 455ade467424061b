//! Evaluation metrics and the run log.
//!
//! Exported files are named `{run_id}.{algorithm}.{metric}.{ext}`:
//!
//! * one `step,value` CSV per training curve (see [`STEP_CURVES`]) and per
//!   evaluation curve (see [`EVAL_CURVES`]);
//! * `eval-{step}.csv` with per-sample pass@1 and `hist-{step}.csv` with the
//!   pass@1 histogram for every evaluation snapshot;
//! * `summary.json` carrying the schema version, the evaluation table and
//!   per-class counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AparlError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn prf1(&self) -> (f64, f64, f64) {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    }
}

/// Micro-averaged confusion counts over every (sample, event) pair.
pub fn micro_confusion(predictions: &[BTreeSet<u32>], golds: &[BTreeSet<u32>]) -> Result<Confusion> {
    if predictions.len() != golds.len() {
        return Err(AparlError::Input(format!(
            "{} predictions for {} gold sets",
            predictions.len(),
            golds.len()
        )));
    }
    let mut c = Confusion::default();
    for (pred, gold) in predictions.iter().zip(golds) {
        let tp = pred.intersection(gold).count();
        c.tp += tp;
        c.fp += pred.len() - tp;
        c.fn_ += gold.len() - tp;
    }
    Ok(c)
}

pub fn micro_prf1(predictions: &[BTreeSet<u32>], golds: &[BTreeSet<u32>]) -> Result<(f64, f64, f64)> {
    Ok(micro_confusion(predictions, golds)?.prf1())
}

/// Confusion counts per event id.
pub fn per_class_confusion(
    predictions: &[BTreeSet<u32>],
    golds: &[BTreeSet<u32>],
    n_events: usize,
) -> Result<Vec<Confusion>> {
    if predictions.len() != golds.len() {
        return Err(AparlError::Input("predictions and golds differ in length".into()));
    }
    let mut out = vec![Confusion::default(); n_events];
    for (pred, gold) in predictions.iter().zip(golds) {
        for &e in pred.union(gold) {
            let Some(c) = out.get_mut(e as usize) else { continue };
            match (pred.contains(&e), gold.contains(&e)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(out)
}

/// Histogram of per-sample pass@1 values with dedicated spikes for exact 0
/// and exact 1; interior values fall in half-open bins `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pass1Histogram {
    pub edges: Vec<f64>,
    pub interior: Vec<usize>,
    pub zeros: usize,
    pub ones: usize,
    pub step: usize,
}

impl Pass1Histogram {
    pub fn total(&self) -> usize {
        self.zeros + self.ones + self.interior.iter().sum::<usize>()
    }
}

pub fn pass1_hist(values: &[f64], bins: usize, step: usize) -> Result<Pass1Histogram> {
    if bins == 0 {
        return Err(AparlError::Input("histogram needs at least one bin".into()));
    }
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut hist = Pass1Histogram {
        edges,
        interior: vec![0; bins],
        zeros: 0,
        ones: 0,
        step,
    };
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(AparlError::Input(format!("pass@1 value {v} outside [0, 1]")));
        }
        if v == 0.0 {
            hist.zeros += 1;
        } else if v == 1.0 {
            hist.ones += 1;
        } else {
            // Largest edge index with edge <= v.
            let bin = hist.edges.partition_point(|&e| e <= v) - 1;
            hist.interior[bin.min(bins - 1)] += 1;
        }
    }
    Ok(hist)
}

/// One optimizer-step (or skipped-step) record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub algorithm: String,
    /// Mean reward and response length over every rollout drawn this step
    /// (absent for supervised steps).
    pub mean_reward: Option<f64>,
    pub mean_response_len: Option<f64>,
    pub mu_p: Option<f64>,
    pub selected: usize,
    pub batches_assessed: usize,
    pub samples_assessed: usize,
    pub rollouts: usize,
    pub refill_rounds: usize,
    pub loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

/// One evaluation snapshot on the held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean reward of the greedy responses.
    pub validation_score: f64,
    pub mean_response_len: f64,
    pub format_rate: f64,
    pub per_class: Vec<Confusion>,
    /// Per-sample pass@1; exported to its own file, not the summary.
    #[serde(default)]
    pub pass1: Vec<f64>,
    #[serde(default)]
    pub histogram: Option<Pass1Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub schema_version: u32,
    pub run_id: String,
    pub algorithm: String,
    pub steps: Vec<StepRow>,
    pub evals: Vec<EvalRow>,
}

impl MetricsLog {
    pub fn new(run_id: impl Into<String>, algorithm: impl Into<String>) -> Self {
        MetricsLog {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.into(),
            algorithm: algorithm.into(),
            steps: Vec::new(),
            evals: Vec::new(),
        }
    }

    pub fn push_step(&mut self, row: StepRow) {
        debug_assert!(self.steps.last().is_none_or(|r| r.step < row.step));
        self.steps.push(row);
    }

    pub fn push_eval(&mut self, row: EvalRow) {
        debug_assert!(self.evals.last().is_none_or(|r| r.step < row.step));
        self.evals.push(row);
    }

    pub fn total_rollouts(&self) -> usize {
        self.steps.iter().map(|r| r.rollouts).sum()
    }

    pub fn last_eval(&self) -> Option<&EvalRow> {
        self.evals.last()
    }
}

type StepGetter = fn(&StepRow) -> Option<f64>;
type StepSetter = fn(&mut StepRow, f64);

/// Per-step curves: (metric name, getter, setter).
pub const STEP_CURVES: &[(&str, StepGetter, StepSetter)] = &[
    ("mean_reward", |r| r.mean_reward, |r, v| r.mean_reward = Some(v)),
    ("response_length", |r| r.mean_response_len, |r, v| r.mean_response_len = Some(v)),
    ("mu_p", |r| r.mu_p, |r, v| r.mu_p = Some(v)),
    ("selected", |r| Some(r.selected as f64), |r, v| r.selected = v as usize),
    ("batches_assessed", |r| Some(r.batches_assessed as f64), |r, v| r.batches_assessed = v as usize),
    ("samples_assessed", |r| Some(r.samples_assessed as f64), |r, v| r.samples_assessed = v as usize),
    ("rollouts", |r| Some(r.rollouts as f64), |r, v| r.rollouts = v as usize),
    ("refill_rounds", |r| Some(r.refill_rounds as f64), |r, v| r.refill_rounds = v as usize),
    ("loss", |r| Some(r.loss), |r, v| r.loss = v),
    ("kl", |r| Some(r.kl), |r, v| r.kl = v),
    ("clip_fraction", |r| Some(r.clip_fraction), |r, v| r.clip_fraction = v),
];

type EvalGetter = fn(&EvalRow) -> f64;

pub const EVAL_CURVES: &[(&str, EvalGetter)] = &[
    ("validation_score", |r| r.validation_score),
    ("precision", |r| r.precision),
    ("recall", |r| r.recall),
    ("f1", |r| r.f1),
    ("eval_response_length", |r| r.mean_response_len),
    ("format_rate", |r| r.format_rate),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Summary {
    schema_version: u32,
    run_id: String,
    algorithm: String,
    num_steps: usize,
    total_rollouts: usize,
    step_ids: Vec<usize>,
    evals: Vec<EvalRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurvePoint {
    step: usize,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Pass1Point {
    sample: usize,
    pass1: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HistBin {
    lo: f64,
    hi: f64,
    count: usize,
}

pub fn file_name(run_id: &str, algorithm: &str, metric: &str, ext: &str) -> String {
    format!("{run_id}.{algorithm}.{metric}.{ext}")
}

fn csv_err(path: &Path, e: csv::Error) -> AparlError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AparlError::io(path, io),
        other => AparlError::corrupt(path, format!("{other:?}")),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AparlError::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

/// Writes the log to `dir`, returning the paths written.
pub fn export(log: &MetricsLog, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| AparlError::io(dir, e))?;
    let name = |metric: &str, ext: &str| dir.join(file_name(&log.run_id, &log.algorithm, metric, ext));
    let mut written = Vec::new();

    if !log.steps.is_empty() {
        for (metric, get, _) in STEP_CURVES {
            let path = name(metric, "csv");
            write_csv(
                &path,
                log.steps
                    .iter()
                    .filter_map(|r| get(r).map(|value| CurvePoint { step: r.step, value })),
            )?;
            written.push(path);
        }
    }
    if !log.evals.is_empty() {
        for (metric, get) in EVAL_CURVES {
            let path = name(metric, "csv");
            write_csv(
                &path,
                log.evals.iter().map(|r| CurvePoint {
                    step: r.step,
                    value: get(r),
                }),
            )?;
            written.push(path);
        }
    }
    for row in &log.evals {
        let path = name(&format!("eval-{:06}", row.step), "csv");
        write_csv(
            &path,
            row.pass1
                .iter()
                .enumerate()
                .map(|(sample, &pass1)| Pass1Point { sample, pass1 }),
        )?;
        written.push(path);
        if let Some(h) = &row.histogram {
            let path = name(&format!("hist-{:06}", row.step), "csv");
            let mut bins = vec![HistBin {
                lo: 0.0,
                hi: 0.0,
                count: h.zeros,
            }];
            bins.extend(h.interior.iter().enumerate().map(|(i, &count)| HistBin {
                lo: h.edges[i],
                hi: h.edges[i + 1],
                count,
            }));
            bins.push(HistBin {
                lo: 1.0,
                hi: 1.0,
                count: h.ones,
            });
            write_csv(&path, bins)?;
            written.push(path);
        }
    }

    let summary = Summary {
        schema_version: log.schema_version,
        run_id: log.run_id.clone(),
        algorithm: log.algorithm.clone(),
        num_steps: log.steps.len(),
        total_rollouts: log.total_rollouts(),
        step_ids: log.steps.iter().map(|r| r.step).collect(),
        evals: log
            .evals
            .iter()
            .map(|r| EvalRow {
                pass1: Vec::new(),
                histogram: None,
                ..r.clone()
            })
            .collect(),
    };
    let path = name("summary", "json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(|e| AparlError::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Reads back a log written by [`export`].
pub fn import(dir: &Path, run_id: &str, algorithm: &str) -> Result<MetricsLog> {
    let name = |metric: &str, ext: &str| dir.join(file_name(run_id, algorithm, metric, ext));
    let path = name("summary", "json");
    let text = fs::read_to_string(&path).map_err(|e| AparlError::io(&path, e))?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| AparlError::corrupt(&path, e.to_string()))?;
    if summary.schema_version != SCHEMA_VERSION {
        return Err(AparlError::Version {
            found: summary.schema_version,
            expected: SCHEMA_VERSION,
        });
    }

    let mut rows: BTreeMap<usize, StepRow> = summary
        .step_ids
        .iter()
        .map(|&step| {
            (
                step,
                StepRow {
                    step,
                    algorithm: summary.algorithm.clone(),
                    mean_reward: None,
                    mean_response_len: None,
                    mu_p: None,
                    selected: 0,
                    batches_assessed: 0,
                    samples_assessed: 0,
                    rollouts: 0,
                    refill_rounds: 0,
                    loss: 0.0,
                    kl: 0.0,
                    clip_fraction: 0.0,
                },
            )
        })
        .collect();
    if !rows.is_empty() {
        for (metric, _, set) in STEP_CURVES {
            let path = name(metric, "csv");
            for point in read_csv::<CurvePoint>(&path)? {
                let row = rows.get_mut(&point.step).ok_or_else(|| {
                    AparlError::corrupt(&path, format!("unknown step {}", point.step))
                })?;
                set(row, point.value);
            }
        }
    }

    let mut evals = summary.evals;
    for row in &mut evals {
        let path = name(&format!("eval-{:06}", row.step), "csv");
        row.pass1 = read_csv::<Pass1Point>(&path)?
            .into_iter()
            .map(|p| p.pass1)
            .collect();
        let path = name(&format!("hist-{:06}", row.step), "csv");
        if path.exists() {
            let bins = read_csv::<HistBin>(&path)?;
            if bins.len() < 3 {
                return Err(AparlError::corrupt(&path, "histogram needs spike bins"));
            }
            let interior = &bins[1..bins.len() - 1];
            let mut edges: Vec<f64> = interior.iter().map(|b| b.lo).collect();
            edges.push(interior.last().map_or(1.0, |b| b.hi));
            row.histogram = Some(Pass1Histogram {
                edges,
                interior: interior.iter().map(|b| b.count).collect(),
                zeros: bins[0].count,
                ones: bins[bins.len() - 1].count,
                step: row.step,
            });
        }
    }

    Ok(MetricsLog {
        schema_version: summary.schema_version,
        run_id: summary.run_id,
        algorithm: summary.algorithm,
        steps: rows.into_values().collect(),
        evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    #[test]
    fn prf1_examples() {
        let golds = vec![set(&[1]), set(&[2, 3])];
        assert_eq!(micro_prf1(&golds, &golds).unwrap(), (1.0, 1.0, 1.0));
        let (p, r, f) = micro_prf1(&[set(&[1]), set(&[2])], &[set(&[1]), set(&[3])]).unwrap();
        assert_eq!((p, r, f), (0.5, 0.5, 0.5));
        let (p, r, f) = micro_prf1(&[set(&[1, 2])], &[set(&[2, 3])]).unwrap();
        assert_eq!((p, r, f), (0.5, 0.5, 0.5));
        assert_eq!(
            micro_prf1(&[set(&[]), set(&[])], &golds).unwrap(),
            (0.0, 0.0, 0.0)
        );
        assert!(micro_prf1(&[set(&[])], &golds).is_err());
    }

    #[test]
    fn per_class_counts_sum_to_micro() {
        let preds = vec![set(&[1, 2]), set(&[4]), set(&[])];
        let golds = vec![set(&[2, 3]), set(&[4]), set(&[0])];
        let micro = micro_confusion(&preds, &golds).unwrap();
        let per = per_class_confusion(&preds, &golds, 5).unwrap();
        assert_eq!(per.iter().map(|c| c.tp).sum::<usize>(), micro.tp);
        assert_eq!(per.iter().map(|c| c.fp).sum::<usize>(), micro.fp);
        assert_eq!(per.iter().map(|c| c.fn_).sum::<usize>(), micro.fn_);
        assert_eq!(per[2], Confusion { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn histogram_spikes_and_edges() {
        let h = pass1_hist(&[0.0, 0.0, 1.0], 10, 0).unwrap();
        assert_eq!((h.zeros, h.ones), (2, 1));
        assert!(h.interior.iter().all(|&c| c == 0));
        let h = pass1_hist(&[0.999], 10, 0).unwrap();
        assert_eq!(h.interior[9], 1);
        assert_eq!(h.ones, 0);
        let h = pass1_hist(&[0.1, 0.125], 10, 0).unwrap();
        assert_eq!(h.interior[1], 2);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        assert!(pass1_hist(&[1.5], 10, 0).is_err());
    }

    #[test]
    fn uniform_values_fill_bins_evenly() {
        // 10k evenly spread values in (0, 1).
        let values: Vec<f64> = (0..10_000).map(|i| (i as f64 + 0.5) / 10_000.0).collect();
        let h = pass1_hist(&values, 10, 0).unwrap();
        let mean = 1000.0;
        for &c in &h.interior {
            assert!((c as f64 - mean).abs() / mean <= 0.05);
        }
    }

    fn sample_log() -> MetricsLog {
        let mut log = MetricsLog::new("run7", "aparl");
        for step in 1..=3 {
            log.push_step(StepRow {
                step,
                algorithm: "aparl".into(),
                mean_reward: Some(0.1 * step as f64 + 1e-13),
                mean_response_len: (step != 3).then_some(5.25),
                mu_p: if step == 2 { None } else { Some(1.0 / 3.0) },
                selected: 17,
                batches_assessed: 2,
                samples_assessed: 128,
                rollouts: 1024,
                refill_rounds: 1,
                loss: -0.123456789012345,
                kl: 1e-9,
                clip_fraction: 0.01,
            });
        }
        let pass1 = vec![0.0, 0.125, 1.0, 0.5];
        log.push_eval(EvalRow {
            step: 3,
            precision: 0.7,
            recall: 2.0 / 3.0,
            f1: 0.6829268292682927,
            validation_score: 0.1,
            mean_response_len: 4.0,
            format_rate: 0.9,
            per_class: vec![Confusion { tp: 1, fp: 2, fn_: 3 }],
            histogram: Some(pass1_hist(&pass1, 10, 3).unwrap()),
            pass1,
        });
        log
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = sample_log();
        export(&log, dir.path()).unwrap();
        let back = import(dir.path(), "run7", "aparl").unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn empty_log_writes_summary_only() {
        let dir = tempfile::tempdir().unwrap();
        let log = MetricsLog::new("r", "grpo");
        let files = export(&log, dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        assert!(files[0].ends_with("r.grpo.summary.json"));
        assert_eq!(import(dir.path(), "r", "grpo").unwrap(), log);
    }

    #[test]
    fn algorithms_do_not_overwrite_each_other() {
        let dir = tempfile::tempdir().unwrap();
        let a = sample_log();
        let mut b = sample_log();
        b.algorithm = "dapo".into();
        b.steps[0].mean_reward = Some(42.0);
        let fa = export(&a, dir.path()).unwrap();
        let fb = export(&b, dir.path()).unwrap();
        assert!(fa.iter().all(|p| !fb.contains(p)));
        assert_eq!(import(dir.path(), "run7", "aparl").unwrap(), a);
        assert_eq!(import(dir.path(), "run7", "dapo").unwrap().steps[0].mean_reward, Some(42.0));
    }

    proptest! {
        #[test]
        fn f1_bounds(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let (p, r, f1) = Confusion { tp, fp, fn_ }.prf1();
            prop_assert!(f1 <= (p + r) / 2.0 + 1e-15);
            prop_assert!(f1 <= p.max(r) + 1e-15);
            prop_assert!((0.0..=1.0).contains(&f1));
            if p + r > 0.0 {
                let (lo, hi) = (p.min(r), p.max(r));
                prop_assert!((f1 - 2.0 * lo * hi / (lo + hi)).abs() <= 1e-15);
            }
        }

        #[test]
        fn histogram_conserves_mass(values in proptest::collection::vec(
            prop_oneof![Just(0.0), Just(1.0), 0.0f64..1.0], 0..200)) {
            let h = pass1_hist(&values, 10, 0).unwrap();
            prop_assert_eq!(h.total(), values.len());
        }
    }
}
