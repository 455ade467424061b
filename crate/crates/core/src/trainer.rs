//! Dual-loop training driver and the baseline variants.
//!
//! Each training step for the RL variants is
//!
//! 1. assess a mini-batch from the epoch stream with G rollouts per prompt,
//! 2. filter it (APARL: proficiency-aware Bernoulli; DAPO: `p ∉ {0,1}`;
//!    GRPO: keep all) and refill from the following mini-batches,
//! 3. normalise rewards within each group and take one optimizer step per
//!    `ppo_mini_batch_size` groups, with π_old fixed to the policy that drew
//!    the rollouts.
//!
//! SFT minimises token-level cross-entropy on the formatted gold answers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, RunConfig};
use crate::error::{AparlError, Result};
use crate::inner_rl::{
    aggregate_loss, optimizer_step, Group, GroupTerms, OptimizerState, RLConfig, RolloutLogProbs,
};
use crate::metrics::{self, EvalRow, MetricsLog, StepRow};
use crate::outer_sampler::{filter_batch, refill, BatchAssessment, BatchStream, SelectionRule};
use crate::policy::{
    self, init_policy, sample_response, Decoding, PolicyParams, Rollout, Trace,
};
use crate::reward::{format_answer, is_correct, parse_response, score, RewardConfig};
use crate::seeding::{self, Purpose};
use crate::task_env::{generate_samples, Sample};
use crate::vocab::{TokenId, Vocab};

/// Ids of the warm-start pool start here, far from train/test ids.
pub const BASE_POOL_ID_OFFSET: u64 = 1 << 40;

/// Draws and scores rollouts with per-rollout random streams.
#[derive(Debug, Clone)]
pub struct RolloutEngine {
    pub vocab: Vocab,
    pub reward: RewardConfig,
    pub decoding: Decoding,
    pub max_len: usize,
    pub seed: u64,
}

impl RolloutEngine {
    pub fn from_config(cfg: &RunConfig) -> Self {
        RolloutEngine {
            vocab: cfg.data.vocab,
            reward: cfg.reward,
            decoding: Decoding::Sample {
                temperature: cfg.train.temperature,
            },
            max_len: cfg.train.max_len,
            seed: cfg.train.seed,
        }
    }

    /// Scores `rollout` against `gold`, filling its parse and reward.
    pub fn score(&self, rollout: &mut Rollout, sample: &Sample) -> bool {
        let parse = parse_response(&rollout.response, &self.vocab);
        rollout.reward = score(&parse, &sample.gold, &self.reward);
        let correct = is_correct(&parse, &sample.gold);
        rollout.parse = Some(parse);
        correct
    }

    /// `k` scored rollouts; rollout `j` uses the stream `(purpose, coords.., j)`.
    pub fn rollouts(
        &self,
        params: &PolicyParams,
        sample: &Sample,
        k: usize,
        purpose: Purpose,
        coords: &[u64],
    ) -> Result<(Vec<Rollout>, Vec<bool>)> {
        let mut rollouts = Vec::with_capacity(k);
        let mut correct = Vec::with_capacity(k);
        let mut key = coords.to_vec();
        key.push(sample.id);
        key.push(0);
        for j in 0..k {
            *key.last_mut().unwrap() = j as u64;
            let mut rng = seeding::stream(self.seed, purpose, &key);
            let mut r = sample_response(params, sample.id, &sample.prompt, self.decoding, self.max_len, &mut rng)?;
            correct.push(self.score(&mut r, sample));
            rollouts.push(r);
        }
        Ok((rollouts, correct))
    }

    /// Monte Carlo proficiency of every sample in `batch`, `k` rollouts each.
    pub fn assess(
        &self,
        params: &PolicyParams,
        batch: &[&Sample],
        k: usize,
        round: u64,
        step: usize,
    ) -> Result<BatchAssessment> {
        if k < 2 {
            return Err(AparlError::Input("assessment needs k >= 2".into()));
        }
        let drawn: Vec<(Vec<Rollout>, Vec<bool>)> = batch
            .par_iter()
            .map(|s| self.rollouts(params, s, k, Purpose::Rollout, &[round]))
            .collect::<Result<_>>()?;
        let ids: Vec<u64> = batch.iter().map(|s| s.id).collect();
        let (rollouts, correct): (Vec<_>, Vec<_>) = drawn.into_iter().unzip();
        BatchAssessment::from_rollouts(&ids, rollouts, &correct, step)
    }
}

/// Held-out evaluation: greedy responses for P/R/F1, validation score and
/// length; `k_eval` sampled responses per item for pass@1.
pub fn evaluate(params: &PolicyParams, test: &[Sample], cfg: &RunConfig, step: usize) -> Result<EvalRow> {
    if test.is_empty() {
        return Err(AparlError::Input("evaluation set is empty".into()));
    }
    let engine = RolloutEngine::from_config(cfg);
    let greedy = RolloutEngine {
        decoding: Decoding::Greedy,
        ..engine.clone()
    };
    let k_eval = cfg.train.k_eval;
    let per_sample: Vec<(Rollout, f64)> = test
        .par_iter()
        .map(|s| {
            let mut rng = seeding::stream(engine.seed, Purpose::Eval, &[step as u64, s.id]);
            let mut r = sample_response(params, s.id, &s.prompt, Decoding::Greedy, greedy.max_len, &mut rng)?;
            greedy.score(&mut r, s);
            let (_, correct) = engine.rollouts(params, s, k_eval, Purpose::Eval, &[step as u64])?;
            let pass1 = correct.iter().filter(|&&c| c).count() as f64 / k_eval as f64;
            Ok((r, pass1))
        })
        .collect::<Result<_>>()?;

    let predictions: Vec<_> = per_sample
        .iter()
        .map(|(r, _)| r.parse.as_ref().map(|p| p.predicted.clone()).unwrap_or_default())
        .collect();
    let golds: Vec<_> = test.iter().map(|s| s.gold.clone()).collect();
    let (precision, recall, f1) = metrics::micro_prf1(&predictions, &golds)?;
    let per_class = metrics::per_class_confusion(&predictions, &golds, cfg.data.vocab.n_events as usize)?;
    let n = test.len() as f64;
    let pass1: Vec<f64> = per_sample.iter().map(|(_, p)| *p).collect();
    let histogram = metrics::pass1_hist(&pass1, cfg.train.hist_bins, step)?;
    Ok(EvalRow {
        step,
        precision,
        recall,
        f1,
        validation_score: per_sample.iter().map(|(r, _)| r.reward).sum::<f64>() / n,
        mean_response_len: per_sample.iter().map(|(r, _)| r.len() as f64).sum::<f64>() / n,
        format_rate: per_sample
            .iter()
            .filter(|(r, _)| r.parse.as_ref().is_some_and(|p| p.is_well_formed()))
            .count() as f64
            / n,
        per_class,
        pass1,
        histogram: Some(histogram),
    })
}

/// Mean token negative log-likelihood of `response` and its gradient.
pub fn sft_loss(params: &PolicyParams, prompt: &[TokenId], response: &[TokenId]) -> Result<(f64, Vec<f64>)> {
    if response.is_empty() {
        return Err(AparlError::Input("supervised target must not be empty".into()));
    }
    let trace = Trace::new(params, prompt, response)?;
    let n = response.len() as f64;
    let loss = -trace.logps().iter().sum::<f64>() / n;
    let mut grad = vec![0.0; params.len()];
    trace.backward(params, &vec![-1.0 / n; response.len()], &mut grad)?;
    Ok((loss, grad))
}

/// Mean SFT loss and gradient over a batch, reduced in a fixed order.
fn sft_batch(params: &PolicyParams, batch: &[(&[TokenId], Vec<TokenId>)]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|(prompt, target)| sft_loss(params, prompt, target))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l * scale;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b * scale;
        }
    }
    Ok((loss, grad))
}

/// The shared starting policy: random initialisation followed by the
/// supervised warm start described by `cfg.base`.
pub fn base_policy(cfg: &RunConfig) -> Result<PolicyParams> {
    let arch = cfg.arch()?;
    let seed = cfg.train.seed;
    let mut params = init_policy(arch, seed);
    let base = &cfg.base;
    if base.pretrain_steps == 0 || base.pretrain_samples == 0 {
        return Ok(params);
    }
    let pool = generate_samples(
        &cfg.data,
        BASE_POOL_ID_OFFSET..BASE_POOL_ID_OFFSET + base.pretrain_samples as u64,
    )?;
    let vocab = cfg.data.vocab;
    let targets: Vec<Vec<TokenId>> = pool
        .iter()
        .map(|s| {
            let mut rng = seeding::stream(seed, Purpose::Pretrain, &[s.id]);
            let n = rng.gen_range(0..=base.max_reasoning_len);
            let mut t: Vec<TokenId> = (0..n)
                .map(|_| vocab.filler(rng.gen_range(0..vocab.n_fillers)))
                .collect();
            t.extend(format_answer(&s.gold, &vocab));
            t
        })
        .collect();
    let rl = RLConfig {
        lr: base.lr,
        ..RLConfig::default()
    };
    let mut opt = OptimizerState::new(params.len());
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    for _ in 0..base.pretrain_steps {
        if order.len() < base.batch_size {
            let mut next: Vec<usize> = (0..pool.len()).collect();
            next.shuffle(&mut seeding::stream(seed, Purpose::Pretrain, &[u64::MAX, epoch]));
            epoch += 1;
            order.extend(next);
        }
        let take = base.batch_size.min(order.len());
        let batch: Vec<(&[TokenId], Vec<TokenId>)> = order
            .drain(..take)
            .map(|i| (pool[i].prompt.as_slice(), targets[i].clone()))
            .collect();
        let (_, grad) = sft_batch(&params, &batch)?;
        optimizer_step(&mut params, &grad, &rl, &mut opt)?;
    }
    Ok(params)
}

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub params: PolicyParams,
    /// KL anchor π_ref.
    pub reference: PolicyParams,
    pub optimizer: OptimizerState,
    /// Completed training steps.
    pub step: usize,
    pub epoch: usize,
    /// Remaining order of the current epoch; `None` at an epoch boundary.
    pub stream: Option<BatchStream>,
    /// Assessment passes so far; keys the rollout random streams.
    pub round: u64,
    pub optimizer_steps: u64,
    pub log: MetricsLog,
}

impl TrainerState {
    pub fn new(params: PolicyParams, run_id: &str, algorithm: Algorithm) -> Self {
        TrainerState {
            reference: params.clone(),
            optimizer: OptimizerState::new(params.len()),
            params,
            step: 0,
            epoch: 0,
            stream: None,
            round: 0,
            optimizer_steps: 0,
            log: MetricsLog::new(run_id, algorithm.as_str()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: MetricsLog,
    pub checkpoints: Vec<PathBuf>,
    /// State as of the last step, before the closing evaluation.
    pub state: TrainerState,
}

#[derive(Debug, Default)]
struct UpdateStats {
    loss: f64,
    kl: f64,
    clip_fraction: f64,
    minibatches: usize,
}

pub struct Trainer<'a> {
    cfg: &'a RunConfig,
    train: &'a [Sample],
    test: &'a [Sample],
    engine: RolloutEngine,
    rl: RLConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig, train: &'a [Sample], test: &'a [Sample]) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || test.is_empty() {
            return Err(AparlError::Input("training and test sets must be non-empty".into()));
        }
        let v = cfg.data.vocab.size();
        for s in train.iter().chain(test) {
            if let Some(t) = s.prompt.iter().find(|&&t| t as usize >= v) {
                return Err(AparlError::Shape(format!(
                    "sample {} has token {t} outside the vocabulary of size {v}",
                    s.id
                )));
            }
        }
        let rl = match cfg.train.algorithm {
            Algorithm::Sft => RLConfig {
                lr: cfg.sft.lr,
                ..cfg.rl.clone()
            },
            _ => cfg.effective_rl(),
        };
        Ok(Trainer {
            cfg,
            train,
            test,
            engine: RolloutEngine::from_config(cfg),
            rl,
        })
    }

    pub fn rl_config(&self) -> &RLConfig {
        &self.rl
    }

    fn epochs(&self) -> usize {
        match self.cfg.train.algorithm {
            Algorithm::Sft => self.cfg.sft.epochs,
            _ => self.cfg.train.epochs,
        }
    }

    fn epoch_order(&self, epoch: usize) -> BatchStream {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut seeding::stream(self.cfg.train.seed, Purpose::Shuffle, &[epoch as u64]));
        BatchStream::new(order)
    }

    fn step_limit_reached(&self, state: &TrainerState) -> bool {
        self.cfg.train.max_steps > 0 && state.step >= self.cfg.train.max_steps
    }

    /// Runs from `state` to the end of the schedule (or `max_steps`).
    /// Checkpoints go to `ckpt_dir` every `checkpoint_every` steps and once
    /// at the end.
    pub fn run(&self, mut state: TrainerState, ckpt_dir: Option<&Path>) -> Result<TrainOutcome> {
        let mut checkpoints = Vec::new();
        if state.step == 0 && state.log.evals.is_empty() {
            let row = evaluate(&state.params, self.test, self.cfg, 0)?;
            state.log.push_eval(row);
        }
        let every = self.cfg.train.checkpoint_every;
        while state.epoch < self.epochs() && !self.step_limit_reached(&state) {
            let stream = state.stream.get_or_insert_with(|| {
                let epoch = state.epoch;
                self.epoch_order(epoch)
            });
            if stream.is_empty() {
                state.epoch += 1;
                state.stream = None;
                continue;
            }
            let row = match self.cfg.train.algorithm {
                Algorithm::Sft => self.sft_step(&mut state)?,
                _ => self.rl_step(&mut state)?,
            };
            state.step += 1;
            state.log.push_step(StepRow {
                step: state.step,
                ..row
            });
            if state.step.is_multiple_of(self.cfg.train.eval_every) {
                let row = evaluate(&state.params, self.test, self.cfg, state.step)?;
                state.log.push_eval(row);
            }
            if let Some(dir) = ckpt_dir {
                if every > 0 && state.step.is_multiple_of(every) {
                    checkpoints.push(save_checkpoint(dir, &state)?);
                }
            }
        }
        if let Some(dir) = ckpt_dir {
            if every == 0 || !state.step.is_multiple_of(every) {
                checkpoints.push(save_checkpoint(dir, &state)?);
            }
        }
        let snapshot = state.clone();
        if state.log.evals.last().is_none_or(|e| e.step != state.step) {
            let row = evaluate(&state.params, self.test, self.cfg, state.step)?;
            state.log.push_eval(row);
        }
        Ok(TrainOutcome {
            params: state.params,
            log: state.log,
            checkpoints,
            state: snapshot,
        })
    }

    fn sft_step(&self, state: &mut TrainerState) -> Result<StepRow> {
        let vocab = self.cfg.data.vocab;
        let stream = state.stream.as_mut().expect("stream initialised");
        let indices = stream.next_batch(self.cfg.sft.batch_size);
        let batch: Vec<(&[TokenId], Vec<TokenId>)> = indices
            .iter()
            .map(|&i| {
                let s = &self.train[i];
                (s.prompt.as_slice(), format_answer(&s.gold, &vocab))
            })
            .collect();
        let (loss, grad) = sft_batch(&state.params, &batch)?;
        if !loss.is_finite() {
            return Err(AparlError::Numeric(format!("non-finite SFT loss at step {}", state.step + 1)));
        }
        optimizer_step(&mut state.params, &grad, &self.rl, &mut state.optimizer)?;
        state.optimizer_steps += 1;
        Ok(StepRow {
            step: 0,
            algorithm: Algorithm::Sft.to_string(),
            mean_reward: None,
            mean_response_len: None,
            mu_p: None,
            selected: indices.len(),
            batches_assessed: 1,
            samples_assessed: indices.len(),
            rollouts: 0,
            refill_rounds: 0,
            loss,
            kl: 0.0,
            clip_fraction: 0.0,
        })
    }

    fn rl_step(&self, state: &mut TrainerState) -> Result<StepRow> {
        let tc = &self.cfg.train;
        let k = tc.group_size;
        let rule = self.cfg.selection_rule(state.step);
        let params = &state.params;
        let seed = tc.seed;
        let step = state.step;
        let round = std::cell::Cell::new(state.round);
        let mut reward_sum = 0.0;
        let mut len_sum = 0usize;
        let max_refill = match rule {
            SelectionRule::All => 0,
            _ => self.cfg.sampler.max_refill_rounds,
        };
        let stream = state.stream.as_mut().expect("stream initialised");
        let collected = refill(
            stream,
            tc.data_train_batch_size,
            tc.data_train_batch_size,
            max_refill,
            |indices| {
                let batch: Vec<&Sample> = indices.iter().map(|&i| &self.train[i]).collect();
                let a = self.engine.assess(params, &batch, k, round.get(), step)?;
                for r in a.rollouts.iter().flatten() {
                    reward_sum += r.reward;
                    len_sum += r.len();
                }
                round.set(round.get() + 1);
                Ok(a)
            },
            |a| {
                let mut rng = seeding::stream(seed, Purpose::Filter, &[round.get() - 1]);
                filter_batch(a, rule, &mut rng)
            },
        )?;
        state.round = round.get();

        let mut groups = Vec::with_capacity(collected.selected.len());
        for sel in collected.selected.iter() {
            let sample = &self.train[sel.index];
            let rollouts = if self.cfg.sampler.fresh_group_rollouts && rule != SelectionRule::All {
                self.engine
                    .rollouts(&state.params, sample, k, Purpose::Refresh, &[state.round])?
                    .0
            } else {
                sel.rollouts.clone()
            };
            groups.push((sel.index, Group::new(sample.id, rollouts)?));
        }
        let stats = if groups.is_empty() {
            UpdateStats::default()
        } else {
            self.update(state, &groups)?
        };

        let n_rollouts = collected.rollouts_consumed;
        let denom = |x: usize| if x == 0 { 1.0 } else { x as f64 };
        Ok(StepRow {
            step: 0,
            algorithm: tc.algorithm.to_string(),
            mean_reward: (n_rollouts > 0).then(|| reward_sum / n_rollouts as f64),
            mean_response_len: (n_rollouts > 0).then(|| len_sum as f64 / n_rollouts as f64),
            mu_p: collected.mu_p(),
            selected: groups.len(),
            batches_assessed: collected.batches_assessed,
            samples_assessed: collected.samples_assessed,
            rollouts: n_rollouts,
            refill_rounds: collected.refill_rounds,
            loss: stats.loss / denom(stats.minibatches),
            kl: stats.kl / denom(stats.minibatches),
            clip_fraction: stats.clip_fraction / denom(stats.minibatches),
        })
    }

    /// Inner loop over the collected groups. π_old is the policy that drew
    /// the rollouts, so the recorded `logp_old` values are used as-is.
    fn update(&self, state: &mut TrainerState, groups: &[(usize, Group)]) -> Result<UpdateStats> {
        let mut stats = UpdateStats::default();
        let mini = self.cfg.train.ppo_mini_batch_size;
        for _ in 0..self.rl.inner_epochs {
            for chunk in groups.chunks(mini) {
                let (loss, kl, clip) = self.minibatch_step(state, chunk)?;
                stats.loss += loss;
                stats.kl += kl;
                stats.clip_fraction += clip;
                stats.minibatches += 1;
                state.optimizer_steps += 1;
                let refresh = self.rl.ref_refresh_every;
                if refresh > 0 && state.optimizer_steps.is_multiple_of(refresh as u64) {
                    state.reference = state.params.clone();
                }
            }
        }
        Ok(stats)
    }

    fn minibatch_step(&self, state: &mut TrainerState, chunk: &[(usize, Group)]) -> Result<(f64, f64, f64)> {
        let params = &state.params;
        let reference = &state.reference;
        let traced: Vec<(Vec<Trace>, GroupTerms)> = chunk
            .par_iter()
            .map(|(idx, group)| {
                let prompt = &self.train[*idx].prompt;
                let mut traces = Vec::with_capacity(group.rollouts.len());
                let mut logps = Vec::with_capacity(group.rollouts.len());
                for r in &group.rollouts {
                    let trace = Trace::new(params, prompt, &r.response)?;
                    let reference = policy::log_prob(reference, prompt, &r.response)?;
                    logps.push(RolloutLogProbs {
                        old: r.logp_old.clone(),
                        new: trace.logps().to_vec(),
                        reference,
                    });
                    traces.push(trace);
                }
                Ok((
                    traces,
                    GroupTerms {
                        advantages: group.advantages.clone(),
                        rollouts: logps,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        let terms: Vec<GroupTerms> = traced.iter().map(|(_, t)| t.clone()).collect();
        let out = aggregate_loss(&terms, &self.rl)?;
        if !out.loss.is_finite() {
            return Err(AparlError::Numeric(format!(
                "non-finite loss at step {}",
                state.step + 1
            )));
        }
        let partial: Vec<Vec<f64>> = traced
            .par_iter()
            .zip(&out.weights)
            .map(|((traces, _), weights)| {
                let mut g = vec![0.0; params.len()];
                for (trace, w) in traces.iter().zip(weights) {
                    trace.backward(params, w, &mut g)?;
                }
                Ok(g)
            })
            .collect::<Result<_>>()?;
        let mut grad = vec![0.0; params.len()];
        for g in &partial {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        optimizer_step(&mut state.params, &grad, &self.rl, &mut state.optimizer)?;
        Ok((out.loss, out.mean_kl, out.clip_fraction))
    }
}

/// Builds the base policy and trains it under `cfg.train.algorithm`.
pub fn train(cfg: &RunConfig, train: &[Sample], test: &[Sample], ckpt_dir: Option<&Path>) -> Result<TrainOutcome> {
    let base = base_policy(cfg)?;
    train_from(cfg, train, test, base, ckpt_dir)
}

pub fn train_from(
    cfg: &RunConfig,
    train: &[Sample],
    test: &[Sample],
    params: PolicyParams,
    ckpt_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let trainer = Trainer::new(cfg, train, test)?;
    let state = TrainerState::new(params, &run_id(cfg), cfg.train.algorithm);
    trainer.run(state, ckpt_dir)
}

/// Deterministic run identifier used in exported file names.
pub fn run_id(cfg: &RunConfig) -> String {
    format!("{}-s{}", cfg.train.run_name, cfg.train.seed)
}

const TRAINER_MAGIC: &[u8; 8] = b"APRLTRN\0";
pub const TRAINER_CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    step: usize,
    epoch: usize,
    stream: Option<BatchStream>,
    round: u64,
    optimizer_steps: u64,
    adam_step: u64,
    log: MetricsLog,
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_f64s(bytes: &[u8], at: &mut usize, path: &Path) -> Result<Vec<f64>> {
    if bytes.len() < *at + 8 {
        return Err(AparlError::corrupt(path, "truncated vector header"));
    }
    let n = policy::read_u64(bytes, *at) as usize;
    *at += 8;
    let end = n.checked_mul(8).and_then(|b| b.checked_add(*at));
    let Some(end) = end.filter(|&e| e <= bytes.len()) else {
        return Err(AparlError::corrupt(path, "truncated vector"));
    };
    let out = bytes[*at..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *at = end;
    Ok(out)
}

/// Layout: magic, version (u32), metadata length (u64), JSON metadata,
/// then the current and reference parameter blocks (policy checkpoint
/// encoding) and the Adam moments as length-prefixed little-endian f64.
pub fn encode_checkpoint(state: &TrainerState) -> Vec<u8> {
    let meta = CheckpointMeta {
        step: state.step,
        epoch: state.epoch,
        stream: state.stream.clone(),
        round: state.round,
        optimizer_steps: state.optimizer_steps,
        adam_step: state.optimizer.step,
        log: state.log.clone(),
    };
    let json = serde_json::to_vec(&meta).expect("checkpoint metadata serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(TRAINER_MAGIC);
    buf.extend_from_slice(&TRAINER_CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&policy::encode_params(&state.params));
    buf.extend_from_slice(&policy::encode_params(&state.reference));
    push_f64s(&mut buf, &state.optimizer.m);
    push_f64s(&mut buf, &state.optimizer.v);
    buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainerState> {
    if bytes.len() < 20 || &bytes[..8] != TRAINER_MAGIC {
        return Err(AparlError::corrupt(path, "not a trainer checkpoint"));
    }
    let version = policy::read_u32(bytes, 8);
    if version != TRAINER_CHECKPOINT_VERSION {
        return Err(AparlError::Version {
            found: version,
            expected: TRAINER_CHECKPOINT_VERSION,
        });
    }
    let json_len = policy::read_u64(bytes, 12) as usize;
    let mut at = 20usize;
    let json_end = at.checked_add(json_len).filter(|&e| e <= bytes.len());
    let Some(json_end) = json_end else {
        return Err(AparlError::corrupt(path, "truncated metadata"));
    };
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[at..json_end])
        .map_err(|e| AparlError::corrupt(path, e.to_string()))?;
    at = json_end;
    let (params, used) = policy::decode_params(&bytes[at..], path)?;
    at += used;
    let (reference, used) = policy::decode_params(&bytes[at..], path)?;
    at += used;
    let m = take_f64s(bytes, &mut at, path)?;
    let v = take_f64s(bytes, &mut at, path)?;
    if at != bytes.len() {
        return Err(AparlError::corrupt(path, "trailing bytes"));
    }
    if reference.arch != params.arch || m.len() != params.len() || v.len() != params.len() {
        return Err(AparlError::corrupt(path, "inconsistent tensor shapes"));
    }
    Ok(TrainerState {
        params,
        reference,
        optimizer: OptimizerState {
            step: meta.adam_step,
            m,
            v,
        },
        step: meta.step,
        epoch: meta.epoch,
        stream: meta.stream,
        round: meta.round,
        optimizer_steps: meta.optimizer_steps,
        log: meta.log,
    })
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt-{step:06}.bin"))
}

pub fn save_checkpoint(dir: &Path, state: &TrainerState) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| AparlError::io(dir, e))?;
    let path = checkpoint_path(dir, state.step);
    fs::write(&path, encode_checkpoint(state)).map_err(|e| AparlError::io(&path, e))?;
    Ok(path)
}

pub fn restore(path: &Path) -> Result<TrainerState> {
    let bytes = fs::read(path).map_err(|e| AparlError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
