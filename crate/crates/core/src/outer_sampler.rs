//! Outer loop: per-sample proficiency from Monte Carlo rollouts, the
//! proficiency-aware acceptance probability, Bernoulli filtering and refill
//! from subsequent mini-batches.
//!
//! The acceptance probability of a sample with success rate `p` in a batch
//! with mean success rate `μ` is
//!
//! ```text
//! P(p) = (p / (μ + ε))^(t μ) · ((1 - p) / (1 - μ + ε))^(t (1 - μ))
//! ```
//!
//! which vanishes at `p ∈ {0, 1}` and peaks at `p = μ`.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AparlError, Result};
use crate::policy::Rollout;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SharpnessSchedule {
    Constant,
    /// Linear ramp from `t` at step 0 to `t_end` at `over_steps`, constant after.
    Linear { t_end: f64, over_steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Sharpness exponent `t`.
    pub t: f64,
    pub eps: f64,
    pub max_refill_rounds: usize,
    pub schedule: SharpnessSchedule,
    /// Draw a new set of G rollouts for training instead of reusing the
    /// assessment rollouts.
    pub fresh_group_rollouts: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            t: 0.1,
            eps: 1e-8,
            max_refill_rounds: 8,
            schedule: SharpnessSchedule::Constant,
            fresh_group_rollouts: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) || !(self.eps > 0.0) {
            return Err(AparlError::Config("sampler t and eps must be positive".into()));
        }
        if let SharpnessSchedule::Linear { t_end, .. } = self.schedule {
            if !(t_end > 0.0 && t_end.is_finite()) {
                return Err(AparlError::Config("schedule t_end must be positive".into()));
            }
        }
        Ok(())
    }

    /// Sharpness in effect at `step`.
    pub fn sharpness_at(&self, step: usize) -> f64 {
        match self.schedule {
            SharpnessSchedule::Constant => self.t,
            SharpnessSchedule::Linear { t_end, over_steps } => {
                if over_steps == 0 || step >= over_steps {
                    t_end
                } else {
                    self.t + (t_end - self.t) * step as f64 / over_steps as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProficiencyRecord {
    pub sample_id: u64,
    /// Empirical success rate over `k` rollouts.
    pub p: f64,
    pub correct: usize,
    pub k: usize,
    pub step: usize,
}

/// Proficiency of every sample in one assessed mini-batch, plus the
/// rollouts that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchAssessment {
    pub records: Vec<ProficiencyRecord>,
    pub mu_p: f64,
    /// `rollouts[i]` belongs to `records[i]`.
    pub rollouts: Vec<Vec<Rollout>>,
}

impl BatchAssessment {
    /// Builds an assessment from per-sample scored rollouts and correctness flags.
    pub fn from_rollouts(
        sample_ids: &[u64],
        rollouts: Vec<Vec<Rollout>>,
        correct: &[Vec<bool>],
        step: usize,
    ) -> Result<Self> {
        if sample_ids.is_empty() {
            return Err(AparlError::Input("cannot assess an empty batch".into()));
        }
        let records: Vec<ProficiencyRecord> = sample_ids
            .iter()
            .zip(correct)
            .map(|(&sample_id, flags)| {
                let hits = flags.iter().filter(|&&c| c).count();
                ProficiencyRecord {
                    sample_id,
                    p: hits as f64 / flags.len() as f64,
                    correct: hits,
                    k: flags.len(),
                    step,
                }
            })
            .collect();
        let mu_p = records.iter().map(|r| r.p).sum::<f64>() / records.len() as f64;
        Ok(BatchAssessment {
            records,
            mu_p,
            rollouts,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Acceptance probability, with `0^0 = 1` and the result clamped to `[0, 1]`.
pub fn selection_prob(p: f64, mu_p: f64, t: f64, eps: f64) -> f64 {
    let lower = (p / (mu_p + eps)).powf(t * mu_p);
    let upper = ((1.0 - p) / (1.0 - mu_p + eps)).powf(t * (1.0 - mu_p));
    (lower * upper).clamp(0.0, 1.0)
}

/// How a variant decides which assessed samples enter the training batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionRule {
    /// Keep everything; no filter runs.
    All,
    /// Keep samples with `p ∉ {0, 1}`.
    NonDegenerate,
    /// Bernoulli acceptance with [`selection_prob`] at sharpness `t`.
    ProficiencyAware { t: f64, eps: f64 },
}

/// Positions (into `assessment.records`) of the accepted samples, in order.
/// A batch with `μ_p ∈ {0, 1}` is discarded entirely.
pub fn filter_batch(
    assessment: &BatchAssessment,
    rule: SelectionRule,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let records = &assessment.records;
    match rule {
        SelectionRule::All => (0..records.len()).collect(),
        _ if assessment.mu_p == 0.0 || assessment.mu_p == 1.0 => Vec::new(),
        SelectionRule::NonDegenerate => records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.p > 0.0 && r.p < 1.0)
            .map(|(i, _)| i)
            .collect(),
        SelectionRule::ProficiencyAware { t, eps } => records
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                // One uniform draw per sample keeps the stream aligned.
                let u: f64 = rng.gen();
                u < selection_prob(r.p, assessment.mu_p, t, eps)
            })
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Cursor over one epoch's sample order. Samples handed back with
/// [`BatchStream::push_front`] are served again before the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStream {
    queue: VecDeque<usize>,
}

impl BatchStream {
    pub fn new(order: impl IntoIterator<Item = usize>) -> Self {
        BatchStream {
            queue: order.into_iter().collect(),
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let n = size.min(self.queue.len());
        self.queue.drain(..n).collect()
    }

    /// Returns `items` to the front, preserving their order.
    pub fn push_front(&mut self, items: &[usize]) {
        for &i in items.iter().rev() {
            self.queue.push_front(i);
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pending(&self) -> Vec<usize> {
        self.queue.iter().copied().collect()
    }
}

/// A sample admitted to the training batch with the rollouts that assessed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    /// Index into the dataset the stream enumerates.
    pub index: usize,
    pub record: ProficiencyRecord,
    pub rollouts: Vec<Rollout>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Collected {
    pub selected: Vec<Selected>,
    /// Assessment passes after the first one.
    pub refill_rounds: usize,
    pub batches_assessed: usize,
    pub samples_assessed: usize,
    pub rollouts_consumed: usize,
    /// Every assessed proficiency value, in assessment order.
    pub assessed_p: Vec<f64>,
    /// True when the refill cap stopped collection short of the target.
    pub hit_refill_cap: bool,
}

impl Collected {
    /// Mean proficiency over every sample assessed for this batch.
    pub fn mu_p(&self) -> Option<f64> {
        if self.assessed_p.is_empty() {
            None
        } else {
            Some(self.assessed_p.iter().sum::<f64>() / self.assessed_p.len() as f64)
        }
    }
}

/// Assesses and filters mini-batches of `batch_size` from `stream` until
/// `target` samples are selected, the stream runs dry, or `max_refill_rounds`
/// extra passes have been spent. Surplus selections go back to the front of
/// the stream.
pub fn refill<A, F>(
    stream: &mut BatchStream,
    batch_size: usize,
    target: usize,
    max_refill_rounds: usize,
    mut assess: A,
    mut filter: F,
) -> Result<Collected>
where
    A: FnMut(&[usize]) -> Result<BatchAssessment>,
    F: FnMut(&BatchAssessment) -> Vec<usize>,
{
    if target == 0 || batch_size == 0 {
        return Err(AparlError::Input("target and batch size must be at least 1".into()));
    }
    let mut out = Collected::default();
    loop {
        if out.selected.len() >= target || stream.is_empty() {
            break;
        }
        if out.batches_assessed > max_refill_rounds {
            out.hit_refill_cap = true;
            log::warn!(
                "refill cap of {max_refill_rounds} rounds reached with {}/{target} samples selected",
                out.selected.len()
            );
            break;
        }
        let indices = stream.next_batch(batch_size);
        let assessment = assess(&indices)?;
        out.batches_assessed += 1;
        out.samples_assessed += indices.len();
        out.rollouts_consumed += assessment.rollouts.iter().map(Vec::len).sum::<usize>();
        out.assessed_p.extend(assessment.records.iter().map(|r| r.p));
        let accepted = filter(&assessment);
        let room = target - out.selected.len();
        let (take, surplus) = accepted.split_at(accepted.len().min(room));
        let mut rollouts = assessment.rollouts;
        for &pos in take {
            out.selected.push(Selected {
                index: indices[pos],
                record: assessment.records[pos].clone(),
                rollouts: std::mem::take(&mut rollouts[pos]),
            });
        }
        let returned: Vec<usize> = surplus.iter().map(|&pos| indices[pos]).collect();
        stream.push_front(&returned);
    }
    out.refill_rounds = out.batches_assessed.saturating_sub(1);
    Ok(out)
}
