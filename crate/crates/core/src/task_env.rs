//! Synthetic abnormal-event detection task.
//!
//! Each sample is a short multi-party dialogue in which the gold events leave
//! cue tokens. Difficulty tiers differ in how many cues survive corruption and
//! how many distractor cues from non-gold events are mixed in, so a fixed
//! policy sees a spread of per-sample success rates.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AparlError, Result};
use crate::seeding::{self, Purpose};
use crate::vocab::{Role, TokenId, Vocab, BOS, SEP};

pub const NUM_TIERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventDescriptor {
    pub id: u32,
    pub name: TokenId,
    pub cues: Vec<TokenId>,
}

/// The M predefined abnormal event types and the cue tokens that signal them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventCatalog {
    pub events: Vec<EventDescriptor>,
}

impl EventCatalog {
    pub fn from_vocab(vocab: &Vocab) -> Self {
        let events = (0..vocab.n_events)
            .map(|id| EventDescriptor {
                id,
                name: vocab.event(id),
                cues: (0..vocab.cues_per_event).map(|c| vocab.cue(id, c)).collect(),
            })
            .collect();
        EventCatalog { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// How the event descriptions are serialized at the head of every prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionMode {
    None,
    #[default]
    Names,
    NamesAndCues,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub utterances: Vec<Utterance>,
    /// Number of most recent utterances shown to the policy.
    pub window: usize,
}

impl Dialogue {
    pub fn visible(&self) -> &[Utterance] {
        let n = self.utterances.len();
        &self.utterances[n - self.window.min(n)..]
    }
}

/// One training or test instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub prompt: Vec<TokenId>,
    pub gold: BTreeSet<u32>,
    pub tier: u8,
}

pub fn gold_labels(sample: &Sample) -> &BTreeSet<u32> {
    &sample.gold
}

/// Generator settings. Per-tier vectors are indexed by tier 0..4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub tier_mix: Vec<f64>,
    /// Probability that each planted gold cue is corrupted (replaced by filler).
    pub noise: Vec<f64>,
    /// Mean of the Poisson-distributed number of distractor events per sample.
    pub distractors: Vec<f64>,
    /// Cue tokens planted per gold event before corruption.
    pub cues_per_gold: u32,
    pub max_labels: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub window: usize,
    pub min_utterance_len: usize,
    pub max_utterance_len: usize,
    pub prompt_len_max: usize,
    pub describe: DescriptionMode,
    pub vocab: Vocab,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_train: 2000,
            n_test: 500,
            tier_mix: vec![0.4, 0.3, 0.2, 0.1],
            noise: vec![0.0, 0.1, 0.25, 0.5],
            distractors: vec![0.0, 0.5, 1.0, 2.0],
            cues_per_gold: 2,
            max_labels: 3,
            min_utterances: 4,
            max_utterances: 12,
            window: 6,
            min_utterance_len: 2,
            max_utterance_len: 5,
            prompt_len_max: 256,
            describe: DescriptionMode::Names,
            vocab: Vocab::default(),
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(AparlError::Config(m));
        self.vocab.validate()?;
        if self.n_train == 0 || self.n_test == 0 {
            return cfg("n_train and n_test must be positive".into());
        }
        for (name, v) in [
            ("tier_mix", &self.tier_mix),
            ("noise", &self.noise),
            ("distractors", &self.distractors),
        ] {
            if v.len() != NUM_TIERS {
                return cfg(format!("{name} needs {NUM_TIERS} entries, got {}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return cfg(format!("{name} entries must be finite and non-negative"));
            }
        }
        let total: f64 = self.tier_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return cfg(format!("tier_mix sums to {total}, expected 1"));
        }
        if self.noise.iter().any(|&p| p > 1.0) {
            return cfg("noise probabilities must lie in [0, 1]".into());
        }
        let m = self.vocab.n_events as usize;
        if self.max_labels == 0 || self.max_labels > m {
            return cfg(format!("max_labels must be in 1..={m}"));
        }
        // Draws above the catalog size are truncated; keep the mean well inside it.
        let worst_distractors = self.distractors.iter().fold(0.0f64, |a, &b| a.max(b));
        if self.max_labels as f64 + worst_distractors > m as f64 / 2.0 {
            return cfg("too many gold plus distractor events for the catalog".into());
        }
        if self.cues_per_gold == 0 || self.cues_per_gold > self.vocab.cues_per_event {
            return cfg(format!(
                "cues_per_gold must be in 1..={}",
                self.vocab.cues_per_event
            ));
        }
        if self.min_utterances == 0 || self.min_utterances > self.max_utterances {
            return cfg("utterance count range is empty".into());
        }
        if self.window == 0 {
            return cfg("window must be at least 1".into());
        }
        if self.min_utterance_len > self.max_utterance_len {
            return cfg("utterance length range is empty".into());
        }
        Ok(())
    }
}

/// Renders `[BOS] ++ event descriptions ++ [SEP] ++ last k utterances`, each
/// utterance prefixed by its role marker.
pub fn render_prompt(
    dialogue: &Dialogue,
    catalog: &EventCatalog,
    vocab: &Vocab,
    describe: DescriptionMode,
    prompt_len_max: usize,
) -> Result<Vec<TokenId>> {
    let mut prompt = vec![BOS];
    for event in &catalog.events {
        match describe {
            DescriptionMode::None => {}
            DescriptionMode::Names => prompt.push(event.name),
            DescriptionMode::NamesAndCues => {
                prompt.push(event.name);
                prompt.extend_from_slice(&event.cues);
            }
        }
    }
    prompt.push(SEP);
    for utt in dialogue.visible() {
        prompt.push(vocab.role(utt.role));
        prompt.extend_from_slice(&utt.tokens);
    }
    if prompt.len() > prompt_len_max {
        return Err(AparlError::Generation(format!(
            "prompt of {} tokens exceeds prompt_len_max {prompt_len_max}",
            prompt.len()
        )));
    }
    Ok(prompt)
}

/// Generated instance before rendering, exposed for diagnostics.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub sample: Sample,
    pub dialogue: Dialogue,
}

fn draw_tier(rng: &mut impl Rng, mix: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (tier, &w) in mix.iter().enumerate() {
        acc += w;
        if u < acc {
            return tier;
        }
    }
    // Rounding residue; fall back to the last tier with positive weight.
    mix.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn filler(rng: &mut impl Rng, vocab: &Vocab) -> TokenId {
    vocab.filler(rng.gen_range(0..vocab.n_fillers))
}

/// Generates the sample with the given id. Pure function of `(spec, id)`.
pub fn generate_sample(spec: &DatasetSpec, catalog: &EventCatalog, id: u64) -> Result<GeneratedSample> {
    let vocab = &spec.vocab;
    let mut rng = seeding::stream(spec.seed, Purpose::Sample, &[id]);
    let tier = draw_tier(&mut rng, &spec.tier_mix);
    let m = catalog.len();

    let n_labels = rng.gen_range(1..=spec.max_labels);
    let gold: BTreeSet<u32> = sample_indices(&mut rng, m, n_labels)
        .into_iter()
        .map(|e| e as u32)
        .collect();

    let rate = spec.distractors[tier];
    let n_distractors = if rate > 0.0 {
        Poisson::new(rate).expect("validated rate").sample(&mut rng) as usize
    } else {
        0
    };
    let others: Vec<u32> = (0..m as u32).filter(|e| !gold.contains(e)).collect();
    let distractors: Vec<u32> = sample_indices(&mut rng, others.len(), n_distractors.min(others.len()))
        .into_iter()
        .map(|i| others[i])
        .collect();

    let n_utt = rng.gen_range(spec.min_utterances..=spec.max_utterances);
    let window = spec.window.min(n_utt);
    let mut utterances: Vec<Utterance> = (0..n_utt)
        .map(|_| {
            let role = Role::ALL[rng.gen_range(0..Role::ALL.len())];
            let len = rng.gen_range(spec.min_utterance_len..=spec.max_utterance_len);
            let tokens = (0..len).map(|_| filler(&mut rng, vocab)).collect();
            Utterance { role, tokens }
        })
        .collect();

    // Cues land only inside the visible window.
    let first_visible = n_utt - window;
    let mut plant = |rng: &mut rand_chacha::ChaCha8Rng, token: TokenId| {
        let u = rng.gen_range(first_visible..n_utt);
        let pos = rng.gen_range(0..=utterances[u].tokens.len());
        utterances[u].tokens.insert(pos, token);
    };

    let noise = spec.noise[tier];
    for &event in &gold {
        let cues = sample_indices(
            &mut rng,
            vocab.cues_per_event as usize,
            spec.cues_per_gold as usize,
        );
        for (j, cue) in cues.into_iter().enumerate() {
            let corrupted = rng.gen::<f64>() < noise;
            // Tier 0 always keeps the first cue of every gold event.
            let token = if corrupted && !(tier == 0 && j == 0) {
                filler(&mut rng, vocab)
            } else {
                vocab.cue(event, cue as u32)
            };
            plant(&mut rng, token);
        }
    }
    for &event in &distractors {
        let cue = rng.gen_range(0..vocab.cues_per_event);
        plant(&mut rng, vocab.cue(event, cue));
    }

    let dialogue = Dialogue { utterances, window };
    let prompt = render_prompt(&dialogue, catalog, vocab, spec.describe, spec.prompt_len_max)?;
    Ok(GeneratedSample {
        sample: Sample {
            id,
            prompt,
            gold,
            tier: tier as u8,
        },
        dialogue,
    })
}

/// Generates the samples with ids in `ids`, in id order.
pub fn generate_samples(spec: &DatasetSpec, ids: Range<u64>) -> Result<Vec<Sample>> {
    spec.validate()?;
    let catalog = EventCatalog::from_vocab(&spec.vocab);
    ids.into_par_iter()
        .map(|id| generate_sample(spec, &catalog, id).map(|g| g.sample))
        .collect()
}

/// Train ids are `0..n_train`, test ids `n_train..n_train + n_test`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    spec.validate()?;
    let n_train = spec.n_train as u64;
    let n_test = spec.n_test as u64;
    let train = generate_samples(spec, 0..n_train)?;
    let test = generate_samples(spec, n_train..n_train + n_test)?;
    Ok((train, test))
}

/// Vocabulary layout and counts written next to dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub vocab: Vocab,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub tier_counts_train: Vec<usize>,
    pub tier_counts_test: Vec<usize>,
}

pub fn tier_counts(samples: &[Sample]) -> Vec<usize> {
    let mut counts = vec![0; NUM_TIERS];
    for s in samples {
        counts[s.tier as usize] += 1;
    }
    counts
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(|e| AparlError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).expect("sample serialization is infallible");
        writeln!(out, "{line}").map_err(|e| AparlError::io(path, e))?;
    }
    out.flush().map_err(|e| AparlError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| AparlError::io(path, e))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AparlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| AparlError::corrupt(path, format!("line {}: {e}", n + 1)))?;
        if s.gold.is_empty() {
            return Err(AparlError::corrupt(path, format!("line {}: empty gold set", n + 1)));
        }
        samples.push(s);
    }
    Ok(samples)
}
