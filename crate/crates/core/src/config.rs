//! Run configuration: a single TOML file with one table per subsystem.
//! Every key is optional; missing keys take the defaults below.
//!
//! ```toml
//! [data]      # task generator (DatasetSpec)
//! [policy]    # embed_dim, hidden_dim
//! [base]      # warm start that produces the shared base policy
//! [train]     # algorithm, batch sizes, group size, epochs, evaluation cadence
//! [reward]    # c_a, c_f
//! [rl]        # clip bounds, KL coefficient, optimizer, loss normalisation
//! [sampler]   # sharpness t, eps, refill cap
//! [sft]       # supervised baseline schedule
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AparlError, Result};
use crate::inner_rl::{LossNorm, RLConfig};
use crate::outer_sampler::{SamplerConfig, SelectionRule};
use crate::policy::Arch;
use crate::reward::RewardConfig;
use crate::task_env::DatasetSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sft,
    Grpo,
    Dapo,
    Aparl,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Sft, Algorithm::Grpo, Algorithm::Dapo, Algorithm::Aparl];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Sft => "sft",
            Algorithm::Grpo => "grpo",
            Algorithm::Dapo => "dapo",
            Algorithm::Aparl => "aparl",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = AparlError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| AparlError::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            embed_dim: 16,
            hidden_dim: 32,
        }
    }
}

/// Warm start applied to the random initialisation before any algorithm
/// runs. It stands in for the pretrained model every method starts from:
/// a supervised pass over a pool of generated samples disjoint from the
/// train and test ids. Targets may carry a random-length filler prefix;
/// the default is none, since filler steps erase what the recurrent state
/// remembers of the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseConfig {
    pub pretrain_samples: usize,
    pub pretrain_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Filler prefix length is drawn uniformly from `0..=max_reasoning_len`.
    pub max_reasoning_len: usize,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            pretrain_samples: 512,
            pretrain_steps: 1000,
            batch_size: 32,
            lr: 1e-2,
            max_reasoning_len: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub run_name: String,
    pub data_train_batch_size: usize,
    pub ppo_mini_batch_size: usize,
    /// Rollouts per prompt, used both for proficiency and as the group size.
    pub group_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub max_len: usize,
    pub temperature: f64,
    /// Stochastic rollouts per test sample for the pass@1 estimate.
    pub k_eval: usize,
    pub hist_bins: usize,
    /// Stop after this many training steps (0 = no limit).
    pub max_steps: usize,
    /// Write a resumable checkpoint every this many steps (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Aparl,
            run_name: "run".into(),
            data_train_batch_size: 64,
            ppo_mini_batch_size: 32,
            group_size: 8,
            epochs: 5,
            eval_every: 20,
            seed: 0,
            max_len: 64,
            temperature: 1.0,
            k_eval: 8,
            hist_bins: 10,
            max_steps: 0,
            checkpoint_every: 0,
        }
    }
}

/// Supervised baseline schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            batch_size: 128,
            epochs: 3,
            lr: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DatasetSpec,
    pub policy: PolicyConfig,
    pub base: BaseConfig,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub rl: RLConfig,
    pub sampler: SamplerConfig,
    pub sft: SftConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| AparlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AparlError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            AparlError::Config(m) => AparlError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fully resolved configuration, defaults included.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical serialization; independent of key order in
    /// the source file.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes to JSON");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(AparlError::Config(m.into()));
        self.data.validate()?;
        self.reward.validate()?;
        self.rl.validate()?;
        self.sampler.validate()?;
        self.arch()?;
        let t = &self.train;
        if t.data_train_batch_size == 0 || t.ppo_mini_batch_size == 0 {
            return cfg("batch sizes must be positive");
        }
        if t.ppo_mini_batch_size > t.data_train_batch_size {
            return cfg("ppo_mini_batch_size must not exceed data_train_batch_size");
        }
        if t.group_size < 2 {
            return cfg("group_size must be at least 2");
        }
        if t.epochs == 0 {
            return cfg("epochs must be at least 1");
        }
        if t.eval_every == 0 {
            return cfg("eval_every must be at least 1");
        }
        if t.max_len == 0 {
            return cfg("max_len must be at least 1");
        }
        if !(t.temperature > 0.0 && t.temperature.is_finite()) {
            return cfg("temperature must be positive");
        }
        if t.k_eval == 0 || t.hist_bins == 0 {
            return cfg("k_eval and hist_bins must be positive");
        }
        if self.sft.batch_size == 0 || self.sft.epochs == 0 || !(self.sft.lr > 0.0) {
            return cfg("invalid sft schedule");
        }
        if self.base.batch_size == 0 || !(self.base.lr > 0.0) {
            return cfg("invalid base warm-start schedule");
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<Arch> {
        Arch::new(
            self.data.vocab.size(),
            self.policy.embed_dim,
            self.policy.hidden_dim,
        )
    }

    /// Copy of this config with a different algorithm and seed.
    pub fn variant(&self, algorithm: Algorithm, seed: u64) -> RunConfig {
        let mut cfg = self.clone();
        cfg.train.algorithm = algorithm;
        cfg.train.seed = seed;
        cfg
    }

    /// Inner-loop settings after the per-algorithm overrides: DAPO drops the
    /// KL term; GRPO uses a symmetric clip and per-sequence normalisation.
    pub fn effective_rl(&self) -> RLConfig {
        let mut rl = self.rl.clone();
        match self.train.algorithm {
            Algorithm::Dapo => rl.kl_coef = 0.0,
            Algorithm::Grpo => {
                rl.eps_high = rl.eps_low;
                rl.loss_norm = LossNorm::PerSequence;
            }
            Algorithm::Aparl | Algorithm::Sft => {}
        }
        rl
    }

    pub fn selection_rule(&self, step: usize) -> SelectionRule {
        match self.train.algorithm {
            Algorithm::Aparl => SelectionRule::ProficiencyAware {
                t: self.sampler.sharpness_at(step),
                eps: self.sampler.eps,
            },
            Algorithm::Dapo => SelectionRule::NonDegenerate,
            Algorithm::Grpo | Algorithm::Sft => SelectionRule::All,
        }
    }
}
