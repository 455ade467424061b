//! Shared fixtures for the integration tests.

#![allow(dead_code)]

pub mod fd;

use aparl::policy::{Arch, PolicyParams};
use aparl::vocab::TokenId;
use aparl::{Algorithm, RunConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random small architecture with parameters drawn from U(-scale, scale).
pub fn random_params(rng: &mut ChaCha8Rng, max_v: usize, max_h: usize, scale: f64) -> PolicyParams {
    let v = rng.gen_range(6..=max_v);
    let d = rng.gen_range(2..=8);
    let h = rng.gen_range(2..=max_h);
    let arch = Arch::new(v, d, h).unwrap();
    let values = (0..arch.num_params()).map(|_| rng.gen_range(-scale..scale)).collect();
    PolicyParams { arch, values }
}

pub fn random_tokens(rng: &mut ChaCha8Rng, v: usize, min_len: usize, max_len: usize) -> Vec<TokenId> {
    let n = rng.gen_range(min_len..=max_len);
    (0..n).map(|_| rng.gen_range(0..v) as TokenId).collect()
}

/// A configuration small enough to train in a few seconds.
pub fn tiny_config(algorithm: Algorithm, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default().variant(algorithm, seed);
    cfg.data.n_train = 48;
    cfg.data.n_test = 24;
    cfg.base.pretrain_samples = 96;
    cfg.base.pretrain_steps = 60;
    cfg.base.batch_size = 16;
    cfg.train.data_train_batch_size = 16;
    cfg.train.ppo_mini_batch_size = 8;
    cfg.train.group_size = 4;
    cfg.train.epochs = 2;
    cfg.train.eval_every = 2;
    cfg.train.k_eval = 4;
    cfg.train.max_len = 12;
    cfg.sft.batch_size = 16;
    cfg.sft.epochs = 2;
    cfg.validate().unwrap();
    cfg
}

/// The smoke configuration: 64 training samples, 2 epochs, defaults otherwise.
pub fn smoke_config(algorithm: Algorithm, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default().variant(algorithm, seed);
    cfg.data.n_train = 64;
    cfg.data.n_test = 64;
    cfg.train.epochs = 2;
    cfg.train.eval_every = 1;
    cfg.validate().unwrap();
    cfg
}

/// Relative error with a floor on the denominator for near-zero entries.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
