//! Finite-difference oracle and random loss instances.

use aparl::inner_rl::{aggregate_loss, GroupTerms, RLConfig, RolloutLogProbs};
use aparl::policy::{log_prob, weighted_score_grad, PolicyParams};
use aparl::vocab::TokenId;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{random_params, random_tokens, rel_err};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const COORDS: usize = 50;

pub fn central_difference(params: &PolicyParams, i: usize, f: &dyn Fn(&PolicyParams) -> f64) -> f64 {
    let mut plus = params.clone();
    plus.values[i] += STEP;
    let mut minus = params.clone();
    minus.values[i] -= STEP;
    (f(&plus) - f(&minus)) / (2.0 * STEP)
}

pub fn max_rel_err(
    params: &PolicyParams,
    grad: &[f64],
    f: &dyn Fn(&PolicyParams) -> f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let n = params.len();
    sample(rng, n, COORDS.min(n))
        .into_iter()
        .map(|i| rel_err(central_difference(params, i, f), grad[i]))
        .fold(0.0, f64::max)
}

pub struct Instance {
    pub params: PolicyParams,
    /// (prompt, response) per rollout, grouped.
    pub groups: Vec<Vec<(Vec<TokenId>, Vec<TokenId>)>>,
    pub advantages: Vec<Vec<f64>>,
    pub old: Vec<Vec<Vec<f64>>>,
    pub reference: Vec<Vec<Vec<f64>>>,
}

impl Instance {
    pub fn terms(&self, params: &PolicyParams) -> Vec<GroupTerms> {
        self.groups
            .iter()
            .enumerate()
            .map(|(g, rollouts)| GroupTerms {
                advantages: self.advantages[g].clone(),
                rollouts: rollouts
                    .iter()
                    .enumerate()
                    .map(|(i, (prompt, response))| RolloutLogProbs {
                        old: self.old[g][i].clone(),
                        new: log_prob(params, prompt, response).unwrap(),
                        reference: self.reference[g][i].clone(),
                    })
                    .collect(),
            })
            .collect()
    }

    /// True when no token ratio sits within `margin` of a clip edge.
    pub fn away_from_clip(&self, cfg: &RLConfig, margin: f64) -> bool {
        self.terms(&self.params).iter().all(|g| {
            g.rollouts.iter().all(|r| {
                r.new.iter().zip(&r.old).all(|(n, o)| {
                    let ratio = (n - o).exp();
                    (ratio - (1.0 - cfg.eps_low)).abs() > margin
                        && (ratio - (1.0 + cfg.eps_high)).abs() > margin
                })
            })
        })
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let params = random_params(rng, 32, 16, 0.5);
    let v = params.arch.vocab_size;
    let n_groups = rng.gen_range(1..=3);
    let mut groups = Vec::new();
    let mut advantages = Vec::new();
    let mut old = Vec::new();
    let mut reference = Vec::new();
    for _ in 0..n_groups {
        let size = rng.gen_range(2..=4);
        let prompt = random_tokens(rng, v, 1, 10);
        let rollouts: Vec<(Vec<TokenId>, Vec<TokenId>)> = (0..size)
            .map(|_| (prompt.clone(), random_tokens(rng, v, 1, 8)))
            .collect();
        let mut g_old = Vec::new();
        let mut g_ref = Vec::new();
        for (p, r) in &rollouts {
            let lp = log_prob(&params, p, r).unwrap();
            g_old.push(lp.iter().map(|x| x + rng.gen_range(-0.4..0.4)).collect());
            g_ref.push(lp.iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect());
        }
        advantages.push((0..size).map(|_| rng.gen_range(-1.5..1.5)).collect());
        groups.push(rollouts);
        old.push(g_old);
        reference.push(g_ref);
    }
    Instance {
        params,
        groups,
        advantages,
        old,
        reference,
    }
}

pub fn assembled_gradient(inst: &Instance, cfg: &RLConfig) -> Vec<f64> {
    let out = aggregate_loss(&inst.terms(&inst.params), cfg).unwrap();
    let mut grad = vec![0.0; inst.params.len()];
    for (g, rollouts) in inst.groups.iter().enumerate() {
        for (i, (prompt, response)) in rollouts.iter().enumerate() {
            let part = weighted_score_grad(&inst.params, prompt, response, &out.weights[g][i]).unwrap();
            for (a, b) in grad.iter_mut().zip(part) {
                *a += b;
            }
        }
    }
    grad
}

