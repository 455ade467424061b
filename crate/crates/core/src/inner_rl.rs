//! Inner-loop policy-gradient math: group-normalised advantages, the
//! asymmetric ("clip-higher") importance-weighted surrogate, the k3 KL
//! penalty against a frozen reference policy, loss aggregation and the
//! parameter update.
//!
//! The loss for a batch is
//!
//! ```text
//! L = -(1/N) Σ_i Σ_t [ min(r A, clip(r, 1-ε_low, 1+ε_high) A) - λ k3 ]
//! ```
//!
//! Every term depends on θ only through `log π_θ(o_t | ...)`, so its gradient
//! is a per-token coefficient times the score `∇ log π_θ`. [`aggregate_loss`]
//! returns those coefficients; feeding them to the policy's weighted score
//! gradient yields `∇L` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{AparlError, Result};
use crate::policy::{PolicyParams, Rollout};

/// Bound on `|log ratio|` before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// `1 / Σ_i |o_i|` over every token in the batch.
    TokenLevel,
    /// Mean over groups of `(1/G) Σ_i (1/|o_i|) Σ_t`.
    PerSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RLConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    /// KL coefficient λ.
    pub kl_coef: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub loss_norm: LossNorm,
    /// Passes over each collected batch; π_old stays fixed across them.
    pub inner_epochs: usize,
    /// Reset π_ref to the current policy every this many optimizer steps
    /// (0 keeps the initial reference forever).
    pub ref_refresh_every: usize,
}

impl Default for RLConfig {
    fn default() -> Self {
        RLConfig {
            eps_low: 0.2,
            eps_high: 0.28,
            kl_coef: 0.001,
            lr: 1e-2,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            loss_norm: LossNorm::TokenLevel,
            inner_epochs: 1,
            ref_refresh_every: 0,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        if !in_unit(self.eps_low) || !in_unit(self.eps_high) {
            return Err(AparlError::Config(format!(
                "clip bounds must lie in (0, 1), got eps_low={} eps_high={}",
                self.eps_low, self.eps_high
            )));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(AparlError::Config("kl_coef must be finite and >= 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(AparlError::Config("lr must be positive".into()));
        }
        if !(in_unit(self.beta1) || self.beta1 == 0.0) || !in_unit(self.beta2) || self.adam_eps <= 0.0 {
            return Err(AparlError::Config("invalid Adam hyperparameters".into()));
        }
        if self.inner_epochs == 0 {
            return Err(AparlError::Config("inner_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// `(r_i - μ_r) / σ_r` with the population standard deviation; all zeros when
/// the rewards are constant.
pub fn compute_advantages(rewards: &[f64]) -> Vec<f64> {
    let (mean, std) = reward_stats(rewards);
    if std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Mean and population standard deviation.
pub fn reward_stats(rewards: &[f64]) -> (f64, f64) {
    if rewards.is_empty() {
        return (0.0, 0.0);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    // Constant groups can leave a rounding-level variance behind.
    if rewards.iter().all(|&r| r == rewards[0]) {
        return (mean, 0.0);
    }
    (mean, var.sqrt())
}

/// Importance ratio `π_θ / π_old` from log-probabilities, exponent clamped to ±30.
pub fn token_ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old)
        .clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
        .exp()
}

/// Clipped surrogate value and its score coefficient.
///
/// The coefficient is `ratio · adv` when the unclipped branch attains the
/// minimum (ties count as unclipped) and 0 otherwise.
pub fn clip_objective(ratio: f64, adv: f64, eps_low: f64, eps_high: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high) * adv;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// k3 estimate `x - ln x - 1` with `x = π_ref / π_θ`, and its score
/// coefficient `1 - x` with respect to `log π_θ`.
pub fn kl_k3(logp_ref: f64, logp_new: f64) -> (f64, f64) {
    let log_x = (logp_ref - logp_new).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
    let x = log_x.exp();
    // x - ln x - 1 >= 0 analytically; guard the rounding residue near x = 1.
    ((x - log_x - 1.0).max(0.0), 1.0 - x)
}

/// The G rollouts of one prompt with their reward statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub sample_id: u64,
    pub rollouts: Vec<Rollout>,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub advantages: Vec<f64>,
}

impl Group {
    pub fn new(sample_id: u64, rollouts: Vec<Rollout>) -> Result<Self> {
        if rollouts.len() < 2 {
            return Err(AparlError::Input(format!(
                "a group needs at least 2 rollouts, got {}",
                rollouts.len()
            )));
        }
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
        let (mean_reward, std_reward) = reward_stats(&rewards);
        let advantages = compute_advantages(&rewards);
        Ok(Group {
            sample_id,
            rollouts,
            mean_reward,
            std_reward,
            advantages,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.std_reward == 0.0
    }
}

/// Log-probabilities of one rollout under π_old, the current π_θ and π_ref.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutLogProbs {
    pub old: Vec<f64>,
    pub new: Vec<f64>,
    pub reference: Vec<f64>,
}

/// Loss input for one group: one advantage and one set of log-probs per rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTerms {
    pub advantages: Vec<f64>,
    pub rollouts: Vec<RolloutLogProbs>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `weights[g][i][t]`: coefficient of `∇ log π_θ(o_{i,t})` in `∇L`.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub num_tokens: usize,
}

pub fn aggregate_loss(groups: &[GroupTerms], cfg: &RLConfig) -> Result<LossOutput> {
    if groups.is_empty() || groups.iter().any(|g| g.rollouts.is_empty()) {
        return Err(AparlError::Input("aggregate_loss needs non-empty groups".into()));
    }
    let mut num_tokens = 0;
    for g in groups {
        if g.advantages.len() != g.rollouts.len() {
            return Err(AparlError::Input("one advantage per rollout required".into()));
        }
        for r in &g.rollouts {
            if r.new.is_empty() || r.old.len() != r.new.len() || r.reference.len() != r.new.len() {
                return Err(AparlError::Input(
                    "rollout log-prob vectors must be non-empty and of equal length".into(),
                ));
            }
            num_tokens += r.new.len();
        }
    }

    let n_groups = groups.len() as f64;
    let mut loss = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut weights = Vec::with_capacity(groups.len());
    for g in groups {
        let group_size = g.rollouts.len() as f64;
        let mut group_weights = Vec::with_capacity(g.rollouts.len());
        for (r, &adv) in g.rollouts.iter().zip(&g.advantages) {
            let scale = match cfg.loss_norm {
                LossNorm::TokenLevel => 1.0 / num_tokens as f64,
                LossNorm::PerSequence => 1.0 / (n_groups * group_size * r.new.len() as f64),
            };
            let mut w = Vec::with_capacity(r.new.len());
            for t in 0..r.new.len() {
                let ratio = token_ratio(r.new[t], r.old[t]);
                let (objective, surrogate_weight) =
                    clip_objective(ratio, adv, cfg.eps_low, cfg.eps_high);
                let (kl, kl_weight) = kl_k3(r.reference[t], r.new[t]);
                if surrogate_weight == 0.0 && adv != 0.0 {
                    clipped += 1;
                }
                kl_sum += kl;
                loss -= scale * (objective - cfg.kl_coef * kl);
                w.push(-scale * (surrogate_weight - cfg.kl_coef * kl_weight));
            }
            group_weights.push(w);
        }
        weights.push(group_weights);
    }
    Ok(LossOutput {
        loss,
        weights,
        mean_kl: kl_sum / num_tokens as f64,
        clip_fraction: clipped as f64 / num_tokens as f64,
        num_tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(num_params: usize) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }
}

/// Applies one SGD or Adam update in place. A non-finite gradient aborts the
/// step before anything is modified.
pub fn optimizer_step(
    params: &mut PolicyParams,
    grad: &[f64],
    cfg: &RLConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(AparlError::Input(format!(
            "gradient of length {} for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(AparlError::Numeric(format!(
            "non-finite gradient entry {} at index {i}",
            grad[i]
        )));
    }
    state.step += 1;
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in params.values.iter_mut().zip(grad) {
                *p -= cfg.lr * g;
            }
        }
        OptimizerKind::Adam => {
            let t = state.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            for (((p, &g), m), v) in params
                .values
                .iter_mut()
                .zip(grad)
                .zip(state.m.iter_mut())
                .zip(state.v.iter_mut())
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
        }
    }
    if !params.is_finite() {
        return Err(AparlError::Numeric("parameters became non-finite".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Arch;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(compute_advantages(&[1.5, 1.5, 1.5]), vec![0.0; 3]);
        let a = compute_advantages(&[1.5, -1.5]);
        assert!(close(a[0], 1.0, 1e-12) && close(a[1], -1.0, 1e-12));
        // μ = 0.25, σ² = (1.5625 + 1.5625 + 0.5625 + 3.0625) / 4 = 1.6875
        let sigma = 1.6875f64.sqrt();
        let expected = [1.25 / sigma, 1.25 / sigma, -0.75 / sigma, -1.75 / sigma];
        let frozen = [0.96225, 0.96225, -0.57735, -1.34715];
        let a = compute_advantages(&[1.5, 1.5, -0.5, -1.5]);
        for i in 0..4 {
            assert!(close(a[i], expected[i], 1e-12));
            assert!(close(a[i], frozen[i], 1e-5));
        }
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(token_ratio(-1.3, -1.3), 1.0);
        assert!(close(token_ratio(2f64.ln() - 4.0, -4.0), 2.0, 1e-12));
        assert_eq!(token_ratio(100.0, 0.0), 30f64.exp());
        assert_eq!(token_ratio(0.0, 100.0), (-30f64).exp());
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_objective(1.0, 0.5, 0.2, 0.28), (0.5, 0.5));
        let (obj, w) = clip_objective(1.3, 1.0, 0.2, 0.28);
        assert!(close(obj, 1.28, 1e-12) && w == 0.0);
        let (obj, w) = clip_objective(0.7, -1.0, 0.2, 0.28);
        assert!(close(obj, -0.8, 1e-12) && w == 0.0);
        // Clipping that would raise the objective never binds.
        assert_eq!(clip_objective(1.5, -1.0, 0.2, 0.28), (-1.5, -1.5));
        assert_eq!(clip_objective(0.5, 1.0, 0.2, 0.28), (0.5, 0.5));
    }

    #[test]
    fn k3_examples() {
        assert_eq!(kl_k3(-2.0, -2.0), (0.0, 0.0));
        let (k, w) = kl_k3(2f64.ln(), 0.0);
        assert!(close(k, 0.306853, 1e-6) && close(w, -1.0, 1e-12));
        let (k, w) = kl_k3(0.5f64.ln(), 0.0);
        assert!(close(k, 0.193147, 1e-6) && close(w, 0.5, 1e-12));
    }

    fn terms(adv: f64, old: f64, new: f64, reference: f64) -> GroupTerms {
        GroupTerms {
            advantages: vec![adv],
            rollouts: vec![RolloutLogProbs {
                old: vec![old],
                new: vec![new],
                reference: vec![reference],
            }],
        }
    }

    #[test]
    fn single_token_loss_is_negative_advantage() {
        let cfg = RLConfig {
            kl_coef: 0.0,
            ..RLConfig::default()
        };
        let out = aggregate_loss(&[terms(0.7, -1.0, -1.0, -3.0)], &cfg).unwrap();
        assert!(close(out.loss, -0.7, 1e-15));
        assert!(close(out.weights[0][0][0], -0.7, 1e-15));
    }

    #[test]
    fn on_policy_degenerate_group_has_zero_loss_and_weights() {
        let g = GroupTerms {
            advantages: vec![0.0; 3],
            rollouts: (0..3)
                .map(|i| {
                    let lp = vec![-0.5 - i as f64; 2 + i];
                    RolloutLogProbs {
                        old: lp.clone(),
                        new: lp.clone(),
                        reference: lp,
                    }
                })
                .collect(),
        };
        let out = aggregate_loss(&[g], &RLConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.weights.iter().flatten().flatten().all(|&w| w == 0.0));
    }

    #[test]
    fn per_sequence_normalisation() {
        let cfg = RLConfig {
            kl_coef: 0.0,
            loss_norm: LossNorm::PerSequence,
            ..RLConfig::default()
        };
        let g = GroupTerms {
            advantages: vec![1.0, -1.0],
            rollouts: vec![
                RolloutLogProbs {
                    old: vec![-1.0; 4],
                    new: vec![-1.0; 4],
                    reference: vec![-1.0; 4],
                },
                RolloutLogProbs {
                    old: vec![-1.0; 1],
                    new: vec![-1.0; 1],
                    reference: vec![-1.0; 1],
                },
            ],
        };
        let out = aggregate_loss(std::slice::from_ref(&g), &cfg).unwrap();
        // (1/2)(1/4 · 4 · 1 + 1/1 · 1 · (-1)) = 0
        assert!(close(out.loss, 0.0, 1e-15));
        assert!(close(out.weights[0][0][0], -1.0 / 8.0, 1e-15));
        assert!(close(out.weights[0][1][0], 1.0 / 2.0, 1e-15));
        let token = aggregate_loss(&[g], &RLConfig { loss_norm: LossNorm::TokenLevel, ..cfg }).unwrap();
        assert!(close(token.loss, -3.0 / 5.0, 1e-15));
    }

    #[test]
    fn empty_groups_are_rejected() {
        assert!(aggregate_loss(&[], &RLConfig::default()).is_err());
    }

    #[test]
    fn sgd_and_adam_steps() {
        let arch = Arch::new(3, 1, 1).unwrap();
        let n = arch.num_params();
        let sgd = RLConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 0.1,
            ..RLConfig::default()
        };
        let mut params = PolicyParams::zeros(arch);
        let mut state = OptimizerState::new(n);
        optimizer_step(&mut params, &vec![0.0; n], &sgd, &mut state).unwrap();
        assert!(params.values.iter().all(|&x| x == 0.0));
        let mut g = vec![0.0; n];
        g[0] = 1.0;
        optimizer_step(&mut params, &g, &sgd, &mut state).unwrap();
        assert!(close(params.values[0], -0.1, 1e-15));

        // Hand-computed first Adam step: m = 0.1 g, v = 0.001 g², m̂ = g, v̂ = g²,
        // Δ = -lr · g / (|g| + 1e-8).
        let adam = RLConfig { lr: 1e-3, ..RLConfig::default() };
        let mut params = PolicyParams::zeros(arch);
        let mut state = OptimizerState::new(n);
        let grad: Vec<f64> = (0..n).map(|i| (i as f64 - 3.0) * 0.37).collect();
        optimizer_step(&mut params, &grad, &adam, &mut state).unwrap();
        for (p, g) in params.values.iter().zip(&grad) {
            let m = 0.1 * g;
            let v = 0.001 * g * g;
            let expected = -1e-3 * (m / 0.1) / ((v / 0.001f64).sqrt() + 1e-8);
            assert!(close(*p, expected, 1e-15));
            if *g != 0.0 {
                assert!(close(*p, -1e-3 * g.signum(), 1e-10));
            }
        }
        assert!(close(state.m[0], 0.1 * grad[0], 1e-15));
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let arch = Arch::new(3, 1, 1).unwrap();
        let n = arch.num_params();
        let mut params = PolicyParams::zeros(arch);
        let mut state = OptimizerState::new(n);
        let mut g = vec![0.5; n];
        g[2] = f64::NAN;
        let err = optimizer_step(&mut params, &g, &RLConfig::default(), &mut state).unwrap_err();
        assert!(matches!(err, AparlError::Numeric(_)));
        assert_eq!(state.step, 0);
        assert!(params.values.iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn advantages_are_standardised(rewards in proptest::collection::vec(
            prop_oneof![Just(1.5), Just(-0.5), Just(-1.5), -3.0f64..3.0], 2..16)) {
            let a = compute_advantages(&rewards);
            let (_, std) = reward_stats(&rewards);
            if std > 0.0 {
                let n = a.len() as f64;
                let mean = a.iter().sum::<f64>() / n;
                let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() <= 1e-9);
                prop_assert!((sd - 1.0).abs() <= 1e-9);
            } else {
                prop_assert!(a.iter().all(|&x| x == 0.0));
            }
        }

        #[test]
        fn k3_is_non_negative(lr in -20.0f64..0.0, ln in -20.0f64..0.0) {
            let (k, _) = kl_k3(lr, ln);
            prop_assert!(k >= 0.0);
            if lr != ln {
                prop_assert!(k > 0.0 || (lr - ln).abs() < 1e-7);
            }
        }

        #[test]
        fn clip_gating(ratio in 0.01f64..3.0, adv in -3.0f64..3.0) {
            let (obj, w) = clip_objective(ratio, adv, 0.2, 0.28);
            let expect_zero = (adv > 0.0 && ratio > 1.28) || (adv < 0.0 && ratio < 0.8);
            if expect_zero {
                prop_assert_eq!(w, 0.0);
            } else {
                prop_assert_eq!(w, ratio * adv);
            }
            prop_assert!(obj <= ratio * adv);
        }
    }
}
