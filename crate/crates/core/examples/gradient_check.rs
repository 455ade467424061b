//! Compares the analytic gradient of the clipped group objective with
//! central finite differences on a small random policy.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use aparl::inner_rl::{aggregate_loss, compute_advantages, GroupTerms, RLConfig, RolloutLogProbs};
use aparl::policy::{init_policy, log_prob, sample_response, weighted_score_grad, Arch, Decoding, PolicyParams};
use aparl::seeding::{stream, Purpose};
use aparl::vocab::TokenId;

fn terms(
    params: &PolicyParams,
    prompt: &[TokenId],
    responses: &[Vec<TokenId>],
    adv: &[f64],
    old: &[Vec<f64>],
) -> Vec<GroupTerms> {
    let rollouts = responses
        .iter()
        .zip(old)
        .map(|(r, o)| RolloutLogProbs {
            old: o.clone(),
            new: log_prob(params, prompt, r).unwrap(),
            reference: o.clone(),
        })
        .collect();
    vec![GroupTerms {
        advantages: adv.to_vec(),
        rollouts,
    }]
}

fn main() -> aparl::Result<()> {
    let arch = Arch::new(24, 6, 10)?;
    let mut params = init_policy(arch, 1);
    for v in params.values.iter_mut() {
        *v *= 5.0;
    }
    let prompt: Vec<TokenId> = vec![0, 7, 9, 2, 11, 3];
    let mut rng = stream(1, Purpose::Rollout, &[0]);
    let decoding = Decoding::Sample { temperature: 1.0 };
    let rollouts: Vec<_> = (0..4)
        .map(|_| sample_response(&params, 0, &prompt, decoding, 8, &mut rng))
        .collect::<aparl::Result<_>>()?;
    let responses: Vec<Vec<TokenId>> = rollouts.iter().map(|r| r.response.clone()).collect();
    let old: Vec<Vec<f64>> = rollouts.iter().map(|r| r.logp_old.clone()).collect();
    let adv = compute_advantages(&[1.5, -0.5, -1.5, 1.5]);

    // Move away from the snapshot so the ratios and the KL term are non-trivial.
    for (i, v) in params.values.iter_mut().enumerate() {
        *v += 0.01 * ((i % 7) as f64 - 3.0);
    }
    let cfg = RLConfig {
        kl_coef: 0.1,
        ..RLConfig::default()
    };
    let out = aggregate_loss(&terms(&params, &prompt, &responses, &adv, &old), &cfg)?;
    let mut grad = vec![0.0; params.len()];
    for (r, w) in responses.iter().zip(&out.weights[0]) {
        for (g, x) in grad.iter_mut().zip(weighted_score_grad(&params, &prompt, r, w)?) {
            *g += x;
        }
    }
    println!("loss {:.6}  kl {:.2e}  clipped {:.2}", out.loss, out.mean_kl, out.clip_fraction);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    println!("index  analytic        finite-diff");
    for i in (0..params.len()).step_by(params.len() / 12) {
        let mut plus = params.clone();
        plus.values[i] += h;
        let mut minus = params.clone();
        minus.values[i] -= h;
        let f = |p: &PolicyParams| aggregate_loss(&terms(p, &prompt, &responses, &adv, &old), &cfg).map(|o| o.loss);
        let fd = (f(&plus)? - f(&minus)?) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
        println!("{i:>5}  {:+.6e}  {fd:+.6e}", grad[i]);
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
