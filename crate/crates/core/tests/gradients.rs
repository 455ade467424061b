//! Hand-written gradients against central finite differences.

mod common;

use aparl::inner_rl::{aggregate_loss, LossNorm, RLConfig};
use aparl::policy::{log_prob, weighted_score_grad, PolicyParams};
use aparl::trainer::sft_loss;
use common::fd::{assembled_gradient, max_rel_err, random_instance, TOL};
use common::{random_params, random_tokens, rng};
use rand::Rng;

#[test]
fn aggregate_loss_gradient_matches_finite_differences() {
    let mut rng = rng(101);
    let mut checked = 0;
    for norm in [LossNorm::TokenLevel, LossNorm::PerSequence] {
        let cfg = RLConfig {
            kl_coef: 0.05,
            loss_norm: norm,
            ..RLConfig::default()
        };
        let mut done = 0;
        while done < 12 {
            let inst = random_instance(&mut rng);
            if !inst.away_from_clip(&cfg, 1e-3) {
                continue;
            }
            let grad = assembled_gradient(&inst, &cfg);
            let f = |p: &PolicyParams| aggregate_loss(&inst.terms(p), &cfg).unwrap().loss;
            let err = max_rel_err(&inst.params, &grad, &f, &mut rng);
            assert!(err <= TOL, "{norm:?} instance {done}: max relative error {err:e}");
            done += 1;
        }
        checked += done;
    }
    assert!(checked >= 20);
}

#[test]
fn sft_loss_gradient_matches_finite_differences() {
    let mut rng = rng(202);
    for k in 0..20 {
        let params = random_params(&mut rng, 32, 16, 0.5);
        let v = params.arch.vocab_size;
        let prompt = random_tokens(&mut rng, v, 1, 12);
        let response = random_tokens(&mut rng, v, 1, 8);
        let (_, grad) = sft_loss(&params, &prompt, &response).unwrap();
        let f = |p: &PolicyParams| sft_loss(p, &prompt, &response).unwrap().0;
        let err = max_rel_err(&params, &grad, &f, &mut rng);
        assert!(err <= TOL, "instance {k}: max relative error {err:e}");
    }
}

#[test]
fn unit_weight_score_gradient_matches_sum_of_log_probs() {
    let mut rng = rng(303);
    for k in 0..20 {
        let params = random_params(&mut rng, 32, 16, 0.5);
        let v = params.arch.vocab_size;
        let prompt = random_tokens(&mut rng, v, 1, 12);
        let response = random_tokens(&mut rng, v, 1, 8);
        let grad = weighted_score_grad(&params, &prompt, &response, &vec![1.0; response.len()]).unwrap();
        let f = |p: &PolicyParams| log_prob(p, &prompt, &response).unwrap().iter().sum::<f64>();
        let err = max_rel_err(&params, &grad, &f, &mut rng);
        assert!(err <= TOL, "instance {k}: max relative error {err:e}");
    }
}

#[test]
fn score_gradient_is_linear_in_the_weights() {
    let mut rng = rng(404);
    for _ in 0..10 {
        let params = random_params(&mut rng, 32, 16, 0.5);
        let v = params.arch.vocab_size;
        let prompt = random_tokens(&mut rng, v, 1, 12);
        let response = random_tokens(&mut rng, v, 1, 8);
        let n = response.len();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let ga = weighted_score_grad(&params, &prompt, &response, &a).unwrap();
        let gb = weighted_score_grad(&params, &prompt, &response, &b).unwrap();
        let gm = weighted_score_grad(&params, &prompt, &response, &mix).unwrap();
        for i in 0..params.len() {
            let expect = alpha * ga[i] + beta * gb[i];
            assert!((gm[i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
        }
    }
}
