//! The proficiency-aware acceptance curve and the Bernoulli filter.

mod common;

use aparl::outer_sampler::{filter_batch, selection_prob, BatchAssessment, ProficiencyRecord, SelectionRule};
use common::rng;
use proptest::prelude::*;

const EPS: f64 = 1e-8;

fn grid() -> Vec<f64> {
    (0..=10_000).map(|i| i as f64 * 1e-4).collect()
}

fn assessment(ps: &[f64]) -> BatchAssessment {
    let records: Vec<ProficiencyRecord> = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| ProficiencyRecord {
            sample_id: i as u64,
            p,
            correct: 0,
            k: 8,
            step: 0,
        })
        .collect();
    BatchAssessment {
        mu_p: ps.iter().sum::<f64>() / ps.len() as f64,
        rollouts: vec![Vec::new(); ps.len()],
        records,
    }
}

#[test]
fn derived_point_value() {
    // 0.5^0.05 · 1.5^0.05 evaluated in log space.
    let oracle = (0.05 * 0.5f64.ln() + 0.05 * 1.5f64.ln()).exp();
    let p = selection_prob(0.25, 0.5, 0.1, EPS);
    assert!((p - oracle).abs() <= 1e-6);
    assert!((p - 0.98573).abs() <= 1e-4);
}

#[test]
fn sharper_curves_accept_less_away_from_the_peak() {
    for mu in [0.2, 0.5, 0.8] {
        for p in [0.05, 0.3, 0.6, 0.95] {
            let mut last = 1.0;
            for t in [0.05, 0.1, 0.5, 1.0, 2.0, 5.0] {
                let now = selection_prob(p, mu, t, EPS);
                assert!(now < last, "mu {mu} p {p} t {t}");
                last = now;
            }
        }
    }
}

#[test]
fn uniform_proficiency_is_almost_always_accepted() {
    let mut rng = rng(5);
    let b = 64;
    let batch = assessment(&vec![0.375; b]);
    let rule = SelectionRule::ProficiencyAware { t: 0.1, eps: EPS };
    let mut accepted = 0;
    for _ in 0..1000 {
        accepted += filter_batch(&batch, rule, &mut rng).len();
    }
    let rate = accepted as f64 / (1000 * b) as f64;
    assert!(rate >= 0.99, "acceptance rate {rate}");
}

#[test]
fn acceptance_frequencies_match_the_curve() {
    let mut rng = rng(6);
    let ps = [0.0, 0.125, 0.25, 0.5, 0.625, 0.875, 1.0, 0.375];
    let batch = assessment(&ps);
    let rule = SelectionRule::ProficiencyAware { t: 2.0, eps: EPS };
    let trials = 20_000;
    let mut counts = [0usize; 8];
    for _ in 0..trials {
        for i in filter_batch(&batch, rule, &mut rng) {
            counts[i] += 1;
        }
    }
    for (i, &p) in ps.iter().enumerate() {
        let prob = selection_prob(p, batch.mu_p, 2.0, EPS);
        let freq = counts[i] as f64 / trials as f64;
        let se = (prob * (1.0 - prob) / trials as f64).sqrt();
        assert!((freq - prob).abs() <= 3.0 * se + 1e-12, "p {p}: {freq} vs {prob}");
    }
}

#[test]
fn degenerate_batches_are_discarded_and_dapo_keeps_mixed_samples() {
    let mut rng = rng(7);
    for rule in [SelectionRule::NonDegenerate, SelectionRule::ProficiencyAware { t: 0.1, eps: EPS }] {
        assert!(filter_batch(&assessment(&[0.0; 4]), rule, &mut rng).is_empty());
        assert!(filter_batch(&assessment(&[1.0; 4]), rule, &mut rng).is_empty());
    }
    let batch = assessment(&[0.0, 0.5, 1.0, 0.125, 1.0]);
    assert_eq!(filter_batch(&batch, SelectionRule::NonDegenerate, &mut rng), vec![1, 3]);
    assert_eq!(filter_batch(&batch, SelectionRule::All, &mut rng), vec![0, 1, 2, 3, 4]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curve_is_unimodal_with_unit_peak_at_the_mean(mu in 0.02f64..0.98, t in 0.05f64..5.0) {
        let g = grid();
        let vals: Vec<f64> = g.iter().map(|&p| selection_prob(p, mu, t, EPS)).collect();
        prop_assert_eq!(vals[0], 0.0);
        prop_assert_eq!(vals[vals.len() - 1], 0.0);
        let (peak, &best) = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        prop_assert!((g[peak] - mu).abs() <= 1e-3);
        prop_assert!((selection_prob(mu, mu, t, EPS) - 1.0).abs() <= 1e-6);
        prop_assert!((best - 1.0).abs() <= 1e-6);
        for i in 1..vals.len() {
            if i <= peak {
                prop_assert!(vals[i] > vals[i - 1], "not increasing at {}", g[i]);
            } else {
                prop_assert!(vals[i] < vals[i - 1], "not decreasing at {}", g[i]);
            }
        }
    }

    #[test]
    fn acceptance_is_a_probability(p in 0.0f64..=1.0, mu in 0.0f64..=1.0, t in 0.01f64..10.0) {
        let v = selection_prob(p, mu, t, EPS);
        prop_assert!((0.0..=1.0).contains(&v));
    }
}
