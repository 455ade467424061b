//! Properties of the synthetic dataset, checked with brute-force counters.

use std::collections::BTreeSet;

use aparl::reward::{format_answer, is_correct, parse_response, score, RewardConfig};
use aparl::task_env::{generate_dataset, generate_sample, EventCatalog, GeneratedSample, DatasetSpec};
use aparl::vocab::TokenKind;

fn tier_only(tier: usize) -> DatasetSpec {
    let mut spec = DatasetSpec::default();
    spec.tier_mix = vec![0.0; 4];
    spec.tier_mix[tier] = 1.0;
    spec
}

fn population(spec: &DatasetSpec, n: u64) -> Vec<GeneratedSample> {
    let catalog = EventCatalog::from_vocab(&spec.vocab);
    (0..n).map(|id| generate_sample(spec, &catalog, id).unwrap()).collect()
}

/// Cue tokens per event inside the visible window.
fn cue_counts(spec: &DatasetSpec, g: &GeneratedSample) -> Vec<usize> {
    let mut counts = vec![0; spec.vocab.n_events as usize];
    for u in g.dialogue.visible() {
        for &tok in &u.tokens {
            if let Some(TokenKind::Cue(e, _)) = spec.vocab.kind(tok) {
                counts[e as usize] += 1;
            }
        }
    }
    counts
}

fn uncorrupted_gold_cues(spec: &DatasetSpec, g: &GeneratedSample) -> usize {
    let counts = cue_counts(spec, g);
    g.sample.gold.iter().map(|&e| counts[e as usize]).sum()
}

#[test]
fn noisy_tier_keeps_fewer_gold_cues() {
    let mut hard = tier_only(3);
    hard.noise[3] = 0.5;
    let easy = tier_only(0);
    let mean = |spec: &DatasetSpec| {
        let pop = population(spec, 1000);
        pop.iter().map(|g| uncorrupted_gold_cues(spec, g)).sum::<usize>() as f64 / pop.len() as f64
    };
    let (m_easy, m_hard) = (mean(&easy), mean(&hard));
    assert!(m_hard < m_easy, "tier 3 mean {m_hard} vs tier 0 mean {m_easy}");
}

#[test]
fn cue_counting_oracle_degrades_with_tier() {
    let mut rates = Vec::new();
    for tier in 0..4 {
        let spec = tier_only(tier);
        let pop = population(&spec, 1000);
        // Predict every event with at least one cue token in the window.
        let hits = pop
            .iter()
            .filter(|g| {
                let counts = cue_counts(&spec, g);
                let predicted: BTreeSet<u32> =
                    (0..counts.len() as u32).filter(|&e| counts[e as usize] >= 1).collect();
                predicted == g.sample.gold
            })
            .count();
        assert!(pop.iter().all(|g| g.sample.tier as usize == tier));
        rates.push(hits as f64 / pop.len() as f64);
    }
    eprintln!("oracle exact match by tier: {rates:?}");
    assert_eq!(rates[0], 1.0, "tier 0 must be solvable by counting cues");
    for w in rates.windows(2) {
        assert!(w[1] < w[0], "oracle exact match by tier: {rates:?}");
    }
}

#[test]
fn gold_answer_earns_the_full_reward() {
    let spec = DatasetSpec::default();
    let cfg = RewardConfig::default();
    for g in population(&spec, 200) {
        let gold = &g.sample.gold;
        assert!(!gold.is_empty() && gold.len() <= spec.max_labels);
        assert!(g.sample.prompt.len() <= spec.prompt_len_max);
        let parse = parse_response(&format_answer(gold, &spec.vocab), &spec.vocab);
        assert!(is_correct(&parse, gold));
        assert_eq!(score(&parse, gold, &cfg), cfg.max_reward());
    }
}

#[test]
fn dataset_is_deterministic_and_disjoint() {
    let mut spec = DatasetSpec::default();
    spec.n_train = 512;
    spec.n_test = 128;
    let (train, test) = generate_dataset(&spec).unwrap();
    assert_eq!((train.len(), test.len()), (512, 128));
    assert_eq!(generate_dataset(&spec).unwrap(), (train.clone(), test.clone()));
    let train_ids: BTreeSet<u64> = train.iter().map(|s| s.id).collect();
    assert_eq!(train_ids.len(), 512);
    assert!(test.iter().all(|s| !train_ids.contains(&s.id)));
}
