//! Generates the default dataset, prints its tier mix and one rendered
//! sample per tier with every token spelled out.
//!
//! ```text
//! cargo run --release --example generate_data
//! ```

use aparl::reward::format_answer;
use aparl::task_env::{generate_dataset, tier_counts, DatasetSpec, NUM_TIERS};
use aparl::vocab::{TokenId, TokenKind, Vocab, ANS_CLOSE, ANS_OPEN, BOS, EOS, SEP};

fn spell(tok: TokenId, vocab: &Vocab) -> String {
    match tok {
        BOS => "<bos>".into(),
        EOS => "<eos>".into(),
        SEP => "<sep>".into(),
        ANS_OPEN => "<ans>".into(),
        ANS_CLOSE => "</ans>".into(),
        _ => match vocab.kind(tok) {
            Some(TokenKind::Role(r)) => format!("\n  [{r:?}]"),
            Some(TokenKind::Event(e)) => format!("E{e}"),
            Some(TokenKind::Cue(e, c)) => format!("c{e}.{c}"),
            Some(TokenKind::Filler) => "·".into(),
            _ => format!("#{tok}"),
        },
    }
}

fn main() -> aparl::Result<()> {
    let spec = DatasetSpec::default();
    let (train, test) = generate_dataset(&spec)?;
    println!("train {} test {} vocab {}", train.len(), test.len(), spec.vocab.size());
    println!("tier counts train {:?} test {:?}", tier_counts(&train), tier_counts(&test));

    for tier in 0..NUM_TIERS as u8 {
        let Some(sample) = train.iter().find(|s| s.tier == tier) else {
            continue;
        };
        let prompt: Vec<String> = sample.prompt.iter().map(|&t| spell(t, &spec.vocab)).collect();
        let answer: Vec<String> = format_answer(&sample.gold, &spec.vocab)
            .iter()
            .map(|&t| spell(t, &spec.vocab))
            .collect();
        println!("\n-- sample {} (tier {tier}, gold {:?})", sample.id, sample.gold);
        println!("{}", prompt.join(" "));
        println!("target: {}", answer.join(" "));
    }
    Ok(())
}
