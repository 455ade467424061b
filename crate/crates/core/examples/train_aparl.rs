//! Trains one APARL run on the default synthetic dataset and prints the
//! evaluation curve.
//!
//! ```text
//! cargo run --release --example train_aparl -- [algorithm] [seed]
//! ```

use std::time::Instant;

use aparl::task_env::generate_dataset;
use aparl::trainer::{base_policy, evaluate, train_from};
use aparl::{Algorithm, RunConfig};

fn main() -> aparl::Result<()> {
    let mut args = std::env::args().skip(1);
    let algorithm: Algorithm = args.next().as_deref().unwrap_or("aparl").parse()?;
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = RunConfig::default().variant(algorithm, seed);
    let (train, test) = generate_dataset(&cfg.data)?;

    let start = Instant::now();
    let base = base_policy(&cfg)?;
    let row = evaluate(&base, &test, &cfg, 0)?;
    println!("base policy: f1 {:.3} format {:.3} ({:.1?})", row.f1, row.format_rate, start.elapsed());

    let out = train_from(&cfg, &train, &test, base, None)?;
    println!("step  f1     score   len   format");
    for e in &out.log.evals {
        println!(
            "{:>4}  {:.3}  {:+.3}  {:.2}  {:.3}",
            e.step, e.f1, e.validation_score, e.mean_response_len, e.format_rate
        );
    }
    let mu: Vec<String> = out
        .log
        .steps
        .iter()
        .map(|r| r.mu_p.map_or("-".into(), |m| format!("{m:.2}")))
        .collect();
    println!("mu_p: {}", mu.join(" "));
    println!("rollouts {} in {:.1?}", out.log.total_rollouts(), start.elapsed());
    Ok(())
}
