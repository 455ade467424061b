//! Runs SFT, GRPO, DAPO and APARL from the same base policy on a reduced
//! dataset and prints the comparison table.
//!
//! ```text
//! cargo run --release --example compare_algorithms -- [out_dir] [n_seeds]
//! ```

use std::path::PathBuf;

use aparl::cli::{cmd_compare, render_table};
use aparl::RunConfig;

fn main() -> aparl::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "compare-out".into()));
    let n_seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);

    let mut cfg = RunConfig::default();
    cfg.data.n_train = 512;
    cfg.data.n_test = 128;
    cfg.train.epochs = 3;
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let cmp = cmd_compare(&cfg, &seeds, &out)?;
    print!("{}", render_table(&cmp.table));
    for r in cmp.results.iter().filter(|r| r.algorithm != "base") {
        println!(
            "{:>5} seed {}: {} steps, {} rollouts, {} promoted",
            r.algorithm,
            r.seed,
            r.steps.unwrap_or(0),
            r.rollouts.unwrap_or(0),
            r.promoted.unwrap_or(0)
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}
