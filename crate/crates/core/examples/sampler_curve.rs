//! Prints the acceptance probability as a function of sample proficiency
//! for a few batch means and sharpness values, as CSV.
//!
//! ```text
//! cargo run --release --example sampler_curve > curve.csv
//! ```

use aparl::outer_sampler::selection_prob;

fn main() {
    let eps = 1e-8;
    println!("mu_p,t,p,prob");
    for mu in [0.25, 0.5, 0.75] {
        for t in [0.1, 1.0, 5.0] {
            for i in 0..=40 {
                let p = i as f64 / 40.0;
                println!("{mu},{t},{p},{:.6}", selection_prob(p, mu, t, eps));
            }
        }
    }
}
