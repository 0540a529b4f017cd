//! Maximum-likelihood fit of the exponential Hawkes baseline.
//!
//! cargo run --release --example fit_hawkes_baseline

use dapp::hawkes::{fit_hawkes, hawkes_loglik, HawkesParams};
use dapp::simulation::gen_hawkes;

fn main() {
    let truth = HawkesParams::new(10.0, 0.5, 2.0).unwrap();
    let ds = gen_hawkes(truth.mu, truth.alpha, truth.beta, 3.0, 2000, 11).unwrap();
    let fit = fit_hawkes(&ds).unwrap();
    let at_truth: f64 = ds.sequences.iter().map(|s| hawkes_loglik(s, &truth)).sum();
    println!("truth     mu {:.3} alpha {:.3} beta {:.3}", truth.mu, truth.alpha, truth.beta);
    println!(
        "estimate  mu {:.3} alpha {:.3} beta {:.3}  ({} iterations)",
        fit.params.mu, fit.params.alpha, fit.params.beta, fit.iterations
    );
    println!("log-likelihood: fit {:.3}, truth {at_truth:.3}", fit.loglik);
}
