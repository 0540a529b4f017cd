//! Intensity-recovery error and held-out likelihood for several models on
//! data with a known generating process.
//!
//! cargo run --release --example evaluate_models

use dapp::evaluation::{best_constant_mse, eval_suite, EvalModel, EvalOptions};
use dapp::hawkes::fit_hawkes;
use dapp::simulation::gen_hawkes;

fn main() {
    let train = gen_hawkes(10.0, 0.5, 1.0, 2.0, 500, 1).unwrap();
    let test = gen_hawkes(10.0, 0.5, 1.0, 2.0, 100, 2).unwrap();
    let hp = fit_hawkes(&train).unwrap().params;
    let (constant, constant_mse) = best_constant_mse(&test, 1000).unwrap();
    let truth = test.truth.unwrap().as_model();

    let models = [
        EvalModel { name: "truth".into(), model: &truth, features: None, config_digest: String::new() },
        EvalModel { name: "hawkes".into(), model: &hp, features: None, config_digest: String::new() },
        EvalModel { name: "constant".into(), model: &constant, features: None, config_digest: String::new() },
    ];
    let opts = EvalOptions { timing: true, ..EvalOptions::default() };
    for r in eval_suite(&models, &test, &opts).unwrap() {
        println!(
            "{:9} mse {:8.4}  held-out log-likelihood {:8.3}  ({:.2}s)",
            r.model,
            r.mse.unwrap_or(f64::NAN),
            r.heldout_avg_loglik,
            r.runtime_secs.unwrap_or(0.0)
        );
    }
    println!("best constant rate {:.3} (mse {constant_mse:.4})", constant.rate);
}
