//! Trains a small DAPP on Hawkes data and compares it with the Hawkes fit.
//!
//! cargo run --release --example train_dapp [iterations]

use dapp::attention::{Dapp, ModelConfig};
use dapp::hawkes::fit_hawkes;
use dapp::likelihood::{average_loglik, IntegrationConfig};
use dapp::simulation::gen_hawkes;
use dapp::train::{evaluation_draw, train, TrainConfig};

fn main() {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let train_ds = gen_hawkes(10.0, 0.5, 1.0, 2.0, 300, 1).unwrap();
    let test = gen_hawkes(10.0, 0.5, 1.0, 2.0, 50, 2).unwrap();
    let ic = IntegrationConfig::default();

    let model = ModelConfig {
        hidden: vec![32, 32],
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        iterations,
        learning_rate: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&train_ds, &model, &tc, &ic).unwrap();
    for (i, loss) in out.trace.iter().enumerate().step_by((iterations / 10).max(1)) {
        println!("iteration {i:4}  loss {loss:.3}");
    }

    let draw = evaluation_draw(&out.params, 2000, &mut dapp::rng::seeded(4));
    let dapp = Dapp::new(&out.params, &draw).unwrap();
    let hp = fit_hawkes(&train_ds).unwrap().params;
    println!("held-out log-likelihood: dapp {:.3}", average_loglik(&dapp, &test, &ic).unwrap());
    println!("held-out log-likelihood: hawkes {:.3}", average_loglik(&hp, &test, &ic).unwrap());
}
