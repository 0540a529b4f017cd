//! Compares tape gradients of the full training loss with central
//! differences on a three-event sequence.
//!
//! cargo run --release --example gradient_check

use dapp::attention::{FeatureDraw, ModelConfig, ModelParams};
use dapp::autodiff::{grad_check, Matrix};
use dapp::events::{EventSequence, MarkSpace};
use dapp::likelihood::{IntegrationConfig, Scheme};
use dapp::train::{tape_loss, ParamVars, TrainError};

fn main() {
    let cfg = ModelConfig {
        heads: 2,
        value_dim: 3,
        noise_dim: 3,
        feature_dim: 2,
        hidden: vec![4],
        time_scale: 3.0,
    };
    let mut rng = dapp::rng::seeded(2);
    let params = ModelParams::init(cfg, MarkSpace::new(2), 1.0, &mut rng);
    let draw = FeatureDraw::sample(&params, 8, &mut rng);
    let seq = EventSequence::new(
        vec![
            dapp::events::Event::marked(0.2, 0),
            dapp::events::Event::marked(0.5, 1),
            dapp::events::Event::marked(0.55, 0),
        ],
        1.0,
    )
    .unwrap();
    let ic = IntegrationConfig::new(16, Scheme::Trapezoid).unwrap();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let point: Vec<Matrix> = params.tensors().into_iter().map(|(_, m)| m.clone()).collect();

    let report = grad_check(
        |tape, leaves| {
            let vars = ParamVars::from_flat(&params, leaves);
            tape_loss(tape, &vars, &params, &draw, &[&seq], &ic, None).map_err(|e| match e {
                TrainError::Autodiff(a) => a,
                other => panic!("{other}"),
            })
        },
        &point,
        1e-5,
    )
    .unwrap();
    println!("{} parameters in {} tensors", params.parameter_count(), names.len());
    println!(
        "max relative error {:.2e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.max_relative_error, names[report.worst.0], report.worst.1, report.analytic, report.numeric
    );
}
