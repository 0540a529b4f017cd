//! Online attention keeps a bounded set of past events per head. With a
//! budget at least the sequence length it reproduces offline attention
//! exactly; smaller budgets trade accuracy for memory.
//!
//! cargo run --release --example online_attention

use dapp::attention::{Attention, Dapp, FeatureDraw, ModelConfig, ModelParams};
use dapp::events::MarkSpace;
use dapp::likelihood::{sequence_loglik, IntegrationConfig};
use dapp::simulation::Process;

fn main() {
    let mut rng = dapp::rng::seeded(5);
    let params = ModelParams::init(ModelConfig::default(), MarkSpace::TEMPORAL, 5.0, &mut rng);
    let draw = FeatureDraw::sample(&params, 256, &mut rng);
    let seq = Process::Hawkes { mu: 5.0, alpha: 0.6, beta: 1.0 }.sample(4.0, &mut rng).unwrap();
    let ic = IntegrationConfig::default();

    let offline = Dapp::new(&params, &draw).unwrap();
    let reference = sequence_loglik(&offline, &seq, &ic).unwrap();
    println!("{} events, offline log-likelihood {reference:.6}", seq.len());
    for eta in [1, 2, 4, 8, 16, seq.len()] {
        let online = Dapp::new(&params, &draw).unwrap().with_attention(Attention::Online { eta });
        let ll = sequence_loglik(&online, &seq, &ic).unwrap();
        println!("eta {eta:3}  log-likelihood {ll:.6}  difference {:.2e}", ll - reference);
    }

    let online = Dapp::new(&params, &draw).unwrap().with_attention(Attention::Online { eta: 3 });
    let rows = online.score_matrix(&seq, 0);
    if let Some(last) = rows.last() {
        let kept: Vec<usize> = (0..last.len()).filter(|&i| last[i] > 0.0).collect();
        println!("last event attends to {kept:?}");
    }
}
