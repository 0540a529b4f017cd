//! Draws the synthetic benchmark datasets and prints their length statistics.
//!
//! cargo run --release --example simulate_synthetic

use dapp::simulation::{calibrate_horizon, gen_hawkes, gen_nhpp1, gen_nhpp2, gen_self_correction, Process};

fn main() {
    let hawkes = Process::Hawkes { mu: 10.0, alpha: 1.0, beta: 1.0 };
    let correcting = Process::SelfCorrection { mu: 10.0, alpha: 1.0 };
    let th = calibrate_horizon(hawkes, 30.0, 500, 7).unwrap();
    let ts = calibrate_horizon(correcting, 30.0, 500, 7).unwrap();
    println!("calibrated horizons: hawkes {th:.4}, self-correction {ts:.4}");

    let sets = [
        ("hawkes", gen_hawkes(10.0, 1.0, 1.0, th, 1000, 1).unwrap()),
        ("self-correction", gen_self_correction(10.0, 1.0, ts, 1000, 2).unwrap()),
        ("nhpp1", gen_nhpp1(100.0, 1000, 3).unwrap()),
        ("nhpp2", gen_nhpp2(50.0, 50.0, 1000, 4).unwrap()),
    ];
    for (name, ds) in &sets {
        println!(
            "{name:16} sequences {:5}  mean length {:6.2}  max length {:4}",
            ds.len(),
            ds.mean_len(),
            ds.max_len()
        );
    }

    let mut buf = Vec::new();
    dapp::events::write_dataset(&sets[0].1, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for line in text.lines().take(2) {
        println!("{}", &line[..line.len().min(120)]);
    }
}
