//! Pushes Gaussian noise through a generator network and writes the resulting
//! frequencies and phases as CSV.
//!
//! cargo run --release --example spectrum_export > omegas.csv

use dapp::fourier::{draw_phases, write_feature_csv};
use dapp::spectrum::{sample_noise, GeneratorParams};

fn main() {
    let mut rng = dapp::rng::seeded(9);
    let generator = GeneratorParams::new(16, &[32, 32], 2, &mut rng);
    let noise = sample_noise(generator.noise_dim(), 500, &mut rng);
    let omegas = generator.generate(&noise).unwrap();
    let phases = draw_phases(omegas.rows(), &mut rng);

    let n = omegas.rows() as f64;
    let means: Vec<f64> = (0..omegas.cols())
        .map(|j| (0..omegas.rows()).map(|i| omegas.get(i, j)).sum::<f64>() / n)
        .collect();
    eprintln!("{} frequencies, per-coordinate means {means:.3?}", omegas.rows());
    write_feature_csv(&omegas, &phases, &mut std::io::stdout().lock()).unwrap();
}
