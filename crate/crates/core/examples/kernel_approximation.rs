//! Random Fourier features for the Gaussian kernel: pointwise error and how
//! the sup-error shrinks with the feature count.
//!
//! cargo run --release --example kernel_approximation

use dapp::fourier::{concentration_probe, draw_phases, raw_score, FourierFeatureBatch, KeyMap};
use dapp::spectrum::gaussian_spectrum_reference;

fn main() {
    let mut rng = dapp::rng::seeded(1);
    let key = KeyMap::identity(1);

    let omegas = gaussian_spectrum_reference(1.0, 1, 10_000, &mut rng).unwrap();
    let fb = FourierFeatureBatch::new(omegas, draw_phases(10_000, &mut rng), 0).unwrap();
    println!("delta   estimate  exact");
    for i in 0..7 {
        let delta = i as f64 * 0.5;
        let est = raw_score(&[delta], &[0.0], &fb, &key).unwrap();
        println!("{delta:5.2}  {est:8.4}  {:8.4}", (-delta * delta / 2.0).exp());
    }

    let points: Vec<Vec<f64>> = (0..11).map(|i| vec![-1.0 + 0.2 * i as f64]).collect();
    let rows = concentration_probe(
        |d, r| gaussian_spectrum_reference(1.0, 1, d, r).unwrap(),
        |a, b| (-(a[0] - b[0]).powi(2) / 2.0).exp(),
        &points,
        &key,
        &[250, 1000, 4000],
        30,
        &mut rng,
    )
    .unwrap();
    println!("\nfeatures  median sup-error");
    for r in &rows {
        println!("{:8}  {:.5}", r.features, r.median);
    }
}
