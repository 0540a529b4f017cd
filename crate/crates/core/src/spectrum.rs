//! Noise-to-frequency generator representing a learned spectral distribution.
//!
//! Frequencies are the pushforward of standard normal noise through a fully
//! connected network `q -> hidden... -> r` with softplus hidden activations
//! and an affine output layer. Because frequencies are a deterministic
//! function of the noise, gradients of any downstream score flow back into
//! the generator weights.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softplus, AutodiffError, Matrix, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("noise batch has width {found}, generator expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("spectral scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("need at least one feature")]
    EmptyBatch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(x),
        }
    }
}

/// Affine layer `y = x W + b` acting on row vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `in x out`
    pub weight: Matrix,
    /// `1 x out`
    pub bias: Matrix,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(inputs, outputs),
            bias: Matrix::zeros(1, outputs),
        }
    }

    /// Weights drawn from N(0, 1/fan_in), zero bias.
    pub fn random(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (inputs as f64).sqrt();
        let normal = Normal::new(0.0, scale).expect("positive scale");
        Self {
            weight: Matrix::from_fn(inputs, outputs, |_, _| normal.sample(rng)),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

impl GeneratorParams {
    /// Randomly initialised generator with the given hidden widths.
    pub fn new(noise_dim: usize, hidden: &[usize], feature_dim: usize, rng: &mut impl Rng) -> Self {
        assert!(noise_dim >= 1 && feature_dim >= 1, "generator dims must be >= 1");
        let widths: Vec<usize> = std::iter::once(noise_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(feature_dim))
            .collect();
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::random(w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activation: Activation::Softplus,
        }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Self {
        assert!(!layers.is_empty(), "generator needs at least one layer");
        for w in layers.windows(2) {
            assert_eq!(w[0].outputs(), w[1].inputs(), "generator layers do not chain");
        }
        Self {
            layers,
            activation: Activation::Softplus,
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map(DenseLayer::outputs).unwrap_or(0)
    }

    /// Maps a `D x q` noise batch to `D x r` frequencies.
    pub fn generate(&self, noise: &Matrix) -> Result<Matrix, SpectrumError> {
        if noise.cols() != self.noise_dim() {
            return Err(SpectrumError::ShapeMismatch {
                expected: self.noise_dim(),
                found: noise.cols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = noise.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = h.matmul(&layer.weight);
            let cols = next.cols();
            let bias = layer.bias.as_slice();
            for (k, v) in next.as_mut_slice().iter_mut().enumerate() {
                *v += bias[k % cols];
                if i != last {
                    *v = self.activation.apply(*v);
                }
            }
            h = next;
        }
        Ok(h)
    }

    /// Records the same forward pass on a tape. `layer_vars` holds
    /// `(weight, bias)` leaves in layer order.
    pub fn generate_on_tape(
        &self,
        tape: &mut Tape,
        layer_vars: &[(Var, Var)],
        noise: Var,
    ) -> Result<Var, AutodiffError> {
        let last = layer_vars.len() - 1;
        let mut h = noise;
        for (i, &(w, b)) in layer_vars.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, b)?;
            h = if i == last {
                z
            } else {
                match self.activation {
                    Activation::Softplus => tape.softplus(z),
                }
            };
        }
        Ok(h)
    }
}

/// `count` i.i.d. standard normal rows of width `dim`.
pub fn sample_noise(dim: usize, count: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(count, dim, |_, _| StandardNormal.sample(rng))
}

/// Frequencies from N(0, sigma^2 I_r): the spectrum of the Gaussian kernel
/// `exp(-sigma^2 |delta|^2 / 2)`.
pub fn gaussian_spectrum_reference(
    sigma: f64,
    dim: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Matrix, SpectrumError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SpectrumError::InvalidScale(sigma));
    }
    if count == 0 {
        return Err(SpectrumError::EmptyBatch);
    }
    let normal = Normal::new(0.0, sigma).expect("validated scale");
    Ok(Matrix::from_fn(count, dim, |_, _| normal.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn noise_shape_and_determinism() {
        let a = sample_noise(2, 3, &mut seeded(7));
        assert_eq!(a.shape(), (3, 2));
        assert_eq!(a, sample_noise(2, 3, &mut seeded(7)));
        assert_ne!(a, sample_noise(2, 3, &mut seeded(8)));
    }

    #[test]
    fn noise_mean_concentrates() {
        let d = 100_000;
        let z = sample_noise(3, d, &mut seeded(1));
        for j in 0..3 {
            let mean: f64 = (0..d).map(|i| z.get(i, j)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 0.02, "coordinate {j} mean {mean}");
        }
    }

    #[test]
    fn constant_map_from_zero_weights() {
        let mut g = GeneratorParams::new(3, &[5, 4], 2, &mut seeded(2));
        for l in &mut g.layers {
            l.weight = Matrix::zeros(l.inputs(), l.outputs());
        }
        g.layers.last_mut().unwrap().bias = Matrix::row_vector(&[0.7, -1.3]);
        let w = g.generate(&sample_noise(3, 6, &mut seeded(3))).unwrap();
        for i in 0..6 {
            assert_eq!(w.row(i), &[0.7, -1.3]);
        }
    }

    #[test]
    fn identity_single_layer() {
        let g = GeneratorParams::from_layers(vec![DenseLayer {
            weight: Matrix::identity(4),
            bias: Matrix::zeros(1, 4),
        }]);
        let z = sample_noise(4, 5, &mut seeded(4));
        assert_eq!(g.generate(&z).unwrap(), z);
    }

    #[test]
    fn width_mismatch() {
        let g = GeneratorParams::new(3, &[4], 2, &mut seeded(0));
        assert_eq!(
            g.generate(&Matrix::zeros(2, 5)),
            Err(SpectrumError::ShapeMismatch { expected: 3, found: 5 })
        );
    }

    #[test]
    fn gaussian_reference() {
        let w = gaussian_spectrum_reference(1.0, 1, 100_000, &mut seeded(5)).unwrap();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
        assert_eq!(
            gaussian_spectrum_reference(0.0, 1, 5, &mut seeded(5)),
            Err(SpectrumError::InvalidScale(0.0))
        );
        assert_eq!(
            gaussian_spectrum_reference(2.0, 3, 1, &mut seeded(5)).unwrap().shape(),
            (1, 3)
        );
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let g = GeneratorParams::new(3, &[8, 6], 2, &mut seeded(9));
        let z = sample_noise(3, 4, &mut seeded(10));
        let mut tape = Tape::new();
        let vars: Vec<(Var, Var)> = g
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        let zv = tape.constant(z.clone());
        let out = g.generate_on_tape(&mut tape, &vars, zv).unwrap();
        assert_eq!(tape.value(out), &g.generate(&z).unwrap());
    }
}
