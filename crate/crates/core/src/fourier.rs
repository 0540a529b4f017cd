//! Random Fourier features and the empirical kernel score.
//!
//! For frequencies `w_j` and phases `b_j`, an embedded event `x` maps to
//! `Phi(x)_j = sqrt(2/D) cos(w_j^T W_u x + b_j)`, so `Phi(x)^T Phi(x')`
//! is the Monte Carlo estimate of the shift-invariant kernel whose spectral
//! distribution produced the frequencies.

use std::f64::consts::TAU;
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{dot, Matrix};
use crate::spectrum::{sample_noise, GeneratorParams, SpectrumError};

/// Lower bound applied to empirical scores so they stay in R+.
pub const SCORE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FourierError {
    #[error("feature batch needs D >= 1 with one phase per frequency (got {omegas} frequencies, {phases} phases)")]
    BatchSize { omegas: usize, phases: usize },
    #[error("phase {0} outside [0, 2pi)")]
    PhaseRange(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// `D` sampled frequencies with their phase offsets, for one head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierFeatureBatch {
    omegas: Matrix,
    phases: Vec<f64>,
    head: usize,
}

impl FourierFeatureBatch {
    pub fn new(omegas: Matrix, phases: Vec<f64>, head: usize) -> Result<Self, FourierError> {
        if omegas.rows() == 0 || omegas.rows() != phases.len() {
            return Err(FourierError::BatchSize {
                omegas: omegas.rows(),
                phases: phases.len(),
            });
        }
        if let Some(&p) = phases.iter().find(|&&p| !(0.0..TAU).contains(&p)) {
            return Err(FourierError::PhaseRange(p));
        }
        Ok(Self {
            omegas,
            phases,
            head,
        })
    }

    /// Draws `count` noise vectors, pushes them through `generator` and pairs
    /// each frequency with a fresh uniform phase.
    pub fn from_generator(
        generator: &GeneratorParams,
        count: usize,
        head: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, FourierError> {
        let noise = sample_noise(generator.noise_dim(), count, rng);
        let omegas = generator.generate(&noise)?;
        let phases = draw_phases(count, rng);
        Self::new(omegas, phases, head)
    }

    pub fn omegas(&self) -> &Matrix {
        &self.omegas
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        write_feature_csv(&self.omegas, &self.phases, w)
    }
}

/// `count` phases uniform on `[0, 2pi)`.
pub fn draw_phases(count: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let p = rng.random::<f64>() * TAU;
            if p >= TAU {
                0.0
            } else {
                p
            }
        })
        .collect()
}

/// CSV with one row per feature: `omega_0,...,omega_{r-1},phase`.
pub fn write_feature_csv(omegas: &Matrix, phases: &[f64], w: &mut impl Write) -> io::Result<()> {
    let header: Vec<String> = (0..omegas.cols())
        .map(|j| format!("omega_{j}"))
        .chain(std::iter::once("phase".to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (i, phase) in phases.iter().enumerate() {
        for v in omegas.row(i) {
            write!(w, "{v},")?;
        }
        writeln!(w, "{phase}")?;
    }
    Ok(())
}

/// Key embedding `W_u` (`r x d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyMap {
    pub weight: Matrix,
}

impl KeyMap {
    pub fn new(weight: Matrix) -> Self {
        Self { weight }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(Matrix::identity(dim))
    }
}

/// `Phi(x)` for one embedded point.
pub fn feature_map(
    x: &[f64],
    fb: &FourierFeatureBatch,
    km: &KeyMap,
) -> Result<Vec<f64>, FourierError> {
    let (r, d) = km.weight.shape();
    if x.len() != d || fb.omegas.cols() != r {
        return Err(FourierError::ShapeMismatch(format!(
            "x has {} coords, W_u is {r}x{d}, frequencies have {} coords",
            x.len(),
            fb.omegas.cols()
        )));
    }
    let key = km.weight.matmul(&Matrix::column(x));
    let norm = (2.0 / fb.len() as f64).sqrt();
    Ok((0..fb.len())
        .map(|j| norm * (dot(fb.omegas.row(j), key.as_slice()) + fb.phases[j]).cos())
        .collect())
}

/// `Phi(x)^T Phi(x')` without the floor.
pub fn raw_score(
    x: &[f64],
    y: &[f64],
    fb: &FourierFeatureBatch,
    km: &KeyMap,
) -> Result<f64, FourierError> {
    Ok(dot(&feature_map(x, fb, km)?, &feature_map(y, fb, km)?))
}

/// Empirical score floored at [`SCORE_FLOOR`].
pub fn score(
    x: &[f64],
    y: &[f64],
    fb: &FourierFeatureBatch,
    km: &KeyMap,
) -> Result<f64, FourierError> {
    Ok(raw_score(x, y, fb, km)?.max(SCORE_FLOOR))
}

/// Frequencies pre-multiplied by the key map (`D x d` rows `w_j^T W_u`), the
/// form used on hot paths.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedFeatures {
    projection: Matrix,
    phases: Vec<f64>,
    norm: f64,
}

impl ProjectedFeatures {
    pub fn new(fb: &FourierFeatureBatch, km: &KeyMap) -> Result<Self, FourierError> {
        if fb.omegas.cols() != km.weight.rows() {
            return Err(FourierError::ShapeMismatch(format!(
                "frequencies have {} coords, W_u has {} rows",
                fb.omegas.cols(),
                km.weight.rows()
            )));
        }
        Ok(Self {
            projection: fb.omegas.matmul(&km.weight),
            phases: fb.phases.clone(),
            norm: (2.0 / fb.len() as f64).sqrt(),
        })
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        (0..self.phases.len())
            .map(|j| self.norm * (dot(self.projection.row(j), x) + self.phases[j]).cos())
            .collect()
    }
}

/// Floored score between two precomputed feature vectors.
#[inline]
pub fn score_from_features(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).max(SCORE_FLOOR)
}

/// Sup-error statistics for one feature count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub features: usize,
    pub median: f64,
    pub mean: f64,
    pub sup_errors: Vec<f64>,
}

/// Estimates `sup |Phi(x)^T Phi(x') - k(x, x')|` over all pairs of `points`
/// for each feature count, repeating the feature draw `redraws` times.
/// `sampler(D, rng)` must return `D x r` frequencies from the spectrum of
/// the exact kernel `kernel`.
pub fn concentration_probe<R: Rng>(
    mut sampler: impl FnMut(usize, &mut R) -> Matrix,
    kernel: impl Fn(&[f64], &[f64]) -> f64,
    points: &[Vec<f64>],
    key: &KeyMap,
    feature_counts: &[usize],
    redraws: usize,
    rng: &mut R,
) -> Result<Vec<ProbeRow>, FourierError> {
    let mut exact = Vec::new();
    for i in 0..points.len() {
        for j in i..points.len() {
            exact.push((i, j, kernel(&points[i], &points[j])));
        }
    }
    let mut rows = Vec::with_capacity(feature_counts.len());
    for &count in feature_counts {
        let mut sups = Vec::with_capacity(redraws);
        for _ in 0..redraws {
            let omegas = sampler(count, rng);
            let phases = draw_phases(count, rng);
            let fb = FourierFeatureBatch::new(omegas, phases, 0)?;
            let proj = ProjectedFeatures::new(&fb, key)?;
            let feats: Vec<Vec<f64>> = points.iter().map(|p| proj.features(p)).collect();
            let sup = exact
                .iter()
                .map(|&(i, j, k)| (dot(&feats[i], &feats[j]) - k).abs())
                .fold(0.0, f64::max);
            sups.push(sup);
        }
        rows.push(ProbeRow {
            features: count,
            median: median(&sups),
            mean: sups.iter().sum::<f64>() / sups.len().max(1) as f64,
            sup_errors: sups,
        });
    }
    Ok(rows)
}

/// Right-hand side of the uniform concentration bound
/// `(48 R sigma_p / eps)^2 exp(-D eps^2 / (4 (d + 2)))`.
pub fn concentration_bound(radius: f64, sigma_p: f64, eps: f64, dim: usize, features: usize) -> f64 {
    let lead = 48.0 * radius * sigma_p / eps;
    lead * lead * (-(features as f64) * eps * eps / (4.0 * (dim as f64 + 2.0))).exp()
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
