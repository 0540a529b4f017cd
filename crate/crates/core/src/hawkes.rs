//! Exponential-kernel Hawkes baseline:
//! `lambda(t) = mu + alpha * sum_{t_j < t} beta * exp(-beta (t - t_j))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softplus, softplus_inverse, sigmoid, AutodiffError, Matrix, Tape};
use crate::events::{Dataset, Event, EventSequence, MarkSpace};
use crate::likelihood::ConditionalIntensity;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HawkesError {
    #[error("dataset has no sequences")]
    EmptyDataset,
    #[error("Hawkes parameters must be positive: mu={mu}, alpha={alpha}, beta={beta}")]
    InvalidParams { mu: f64, alpha: f64, beta: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesParams {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl HawkesParams {
    pub fn new(mu: f64, alpha: f64, beta: f64) -> Result<Self, HawkesError> {
        if !(mu > 0.0 && alpha > 0.0 && beta > 0.0) || !(mu.is_finite() && alpha.is_finite() && beta.is_finite()) {
            return Err(HawkesError::InvalidParams { mu, alpha, beta });
        }
        Ok(Self { mu, alpha, beta })
    }

    /// Intensity just after time `t` given events at or before `t`.
    pub fn excitation(&self, t: f64, history: &[Event]) -> f64 {
        history
            .iter()
            .map(|e| (-self.beta * (t - e.t)).exp())
            .sum::<f64>()
            * self.alpha
            * self.beta
    }
}

impl ConditionalIntensity for HawkesParams {
    fn intensity(&self, t: f64, _mark: Option<usize>, history: &[Event]) -> f64 {
        self.mu + self.excitation(t, history)
    }

    fn mark_space(&self) -> MarkSpace {
        MarkSpace::TEMPORAL
    }
}

/// Closed-form log-likelihood using the O(n) recursion
/// `A_i = exp(-beta (t_i - t_{i-1})) (1 + A_{i-1})`, `A_1 = 0`.
pub fn hawkes_loglik(seq: &EventSequence, hp: &HawkesParams) -> f64 {
    let HawkesParams { mu, alpha, beta } = *hp;
    let horizon = seq.horizon();
    let mut ll = -mu * horizon;
    let mut a = 0.0;
    let mut prev: Option<f64> = None;
    for e in seq.events() {
        if let Some(p) = prev {
            a = (-beta * (e.t - p)).exp() * (1.0 + a);
        }
        ll += (mu + alpha * beta * a).ln();
        ll -= alpha * (1.0 - (-beta * (horizon - e.t)).exp());
        prev = Some(e.t);
    }
    ll
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesFit {
    pub params: HawkesParams,
    /// Summed log-likelihood over the training sequences.
    pub loglik: f64,
    pub iterations: usize,
    /// The optimum lies on the boundary of the parameter space.
    pub boundary: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-8,
        }
    }
}

/// Flattened dataset columns used by the vectorized objective.
struct Columns {
    /// Gap to the previous event of the same sequence (0 for first events).
    gaps: Matrix,
    /// 0 for the first event of each sequence, 1 otherwise.
    linked: Matrix,
    /// Time from each event to its sequence's horizon.
    remaining: Matrix,
    events: usize,
    total_horizon: f64,
}

impl Columns {
    fn new(ds: &Dataset) -> Self {
        let mut gaps = Vec::new();
        let mut linked = Vec::new();
        let mut remaining = Vec::new();
        for s in &ds.sequences {
            let mut prev = None;
            for e in s.events() {
                gaps.push(prev.map_or(0.0, |p| e.t - p));
                linked.push(if prev.is_some() { 1.0 } else { 0.0 });
                remaining.push(s.horizon() - e.t);
                prev = Some(e.t);
            }
        }
        let n = gaps.len();
        Self {
            gaps: Matrix::from_vec(n, 1, gaps),
            linked: Matrix::from_vec(n, 1, linked),
            remaining: Matrix::from_vec(n, 1, remaining),
            events: n,
            total_horizon: ds.sequences.iter().map(EventSequence::horizon).sum(),
        }
    }

    /// Objective and gradient in the unconstrained coordinates
    /// `theta = softplus^{-1}(mu, alpha, beta)`.
    fn evaluate(&self, theta: [f64; 3]) -> Result<(f64, [f64; 3]), AutodiffError> {
        let mut tape = Tape::new();
        let raw: Vec<_> = theta.iter().map(|&v| tape.leaf(Matrix::scalar(v))).collect();
        let mu = tape.softplus(raw[0]);
        let alpha = tape.softplus(raw[1]);
        let beta = tape.softplus(raw[2]);

        let gaps = tape.constant(self.gaps.clone());
        let linked = tape.constant(self.linked.clone());
        let remaining = tape.constant(self.remaining.clone());

        let bg = tape.mul(gaps, beta)?;
        let nbg = tape.neg(bg);
        let decay = tape.exp(nbg);
        let decay = tape.mul(decay, linked)?;
        let a = tape.linear_scan(decay, decay)?;
        let ab = tape.mul(alpha, beta)?;
        let excite = tape.mul(a, ab)?;
        let lam = tape.add(excite, mu)?;
        let log_lam = tape.log(lam)?;
        let event_term = tape.sum(log_lam);

        let br = tape.mul(remaining, beta)?;
        let nbr = tape.neg(br);
        let tail = tape.exp(nbr);
        let tail_sum = tape.sum(tail);
        let n = tape.scalar_constant(self.events as f64);
        let mass = tape.sub(n, tail_sum)?;
        let branch = tape.mul(alpha, mass)?;
        let base = tape.scale(mu, self.total_horizon);
        let comp = tape.add(branch, base)?;
        let ll = tape.sub(event_term, comp)?;

        let grads = tape.backward(ll)?;
        let g = [0, 1, 2].map(|i| grads.wrt(raw[i], (1, 1)).item());
        Ok((tape.value(ll).item(), g))
    }
}

fn solve3(h: &[[f64; 3]; 3], g: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (0..3).map(|j| h[i][j] * g[j]).sum();
    }
    out
}

/// Maximum likelihood fit by gradient ascent on softplus-reparameterized
/// parameters: quasi-Newton (BFGS) ascent directions with a backtracking
/// line search, stopped when the relative improvement drops below
/// `tolerance` or after `max_iterations` steps.
pub fn fit_hawkes_with(ds: &Dataset, cfg: &FitConfig) -> Result<HawkesFit, HawkesError> {
    if ds.is_empty() {
        return Err(HawkesError::EmptyDataset);
    }
    let cols = Columns::new(ds);
    if cols.events == 0 {
        let params = HawkesParams {
            mu: f64::MIN_POSITIVE,
            alpha: f64::MIN_POSITIVE,
            beta: 1.0,
        };
        return Ok(HawkesFit {
            params,
            loglik: -params.mu * cols.total_horizon,
            iterations: 0,
            boundary: true,
        });
    }

    let rate = cols.events as f64 / cols.total_horizon;
    let mean_horizon = cols.total_horizon / ds.len() as f64;
    let mut theta = [
        softplus_inverse(0.5 * rate),
        softplus_inverse(0.5),
        softplus_inverse(4.0 / mean_horizon),
    ];
    let (mut f, mut g) = cols.evaluate(theta)?;
    let mut inv_h = [[0.0; 3]; 3];
    let reset = |inv_h: &mut [[f64; 3]; 3], scale: f64| {
        *inv_h = [[0.0; 3]; 3];
        for (i, row) in inv_h.iter_mut().enumerate() {
            row[i] = scale;
        }
    };
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    reset(&mut inv_h, 1.0 / gnorm.max(1.0));

    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut dir = solve3(&inv_h, &g);
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if !(slope > 0.0) {
            reset(&mut inv_h, 1.0 / gnorm.max(1.0));
            dir = solve3(&inv_h, &g);
            slope = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = [0, 1, 2].map(|i| theta[i] + step * dir[i]);
            if let Ok((fc, gc)) = cols.evaluate(cand) {
                if fc.is_finite() && fc >= f + 1e-4 * step * slope {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let s = [0, 1, 2].map(|i| cand[i] - theta[i]);
        // ascent on f is descent on -f
        let y = [0, 1, 2].map(|i| g[i] - gc[i]);
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let hy = solve3(&inv_h, &y);
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..3 {
                for j in 0..3 {
                    inv_h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        let improvement = (fc - f) / f.abs().max(1e-300);
        theta = cand;
        f = fc;
        g = gc;
        if improvement < cfg.tolerance {
            break;
        }
    }

    let params = HawkesParams {
        mu: softplus(theta[0]),
        alpha: softplus(theta[1]),
        beta: softplus(theta[2]),
    };
    let boundary = [0, 1, 2].iter().any(|&i| sigmoid(theta[i]) < 1e-12);
    Ok(HawkesFit {
        params,
        loglik: f,
        iterations,
        boundary,
    })
}

pub fn fit_hawkes(ds: &Dataset) -> Result<HawkesFit, HawkesError> {
    fit_hawkes_with(ds, &FitConfig::default())
}
