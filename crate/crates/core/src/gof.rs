//! Goodness-of-fit statistics used by the sampler checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::events::EventSequence;
use crate::likelihood::ConditionalIntensity;

/// Kolmogorov survival function `Q(x) = 2 sum_k (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value for a KS statistic with effective sample size `n`.
fn ks_p_value(d: f64, n: f64) -> f64 {
    let s = n.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

/// KS test against Exp(1).
pub fn ks_exponential(samples: &[f64]) -> KsResult {
    ks_one_sample(samples, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() })
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, ne),
    }
}

/// Pearson chi-square test of `observed` counts against `expected` counts;
/// returns `(statistic, p_value)` with `bins - 1` degrees of freedom.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> (f64, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = (observed.len().max(2) - 1) as f64;
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}

/// Compensator increments between consecutive events (from 0 for the first
/// event), integrated with composite Simpson on `steps` subintervals per gap.
/// Under the true model these are i.i.d. Exp(1).
pub fn time_rescaled_gaps<M: ConditionalIntensity + ?Sized>(model: &M, seq: &EventSequence, steps: usize) -> Vec<f64> {
    let steps = steps.max(2) & !1;
    let events = seq.events();
    let marks = model.mark_space().marks();
    let total = |t: f64, count: usize| -> f64 { marks.iter().map(|&m| model.intensity(t, m, &events[..count])).sum() };
    let mut out = Vec::with_capacity(events.len());
    let mut prev = 0.0;
    for (i, e) in events.iter().enumerate() {
        let h = (e.t - prev) / steps as f64;
        let mut acc = total(prev, i) + total(e.t, i);
        for k in 1..steps {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * total(prev + k as f64 * h, i);
        }
        out.push(acc * h / 3.0);
        prev = e.t;
    }
    out
}
