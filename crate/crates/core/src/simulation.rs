//! Synthetic generators and thinning samplers.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardUniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{ActiveSet, Attention, Dapp};
use crate::events::{Dataset, Event, EventError, EventSequence, MarkSpace};
use crate::likelihood::ConditionalIntensity;
use crate::rng::stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("{rejections} consecutive proposals rejected near t={t}")]
    ProposalBudgetExceeded { t: f64, rejections: usize },
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("intensity bound {0} is not finite")]
    NonFiniteBound(f64),
    #[error(transparent)]
    Event(#[from] EventError),
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// A ground-truth generative process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Process {
    Poisson { rate: f64 },
    Hawkes { mu: f64, alpha: f64, beta: f64 },
    SelfCorrection { mu: f64, alpha: f64 },
    Nhpp1 { c: f64 },
    Nhpp2 { c1: f64, c2: f64 },
}

impl Process {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let values: Vec<(&str, f64)> = match *self {
            Process::Poisson { rate } => vec![("rate", rate)],
            Process::Hawkes { mu, alpha, beta } => vec![("mu", mu), ("alpha", alpha), ("beta", beta)],
            Process::SelfCorrection { mu, alpha } => vec![("mu", mu), ("alpha", alpha)],
            Process::Nhpp1 { c } => vec![("c", c)],
            Process::Nhpp2 { c1, c2 } => vec![("c1", c1), ("c2", c2)],
        };
        for (name, v) in values {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimulationError::InvalidParameter(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    /// Whether sequences carry a latent scale `u`.
    pub fn has_latent_scale(&self) -> bool {
        matches!(self, Process::Nhpp1 { .. } | Process::Nhpp2 { .. })
    }

    /// `lambda*(t)` given the events before `t`; `u` is the sequence's latent
    /// scale (treated as 1 when absent).
    pub fn intensity(&self, t: f64, history: &[Event], u: Option<f64>) -> f64 {
        let u = u.unwrap_or(1.0);
        match *self {
            Process::Poisson { rate } => rate,
            Process::Hawkes { mu, alpha, beta } => {
                mu + alpha * beta * history.iter().map(|e| (-beta * (t - e.t)).exp()).sum::<f64>()
            }
            Process::SelfCorrection { mu, alpha } => (mu * t - alpha * history.len() as f64).exp(),
            Process::Nhpp1 { c } => c * u * normal_pdf(t - 0.5),
            Process::Nhpp2 { c1, c2 } => c1 * u * normal_pdf(6.0 * (t - 0.35)) + c2 * u * normal_pdf(6.0 * (t - 0.75)),
        }
    }

    /// Default horizon for processes with a fixed window.
    pub fn natural_horizon(&self) -> Option<f64> {
        match self {
            Process::Nhpp1 { .. } | Process::Nhpp2 { .. } => Some(1.0),
            _ => None,
        }
    }

    /// One sequence on `[0, horizon)`.
    pub fn sample(&self, horizon: f64, rng: &mut impl Rng) -> Result<EventSequence, SimulationError> {
        self.validate()?;
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SimulationError::InvalidParameter(format!("horizon = {horizon}")));
        }
        let seq = match *self {
            Process::Poisson { rate } => EventSequence::from_times(&homogeneous(rate, horizon, rng), horizon)?,
            Process::Hawkes { mu, alpha, beta } => EventSequence::from_times(&hawkes_times(mu, alpha, beta, horizon, rng), horizon)?,
            Process::SelfCorrection { mu, alpha } => {
                EventSequence::from_times(&self_correction_times(mu, alpha, horizon, rng), horizon)?
            }
            Process::Nhpp1 { .. } | Process::Nhpp2 { .. } => {
                let u: f64 = rng.sample(StandardUniform);
                let bound = match *self {
                    Process::Nhpp1 { c } => c * u * INV_SQRT_2PI,
                    Process::Nhpp2 { c1, c2 } => (c1 + c2) * u * INV_SQRT_2PI,
                    _ => unreachable!(),
                };
                let mut times = Vec::new();
                for t in homogeneous(bound, horizon, rng) {
                    let v: f64 = rng.sample(StandardUniform);
                    if v * bound <= self.intensity(t, &[], Some(u)) {
                        times.push(t);
                    }
                }
                EventSequence::from_times(&times, horizon)?.with_latent_scale(u)
            }
        };
        Ok(seq)
    }
}

/// A [`Process`] paired with one sequence's latent scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthIntensity {
    pub process: Process,
    pub u: Option<f64>,
}

impl Process {
    pub fn as_model(&self) -> TruthIntensity {
        TruthIntensity { process: *self, u: None }
    }

    pub fn for_sequence(&self, seq: &EventSequence) -> TruthIntensity {
        TruthIntensity {
            process: *self,
            u: seq.latent_scale(),
        }
    }
}

impl ConditionalIntensity for TruthIntensity {
    fn intensity(&self, t: f64, _mark: Option<usize>, history: &[Event]) -> f64 {
        self.process.intensity(t, history, self.u)
    }

    fn mark_space(&self) -> MarkSpace {
        MarkSpace::TEMPORAL
    }
}

/// Poisson arrivals of rate `rate` on `[0, horizon)`.
fn homogeneous(rate: f64, horizon: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::new();
    if !(rate > 0.0) {
        return out;
    }
    let mut t = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        t += e / rate;
        if t >= horizon {
            return out;
        }
        out.push(t);
    }
}

/// Ogata thinning with the bound `lambda(t+)`, exact because the
/// exponential kernel only decays between events.
fn hawkes_times(mu: f64, alpha: f64, beta: f64, horizon: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 0.0;
    // excitation at time t, including events at or before t
    let mut excite = 0.0;
    loop {
        let bound = mu + excite;
        let e: f64 = Exp1.sample(rng);
        let next = t + e / bound;
        if next >= horizon {
            return out;
        }
        excite *= (-beta * (next - t)).exp();
        t = next;
        let u: f64 = rng.sample(StandardUniform);
        if u * bound <= mu + excite {
            out.push(t);
            excite += alpha * beta;
        }
    }
}

/// Exact inversion of the compensator between events:
/// `Lambda(s) = e^{-n alpha} (e^{mu (t+s)} - e^{mu t}) / mu`.
fn self_correction_times(mu: f64, alpha: f64, horizon: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        let n = out.len() as f64;
        t = self_correction_next(t, n, mu, alpha, e);
        if t >= horizon {
            return out;
        }
        out.push(t);
    }
}

/// Next arrival after `t` with `n` past events for compensator increment `e`.
pub fn self_correction_next(t: f64, n: f64, mu: f64, alpha: f64, e: f64) -> f64 {
    t + (mu * e * (n * alpha - mu * t).exp()).ln_1p() / mu
}

/// Generator settings for a synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub process: Process,
    pub horizon: f64,
    pub sequences: usize,
}

impl GeneratorSpec {
    /// Sequence `i` uses its own stream of `seed`, so the output does not
    /// depend on the number of workers.
    pub fn generate(&self, seed: u64) -> Result<Dataset, SimulationError> {
        self.process.validate()?;
        let sequences = (0..self.sequences)
            .into_par_iter()
            .map(|i| self.process.sample(self.horizon, &mut stream(seed, i as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut ds = Dataset::new(sequences, MarkSpace::TEMPORAL).with_truth(self.process);
        ds.meta = Some(serde_json::json!({ "generator": self, "seed": seed }));
        Ok(ds)
    }
}

pub fn gen_hawkes(mu: f64, alpha: f64, beta: f64, horizon: f64, sequences: usize, seed: u64) -> Result<Dataset, SimulationError> {
    GeneratorSpec { process: Process::Hawkes { mu, alpha, beta }, horizon, sequences }.generate(seed)
}

pub fn gen_self_correction(mu: f64, alpha: f64, horizon: f64, sequences: usize, seed: u64) -> Result<Dataset, SimulationError> {
    GeneratorSpec { process: Process::SelfCorrection { mu, alpha }, horizon, sequences }.generate(seed)
}

pub fn gen_nhpp1(c: f64, sequences: usize, seed: u64) -> Result<Dataset, SimulationError> {
    GeneratorSpec { process: Process::Nhpp1 { c }, horizon: 1.0, sequences }.generate(seed)
}

pub fn gen_nhpp2(c1: f64, c2: f64, sequences: usize, seed: u64) -> Result<Dataset, SimulationError> {
    GeneratorSpec { process: Process::Nhpp2 { c1, c2 }, horizon: 1.0, sequences }.generate(seed)
}

/// Horizon at which `pilots` sequences average `target` events. Pilot
/// sequences reuse the same streams at every trial horizon, so the count is
/// monotone in the horizon and bisection applies.
pub fn calibrate_horizon(process: Process, target: f64, pilots: usize, seed: u64) -> Result<f64, SimulationError> {
    process.validate()?;
    let mean_count = |h: f64| -> Result<f64, SimulationError> {
        let total: usize = (0..pilots)
            .into_par_iter()
            .map(|i| process.sample(h, &mut stream(seed, i as u64)).map(|s| s.len()))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .sum();
        Ok(total as f64 / pilots.max(1) as f64)
    };
    let mut hi = 1.0;
    while mean_count(hi)? < target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(SimulationError::InvalidParameter(format!("target {target} unreachable")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if mean_count(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThinningConfig {
    /// Factor `c >= 1` inflating the proposal rate above the current intensity.
    pub safety: f64,
    /// Rejected proposals allowed between two accepted events.
    pub max_rejections: usize,
}

impl Default for ThinningConfig {
    fn default() -> Self {
        Self {
            safety: 2.0,
            max_rejections: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Thinned {
    pub sequence: EventSequence,
    pub proposals: usize,
    /// Proposals where the intensity exceeded the proposal rate.
    pub violations: usize,
}

/// Thinning sampler for an arbitrary intensity callback
/// `intensity(t, mark, history)`.
///
/// Before each proposal the rate is set to `c * max_m lambda(t+, m)` at the
/// current time; a candidate `(t', m)` with `m` uniform is kept iff
/// `u * rate <= lambda(t', m)`. A candidate with `lambda > rate` is dropped
/// and counted as a violation; the next proposal starts from its time with a
/// refreshed rate.
pub fn thinning<F>(
    mut intensity: F,
    marks: MarkSpace,
    horizon: f64,
    cfg: &ThinningConfig,
    rng: &mut impl Rng,
) -> Result<Thinned, SimulationError>
where
    F: FnMut(f64, Option<usize>, &[Event]) -> f64,
{
    if !(cfg.safety >= 1.0) {
        return Err(SimulationError::InvalidParameter(format!("safety = {}", cfg.safety)));
    }
    let mark_list = marks.marks();
    let mut events: Vec<Event> = Vec::new();
    let mut t = 0.0;
    let mut proposals = 0;
    let mut violations = 0;
    let mut rejections = 0;
    loop {
        let peak = mark_list
            .iter()
            .map(|&m| intensity(t, m, &events))
            .fold(0.0, f64::max);
        let rate = cfg.safety * peak;
        if !rate.is_finite() {
            return Err(SimulationError::NonFiniteBound(rate));
        }
        if rate <= 0.0 {
            break;
        }
        let e: f64 = Exp1.sample(rng);
        t += e / (rate * mark_list.len() as f64);
        if t >= horizon {
            break;
        }
        proposals += 1;
        let mark = mark_list[rng.random_range(0..mark_list.len())];
        let lam = intensity(t, mark, &events);
        let u: f64 = rng.sample(StandardUniform);
        if lam > rate {
            violations += 1;
            log::debug!("thinning bound violated at t={t}: {lam} > {rate}");
        } else if u * rate <= lam {
            events.push(Event { t, mark });
            rejections = 0;
            continue;
        }
        rejections += 1;
        if rejections > cfg.max_rejections {
            return Err(SimulationError::ProposalBudgetExceeded { t, rejections });
        }
    }
    if violations > 0 {
        log::warn!("thinning: {violations} of {proposals} proposals exceeded the bound");
    }
    Ok(Thinned {
        sequence: EventSequence::new(events, horizon)?,
        proposals,
        violations,
    })
}

/// Thinning for any [`ConditionalIntensity`].
pub fn sample_process<M: ConditionalIntensity + ?Sized>(
    model: &M,
    horizon: f64,
    cfg: &ThinningConfig,
    rng: &mut impl Rng,
) -> Result<Thinned, SimulationError> {
    thinning(|t, m, h| model.intensity(t, m, h), model.mark_space(), horizon, cfg, rng)
}

/// Samples from a DAPP, caching per-event features as events are accepted.
pub fn sample_dapp(model: &Dapp, horizon: f64, cfg: &ThinningConfig, rng: &mut impl Rng) -> Result<Thinned, SimulationError> {
    let mut cache = model.cache(&[]);
    let mut state = match model.attention() {
        Attention::Online { eta } => Some(ActiveSet::new(model.params().head_count(), eta)),
        Attention::Offline => None,
    };
    let intensity = |t: f64, m: Option<usize>, h: &[Event]| {
        while cache.len() < h.len() {
            let i = cache.len();
            model.extend_cache(&mut cache, h[i]);
            if let Some(s) = state.as_mut() {
                model
                    .update_active_set(s, &cache, i)
                    .expect("sampled events are time ordered");
            }
        }
        match &state {
            Some(s) => model.online_intensity(t, m, s, &cache),
            None => model.cached_intensity(t, m, &cache),
        }
    };
    thinning(intensity, model.mark_space(), horizon, cfg, rng)
}

/// `n` DAPP sequences on independent streams of `seed`.
pub fn sample_dapp_dataset(
    model: &Dapp,
    horizon: f64,
    sequences: usize,
    cfg: &ThinningConfig,
    seed: u64,
) -> Result<Dataset, SimulationError> {
    let seqs = (0..sequences)
        .into_par_iter()
        .map(|i| sample_dapp(model, horizon, cfg, &mut stream(seed, i as u64)).map(|s| s.sequence))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(seqs, model.mark_space()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn self_correction_unit_inversion() {
        let s = self_correction_next(0.0, 0.0, 1.0, 1.0, 1.0);
        assert!((s - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_scale_nhpp_sequence_is_empty() {
        let p = Process::Nhpp1 { c: 100.0 };
        assert_eq!(p.intensity(0.3, &[], Some(0.0)), 0.0);
        let seqs: Vec<EventSequence> = (0..50).map(|i| p.sample(1.0, &mut stream(3, i)).unwrap()).collect();
        assert!(seqs.iter().all(|s| s.latent_scale().is_some()));
    }

    #[test]
    fn hawkes_jump_and_decay() {
        let p = Process::Hawkes { mu: 1.0, alpha: 0.5, beta: 2.0 };
        let h = [Event::new(0.5)];
        assert!((p.intensity(0.5, &h, None) - p.intensity(0.5, &[], None) - 1.0).abs() < 1e-15);
        assert!(p.intensity(0.9, &h, None) < p.intensity(0.6, &h, None));
    }

    #[test]
    fn self_correction_jump_factor() {
        let p = Process::SelfCorrection { mu: 2.0, alpha: 0.7 };
        let r = p.intensity(0.4, &[Event::new(0.1)], None) / p.intensity(0.4, &[], None);
        assert!((r - (-0.7f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn generated_data_is_reproducible_and_valid() {
        let a = gen_hawkes(2.0, 0.5, 1.0, 3.0, 20, 11).unwrap();
        let b = gen_hawkes(2.0, 0.5, 1.0, 3.0, 20, 11).unwrap();
        assert_eq!(a, b);
        for s in &a.sequences {
            crate::events::validate_sequence(s.events(), s.horizon()).unwrap();
        }
        assert_ne!(a, gen_hawkes(2.0, 0.5, 1.0, 3.0, 20, 12).unwrap());
    }

    #[test]
    fn invalid_parameters() {
        assert!(gen_hawkes(0.0, 1.0, 1.0, 1.0, 1, 0).is_err());
        assert!(gen_nhpp1(-1.0, 1, 0).is_err());
        let cfg = ThinningConfig { safety: 0.5, max_rejections: 10 };
        assert!(sample_process(&Process::Poisson { rate: 1.0 }.as_model(), 1.0, &cfg, &mut seeded(0)).is_err());
    }

    #[test]
    fn budget_exhaustion() {
        // the first call (the rate) is large, later ones tiny
        let mut calls = 0;
        let cfg = ThinningConfig { safety: 1.0, max_rejections: 5 };
        let r = thinning(
            |_, _, _| {
                calls += 1;
                if calls % 2 == 1 { 1e6 } else { 1e-12 }
            },
            MarkSpace::TEMPORAL,
            1.0,
            &cfg,
            &mut seeded(1),
        );
        assert!(matches!(r, Err(SimulationError::ProposalBudgetExceeded { .. })));
    }

    #[test]
    fn calibration_hits_target() {
        let p = Process::Hawkes { mu: 10.0, alpha: 1.0, beta: 1.0 };
        let h = calibrate_horizon(p, 30.0, 400, 5).unwrap();
        // analytic mean mu T + mu beta T^2 / 2 = 30 at T = sqrt(7) - 1
        assert!((h - (7f64.sqrt() - 1.0)).abs() < 0.1, "horizon {h}");
    }
}
