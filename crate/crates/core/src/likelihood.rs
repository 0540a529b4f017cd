//! Sequence log-likelihood with a deterministic compensator integral.
//!
//! Integration nodes are the union of a uniform grid on `[0, T]` and the
//! event times. Between consecutive nodes the history is fixed, so each
//! segment is integrated with the trapezoid (or Simpson) rule using the
//! right limit at its left end and the left limit at its right end.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{Attention, AttentionError, Dapp, FeatureDraw, ModelParams};
use crate::events::{Dataset, Event, EventSequence, MarkSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("intensity {value} at t={t} is not positive")]
    NonPositiveIntensity { t: f64, value: f64 },
    #[error("integration grid needs at least 2 points, got {0}")]
    InvalidGrid(usize),
    #[error("dataset has no sequences")]
    EmptyDataset,
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

/// A conditional intensity `lambda(t, m | H_t)`.
pub trait ConditionalIntensity: Sync {
    /// Intensity at `(t, mark)` given the events strictly before `t`.
    fn intensity(&self, t: f64, mark: Option<usize>, history: &[Event]) -> f64;

    /// Batch evaluation; `q.count` is the number of leading events of `seq`
    /// forming the history of query `q`.
    fn intensities(&self, seq: &EventSequence, queries: &[Query]) -> Vec<f64> {
        queries
            .iter()
            .map(|q| self.intensity(q.t, q.mark, &seq.events()[..q.count]))
            .collect()
    }

    fn mark_space(&self) -> MarkSpace;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Query {
    pub t: f64,
    pub mark: Option<usize>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Trapezoid,
    Simpson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub grid: usize,
    pub scheme: Scheme,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            grid: 200,
            scheme: Scheme::Trapezoid,
        }
    }
}

impl IntegrationConfig {
    pub fn new(grid: usize, scheme: Scheme) -> Result<Self, LikelihoodError> {
        let ic = Self { grid, scheme };
        ic.validate()?;
        Ok(ic)
    }

    pub fn validate(&self) -> Result<(), LikelihoodError> {
        if self.grid < 2 {
            return Err(LikelihoodError::InvalidGrid(self.grid));
        }
        Ok(())
    }
}

/// Intensity evaluations needed for one sequence log-likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPlan {
    pub queries: Vec<Query>,
    /// Quadrature weight of each query in the compensator.
    pub weights: Vec<f64>,
    /// Query index of the left-limit intensity at each event.
    pub event_rows: Vec<usize>,
}

impl QueryPlan {
    pub fn build(seq: &EventSequence, marks: MarkSpace, ic: &IntegrationConfig) -> Result<Self, LikelihoodError> {
        ic.validate()?;
        let horizon = seq.horizon();
        let events = seq.events();
        let mut nodes: Vec<f64> = (0..ic.grid)
            .map(|k| horizon * k as f64 / (ic.grid - 1) as f64)
            .chain(events.iter().map(|e| e.t))
            .collect();
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();

        let mark_list = marks.marks();
        let mut plan = QueryPlan {
            queries: Vec::new(),
            weights: Vec::new(),
            event_rows: vec![0; events.len()],
        };
        let push = |plan: &mut QueryPlan, t: f64, mark: Option<usize>, count: usize| {
            plan.queries.push(Query { t, mark, count });
            plan.weights.push(0.0);
            plan.queries.len() - 1
        };

        // `right[m]` is the right-limit row at the previous node for mark m.
        let mut right: Vec<usize> = Vec::new();
        let mut before = 0;
        let mut prev_t = 0.0;
        for (k, &t) in nodes.iter().enumerate() {
            let mut at = before;
            while at < events.len() && events[at].t <= t {
                at += 1;
            }
            let mut left_rows = Vec::with_capacity(mark_list.len());
            for &m in &mark_list {
                left_rows.push(push(&mut plan, t, m, before));
            }
            let right_rows: Vec<usize> = if at == before {
                left_rows.clone()
            } else {
                mark_list.iter().map(|&m| push(&mut plan, t, m, at)).collect()
            };
            for (e, row) in events[before..at].iter().zip(&mut plan.event_rows[before..at]) {
                let mi = if marks.is_temporal() { 0 } else { marks.component(e.mark) };
                *row = left_rows[mi];
            }
            if k > 0 {
                let h = t - prev_t;
                for (mi, &m) in mark_list.iter().enumerate() {
                    match ic.scheme {
                        Scheme::Trapezoid => {
                            plan.weights[right[mi]] += h / 2.0;
                            plan.weights[left_rows[mi]] += h / 2.0;
                        }
                        Scheme::Simpson => {
                            let mid = push(&mut plan, prev_t + h / 2.0, m, before);
                            plan.weights[right[mi]] += h / 6.0;
                            plan.weights[mid] += 4.0 * h / 6.0;
                            plan.weights[left_rows[mi]] += h / 6.0;
                        }
                    }
                }
            }
            right = right_rows;
            before = at;
            prev_t = t;
        }
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// `sum log lambda(events) - sum_r w_r lambda_r`.
    pub fn loglik(&self, values: &[f64]) -> Result<f64, LikelihoodError> {
        let mut ll = 0.0;
        for &r in &self.event_rows {
            let v = values[r];
            if !(v > 0.0) || !v.is_finite() {
                return Err(LikelihoodError::NonPositiveIntensity {
                    t: self.queries[r].t,
                    value: v,
                });
            }
            ll += v.ln();
        }
        let compensator: f64 = self.weights.iter().zip(values).map(|(w, v)| w * v).sum();
        Ok(ll - compensator)
    }
}

/// Log-likelihood of `seq` under any intensity.
pub fn sequence_loglik<M: ConditionalIntensity + ?Sized>(
    model: &M,
    seq: &EventSequence,
    ic: &IntegrationConfig,
) -> Result<f64, LikelihoodError> {
    let plan = QueryPlan::build(seq, model.mark_space(), ic)?;
    let values = model.intensities(seq, &plan.queries);
    plan.loglik(&values)
}

/// Per-sequence log-likelihoods, computed in parallel, in dataset order.
pub fn sequence_logliks<M: ConditionalIntensity + ?Sized>(
    model: &M,
    ds: &Dataset,
    ic: &IntegrationConfig,
) -> Result<Vec<f64>, LikelihoodError> {
    ds.sequences
        .par_iter()
        .map(|s| sequence_loglik(model, s, ic))
        .collect()
}

/// Mean per-sequence log-likelihood.
pub fn average_loglik<M: ConditionalIntensity + ?Sized>(
    model: &M,
    ds: &Dataset,
    ic: &IntegrationConfig,
) -> Result<f64, LikelihoodError> {
    if ds.is_empty() {
        return Err(LikelihoodError::EmptyDataset);
    }
    let lls = sequence_logliks(model, ds, ic)?;
    Ok(lls.iter().sum::<f64>() / lls.len() as f64)
}

/// DAPP log-likelihood under a given feature draw.
pub fn dapp_sequence_loglik(
    params: &ModelParams,
    draw: &FeatureDraw,
    seq: &EventSequence,
    ic: &IntegrationConfig,
    attention: Attention,
) -> Result<f64, LikelihoodError> {
    let model = Dapp::new(params, draw)?.with_attention(attention);
    sequence_loglik(&model, seq, ic)
}

/// Held-out average log-likelihood with one frozen draw of `features`
/// Fourier features per head.
pub fn heldout_avg_loglik(
    ds: &Dataset,
    params: &ModelParams,
    features: usize,
    ic: &IntegrationConfig,
    attention: Attention,
    rng: &mut impl Rng,
) -> Result<f64, LikelihoodError> {
    let draw = FeatureDraw::sample(params, features, rng);
    let model = Dapp::new(params, &draw)?.with_attention(attention);
    average_loglik(&model, ds, ic)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);

    impl ConditionalIntensity for Constant {
        fn intensity(&self, _t: f64, _m: Option<usize>, _h: &[Event]) -> f64 {
            self.0
        }
        fn mark_space(&self) -> MarkSpace {
            MarkSpace::TEMPORAL
        }
    }

    /// `1 + number of past events`, exercising history bookkeeping.
    struct Counting;

    impl ConditionalIntensity for Counting {
        fn intensity(&self, _t: f64, _m: Option<usize>, h: &[Event]) -> f64 {
            1.0 + h.len() as f64
        }
        fn mark_space(&self) -> MarkSpace {
            MarkSpace::TEMPORAL
        }
    }

    #[test]
    fn homogeneous_poisson() {
        let seq = EventSequence::from_times(&[0.2, 0.5, 0.7], 1.0).unwrap();
        let ll = sequence_loglik(&Constant(2.0), &seq, &IntegrationConfig::default()).unwrap();
        assert!((ll - (3.0 * 2f64.ln() - 2.0)).abs() < 1e-12);
        assert!((ll - 0.0794).abs() < 1e-4);
    }

    #[test]
    fn piecewise_constant_history_is_exact() {
        let seq = EventSequence::from_times(&[0.25, 0.6], 1.0).unwrap();
        for scheme in [Scheme::Trapezoid, Scheme::Simpson] {
            let ic = IntegrationConfig::new(7, scheme).unwrap();
            let ll = sequence_loglik(&Counting, &seq, &ic).unwrap();
            let expected = 1f64.ln() + 2f64.ln() - (0.25 + 2.0 * 0.35 + 3.0 * 0.4);
            assert!((ll - expected).abs() < 1e-12, "{scheme:?}: {ll} vs {expected}");
        }
    }

    #[test]
    fn marks_are_summed() {
        struct PerMark;
        impl ConditionalIntensity for PerMark {
            fn intensity(&self, _t: f64, m: Option<usize>, _h: &[Event]) -> f64 {
                [1.0, 3.0][m.unwrap()]
            }
            fn mark_space(&self) -> MarkSpace {
                MarkSpace::new(2)
            }
        }
        let seq = EventSequence::new(vec![Event::marked(0.3, 1), Event::marked(0.9, 0)], 2.0).unwrap();
        let ll = sequence_loglik(&PerMark, &seq, &IntegrationConfig::default()).unwrap();
        assert!((ll - (3f64.ln() - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn events_on_grid_nodes_and_boundaries() {
        let seq = EventSequence::from_times(&[0.0, 0.5], 1.0).unwrap();
        let ic = IntegrationConfig::new(3, Scheme::Trapezoid).unwrap();
        let plan = QueryPlan::build(&seq, MarkSpace::TEMPORAL, &ic).unwrap();
        assert_eq!(plan.queries[plan.event_rows[0]].count, 0);
        assert_eq!(plan.queries[plan.event_rows[1]].count, 1);
        assert!((plan.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let ll = sequence_loglik(&Counting, &seq, &ic).unwrap();
        assert!((ll - (2f64.ln() - (2.0 * 0.5 + 3.0 * 0.5))).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert_eq!(IntegrationConfig::new(1, Scheme::Trapezoid), Err(LikelihoodError::InvalidGrid(1)));
    }

    #[test]
    fn non_positive_event_intensity() {
        let seq = EventSequence::from_times(&[0.5], 1.0).unwrap();
        assert!(matches!(
            sequence_loglik(&Constant(0.0), &seq, &IntegrationConfig::default()),
            Err(LikelihoodError::NonPositiveIntensity { .. })
        ));
    }
}
