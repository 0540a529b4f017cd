//! Multi-head attention conditional intensity.
//!
//! For a query `x = (t, m)` and each head `k`, past events are weighted by
//! their normalized Fourier-kernel score against `x`, their value embeddings
//! `W_v x_i` are averaged with those weights, the head outputs are
//! concatenated into `h(x)`, and
//!
//! ```text
//! lambda(x) = mu(m) + softplus(h(x)^T W + b)
//! ```
//!
//! The online variant replaces the full history of each head by a bounded
//! [`ActiveSet`] of past events with the highest running-average scores.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{dot, softplus, softplus_inverse, Matrix};
use crate::events::{embed_event, Event, EventSequence, MarkSpace};
use crate::fourier::{draw_phases, FourierError, FourierFeatureBatch, KeyMap, ProjectedFeatures, SCORE_FLOOR};
use crate::likelihood::{ConditionalIntensity, Query};
use crate::spectrum::{sample_noise, GeneratorParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("normalized scores need a non-empty history")]
    EmptyHistory,
    #[error("event at t={t} arrived after t={last}")]
    OutOfOrderEvent { t: f64, last: f64 },
    #[error("feature draw has {found} heads, model has {expected}")]
    HeadCount { expected: usize, found: usize },
    #[error(transparent)]
    Fourier(#[from] FourierError),
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub heads: usize,
    pub value_dim: usize,
    pub noise_dim: usize,
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    /// Multiplies event times before they enter the embedding.
    pub time_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            heads: 2,
            value_dim: 8,
            noise_dim: 16,
            feature_dim: 16,
            hidden: vec![128, 256, 128],
            time_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub generator: GeneratorParams,
    /// `W_u`, `r x d`
    pub key: Matrix,
    /// `W_v`, `p x d`
    pub value: Matrix,
}

/// Every trainable quantity of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub mark_space: MarkSpace,
    pub heads: Vec<HeadParams>,
    /// `W`, `Kp x 1`
    pub output_weight: Matrix,
    /// `b`, `1 x 1`
    pub output_bias: Matrix,
    /// Unconstrained base intensity per mark component; `mu = softplus(base)`.
    pub base: Matrix,
}

fn normal_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let normal = Normal::new(0.0, 1.0 / (fan_in.max(1) as f64).sqrt()).expect("positive scale");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

impl ModelParams {
    /// Random initialisation with the base intensity set to `base_rate` per
    /// mark component.
    pub fn init(config: ModelConfig, mark_space: MarkSpace, base_rate: f64, rng: &mut impl Rng) -> Self {
        assert!(config.heads >= 1 && config.value_dim >= 1, "need K >= 1 and p >= 1");
        let d = mark_space.dim();
        let heads = (0..config.heads)
            .map(|_| HeadParams {
                generator: GeneratorParams::new(config.noise_dim, &config.hidden, config.feature_dim, rng),
                key: normal_matrix(config.feature_dim, d, d, rng),
                value: normal_matrix(config.value_dim, d, d, rng),
            })
            .collect();
        let kp = config.heads * config.value_dim;
        let raw_base = softplus_inverse(base_rate.max(1e-6));
        Self {
            output_weight: normal_matrix(kp, 1, kp, rng),
            output_bias: Matrix::scalar(0.0),
            base: Matrix::filled(mark_space.components(), 1, raw_base),
            heads,
            mark_space,
            config,
        }
    }

    /// All-zero parameters with the right shapes (checkpoint skeleton).
    pub fn zeros(config: ModelConfig, mark_space: MarkSpace) -> Self {
        let d = mark_space.dim();
        let heads = (0..config.heads)
            .map(|_| {
                let widths: Vec<usize> = std::iter::once(config.noise_dim)
                    .chain(config.hidden.iter().copied())
                    .chain(std::iter::once(config.feature_dim))
                    .collect();
                HeadParams {
                    generator: GeneratorParams::from_layers(
                        widths
                            .windows(2)
                            .map(|w| crate::spectrum::DenseLayer::zeros(w[0], w[1]))
                            .collect(),
                    ),
                    key: Matrix::zeros(config.feature_dim, d),
                    value: Matrix::zeros(config.value_dim, d),
                }
            })
            .collect();
        Self {
            output_weight: Matrix::zeros(config.heads * config.value_dim, 1),
            output_bias: Matrix::scalar(0.0),
            base: Matrix::zeros(mark_space.components(), 1),
            heads,
            mark_space,
            config,
        }
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn base_intensity(&self, mark: Option<usize>) -> f64 {
        softplus(self.base.as_slice()[self.mark_space.component(mark)])
    }

    /// Embedding with time rescaled by `config.time_scale`. Panics on marks
    /// outside the mark space; sequences are validated on construction.
    pub fn embed(&self, e: &Event) -> Vec<f64> {
        let mut x = embed_event(e, &self.mark_space).expect("event does not fit the model's mark space");
        x[0] *= self.config.time_scale;
        x
    }

    /// Named views of every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (k, h) in self.heads.iter().enumerate() {
            for (l, layer) in h.generator.layers.iter().enumerate() {
                out.push((format!("head{k}.generator.layer{l}.weight"), &layer.weight));
                out.push((format!("head{k}.generator.layer{l}.bias"), &layer.bias));
            }
            out.push((format!("head{k}.key"), &h.key));
            out.push((format!("head{k}.value"), &h.value));
        }
        out.push(("output.weight".into(), &self.output_weight));
        out.push(("output.bias".into(), &self.output_bias));
        out.push(("base".into(), &self.base));
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for h in &mut self.heads {
            for layer in &mut h.generator.layers {
                out.push(&mut layer.weight);
                out.push(&mut layer.bias);
            }
            out.push(&mut h.key);
            out.push(&mut h.value);
        }
        out.push(&mut self.output_weight);
        out.push(&mut self.output_bias);
        out.push(&mut self.base);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Noise and phases for one head; frequencies are `G(noise)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadDraw {
    pub noise: Matrix,
    pub phases: Vec<f64>,
}

/// One Monte Carlo feature draw for every head.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDraw {
    pub heads: Vec<HeadDraw>,
}

impl FeatureDraw {
    pub fn sample(params: &ModelParams, count: usize, rng: &mut impl Rng) -> Self {
        let heads = params
            .heads
            .iter()
            .map(|h| HeadDraw {
                noise: sample_noise(h.generator.noise_dim(), count, rng),
                phases: draw_phases(count, rng),
            })
            .collect();
        Self { heads }
    }

    pub fn features(&self) -> usize {
        self.heads.first().map_or(0, |h| h.phases.len())
    }

    /// Frequencies for each head under `params`.
    pub fn batches(&self, params: &ModelParams) -> Result<Vec<FourierFeatureBatch>, AttentionError> {
        if self.heads.len() != params.heads.len() {
            return Err(AttentionError::HeadCount {
                expected: params.heads.len(),
                found: self.heads.len(),
            });
        }
        self.heads
            .iter()
            .zip(&params.heads)
            .enumerate()
            .map(|(k, (d, h))| {
                let omegas = h.generator.generate(&d.noise).map_err(FourierError::from)?;
                Ok(FourierFeatureBatch::new(omegas, d.phases.clone(), k)?)
            })
            .collect()
    }
}

/// How each head chooses the past events it attends to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Attention {
    /// Full history.
    Offline,
    /// Bounded active sets retaining at most `eta` past events.
    Online { eta: usize },
}

/// Per-event quantities reused across queries on one sequence.
#[derive(Clone, Debug, Default)]
pub struct EventCache {
    events: Vec<Event>,
    /// `[head][event]` feature vectors.
    features: Vec<Vec<Vec<f64>>>,
    /// `[head][event]` value embeddings.
    values: Vec<Vec<Vec<f64>>>,
}

impl EventCache {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }
}

/// Running-average bookkeeping for one retained event.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    /// Position of the event in its stream.
    pub index: usize,
    pub score_sum: f64,
    pub score_count: usize,
}

impl Member {
    pub fn average(&self) -> f64 {
        if self.score_count == 0 {
            0.0
        } else {
            self.score_sum / self.score_count as f64
        }
    }
}

/// Online attention state: per head, retained events in arrival order.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSet {
    eta: usize,
    heads: Vec<Vec<Member>>,
    last_time: Option<f64>,
    arrivals: usize,
}

impl ActiveSet {
    pub fn new(heads: usize, eta: usize) -> Self {
        Self {
            eta,
            heads: vec![Vec::new(); heads],
            last_time: None,
            arrivals: 0,
        }
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    pub fn members(&self, head: usize) -> &[Member] {
        &self.heads[head]
    }

    pub fn indices(&self, head: usize) -> Vec<usize> {
        self.heads[head].iter().map(|m| m.index).collect()
    }

    pub fn arrivals(&self) -> usize {
        self.arrivals
    }
}

/// A model bound to one frozen feature draw; evaluates intensities.
#[derive(Clone, Debug)]
pub struct Dapp<'a> {
    params: &'a ModelParams,
    heads: Vec<ProjectedFeatures>,
    attention: Attention,
}

impl<'a> Dapp<'a> {
    pub fn new(params: &'a ModelParams, draw: &FeatureDraw) -> Result<Self, AttentionError> {
        let batches = draw.batches(params)?;
        Self::from_batches(params, &batches)
    }

    pub fn from_batches(params: &'a ModelParams, batches: &[FourierFeatureBatch]) -> Result<Self, AttentionError> {
        if batches.len() != params.heads.len() {
            return Err(AttentionError::HeadCount {
                expected: params.heads.len(),
                found: batches.len(),
            });
        }
        let heads = batches
            .iter()
            .zip(&params.heads)
            .map(|(fb, h)| ProjectedFeatures::new(fb, &KeyMap::new(h.key.clone())))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            params,
            heads,
            attention: Attention::Offline,
        })
    }

    pub fn with_attention(mut self, attention: Attention) -> Self {
        self.attention = attention;
        self
    }

    pub fn attention(&self) -> Attention {
        self.attention
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn mark_space(&self) -> MarkSpace {
        self.params.mark_space
    }

    pub fn head_features(&self, head: usize, x: &[f64]) -> Vec<f64> {
        self.heads[head].features(x)
    }

    pub fn cache(&self, events: &[Event]) -> EventCache {
        let mut cache = EventCache {
            events: Vec::with_capacity(events.len()),
            features: vec![Vec::with_capacity(events.len()); self.heads.len()],
            values: vec![Vec::with_capacity(events.len()); self.heads.len()],
        };
        for e in events {
            self.extend_cache(&mut cache, *e);
        }
        cache
    }

    pub fn extend_cache(&self, cache: &mut EventCache, e: Event) {
        if cache.features.is_empty() {
            cache.features = vec![Vec::new(); self.heads.len()];
            cache.values = vec![Vec::new(); self.heads.len()];
        }
        let x = self.params.embed(&e);
        for (k, proj) in self.heads.iter().enumerate() {
            cache.features[k].push(proj.features(&x));
            cache.values[k].push(self.params.heads[k].value.matmul(&Matrix::column(&x)).into_vec());
        }
        cache.events.push(e);
    }

    /// Raw floored scores of `query` against `indices`, plus their sum.
    fn raw_scores(&self, head: usize, query: &[f64], cache: &EventCache, indices: impl Iterator<Item = usize>) -> (Vec<(usize, f64)>, f64) {
        let feats = &cache.features[head];
        let mut total = 0.0;
        let scores: Vec<(usize, f64)> = indices
            .map(|i| {
                let s = dot(query, &feats[i]).max(SCORE_FLOOR);
                total += s;
                (i, s)
            })
            .collect();
        (scores, total)
    }

    /// Head output for a query with features `query`; empty history gives 0.
    fn attend(&self, head: usize, query: &[f64], cache: &EventCache, indices: impl Iterator<Item = usize>) -> Vec<f64> {
        let p = self.params.config.value_dim;
        let (scores, total) = self.raw_scores(head, query, cache, indices);
        let mut h = vec![0.0; p];
        if scores.is_empty() {
            return h;
        }
        let values = &cache.values[head];
        for &(i, s) in &scores {
            for (acc, v) in h.iter_mut().zip(&values[i]) {
                *acc += s * v;
            }
        }
        for v in &mut h {
            *v /= total;
        }
        h
    }

    fn lambda_from_heads(&self, mark: Option<usize>, heads: &[Vec<f64>]) -> f64 {
        let w = self.params.output_weight.as_slice();
        let p = self.params.config.value_dim;
        let mut z = 0.0;
        for (k, h) in heads.iter().enumerate() {
            z += dot(h, &w[k * p..(k + 1) * p]);
        }
        z += self.params.output_bias.item();
        self.params.base_intensity(mark) + softplus(z)
    }

    /// Intensity at `(t, mark)` attending to `histories[k]` in head `k`.
    fn lambda_with<F, I>(&self, t: f64, mark: Option<usize>, cache: &EventCache, histories: F) -> f64
    where
        F: Fn(usize) -> I,
        I: Iterator<Item = usize>,
    {
        let x = self.params.embed(&Event { t, mark });
        let outputs: Vec<Vec<f64>> = (0..self.heads.len())
            .map(|k| {
                let q = self.heads[k].features(&x);
                self.attend(k, &q, cache, histories(k))
            })
            .collect();
        self.lambda_from_heads(mark, &outputs)
    }

    /// Normalized scores of `x` against every event of `history` in `head`.
    pub fn normalized_scores(&self, x: &Event, history: &[Event], head: usize) -> Result<Vec<f64>, AttentionError> {
        if history.is_empty() {
            return Err(AttentionError::EmptyHistory);
        }
        let cache = self.cache(history);
        let q = self.heads[head].features(&self.params.embed(x));
        let (scores, total) = self.raw_scores(head, &q, &cache, 0..history.len());
        Ok(scores.into_iter().map(|(_, s)| s / total).collect())
    }

    /// Output of one head: normalized-score weighted average of value
    /// embeddings.
    pub fn attention_head(&self, x: &Event, history: &[Event], head: usize) -> Vec<f64> {
        let cache = self.cache(history);
        let q = self.heads[head].features(&self.params.embed(x));
        self.attend(head, &q, &cache, 0..history.len())
    }

    /// Concatenated head outputs `h(x)`.
    pub fn concat_heads(&self, x: &Event, history: &[Event]) -> Vec<f64> {
        (0..self.heads.len())
            .flat_map(|k| self.attention_head(x, history, k))
            .collect()
    }

    /// Offline intensity with the given history (events before `t`).
    pub fn offline_intensity(&self, t: f64, mark: Option<usize>, history: &[Event]) -> f64 {
        let cache = self.cache(history);
        self.lambda_with(t, mark, &cache, |_| 0..history.len())
    }

    /// Offline intensity attending to every cached event.
    pub fn cached_intensity(&self, t: f64, mark: Option<usize>, cache: &EventCache) -> f64 {
        self.lambda_with(t, mark, cache, |_| 0..cache.len())
    }

    /// Adds `cache.events()[index]` to the active sets: every retained event
    /// is scored against the arrival, then the lowest-average past event is
    /// evicted while more than `eta` past events remain.
    pub fn update_active_set(&self, state: &mut ActiveSet, cache: &EventCache, index: usize) -> Result<(), AttentionError> {
        let e = cache.events[index];
        if let Some(last) = state.last_time {
            if !(e.t > last) {
                return Err(AttentionError::OutOfOrderEvent { t: e.t, last });
            }
        }
        for (k, members) in state.heads.iter_mut().enumerate() {
            if !members.is_empty() {
                let q = &cache.features[k][index];
                let (scores, total) = self.raw_scores(k, q, cache, members.iter().map(|m| m.index));
                for (m, (_, s)) in members.iter_mut().zip(scores) {
                    m.score_sum += s / total;
                    m.score_count += 1;
                }
            }
            members.push(Member {
                index,
                score_sum: 0.0,
                score_count: 0,
            });
            if members.len() - 1 > state.eta {
                let past = &members[..members.len() - 1];
                let mut evict = 0;
                for (j, m) in past.iter().enumerate().skip(1) {
                    if m.average() < past[evict].average() {
                        evict = j;
                    }
                }
                members.remove(evict);
            }
        }
        state.last_time = Some(e.t);
        state.arrivals += 1;
        Ok(())
    }

    /// Intensity attending to each head's active set.
    pub fn online_intensity(&self, t: f64, mark: Option<usize>, state: &ActiveSet, cache: &EventCache) -> f64 {
        self.lambda_with(t, mark, cache, |k| state.heads[k].iter().map(|m| m.index))
    }

    /// Active-set indices after each prefix: entry `c` holds, per head, the
    /// retained events once the first `c` events have arrived.
    pub fn active_snapshots(&self, cache: &EventCache, eta: usize) -> Vec<Vec<Vec<usize>>> {
        let k = self.heads.len();
        let mut state = ActiveSet::new(k, eta);
        let mut out = Vec::with_capacity(cache.len() + 1);
        out.push(vec![Vec::new(); k]);
        for i in 0..cache.len() {
            self.update_active_set(&mut state, cache, i)
                .expect("cached sequences are time ordered");
            out.push((0..k).map(|h| state.indices(h)).collect());
        }
        out
    }

    /// Normalized scores of each event against the events it attends to:
    /// row `n - 1` has `n` entries for event `n` (zero for events outside
    /// an online active set).
    pub fn score_matrix(&self, seq: &EventSequence, head: usize) -> Vec<Vec<f64>> {
        let cache = self.cache(seq.events());
        let snapshots = match self.attention {
            Attention::Online { eta } => Some(self.active_snapshots(&cache, eta)),
            Attention::Offline => None,
        };
        (1..seq.len())
            .map(|n| {
                let q = &cache.features[head][n];
                let mut row = vec![0.0; n];
                let (scores, total) = match &snapshots {
                    Some(s) => self.raw_scores(head, q, &cache, s[n][head].iter().copied()),
                    None => self.raw_scores(head, q, &cache, 0..n),
                };
                for (i, s) in scores {
                    row[i] = s / total;
                }
                row
            })
            .collect()
    }

    pub fn write_score_matrix_csv(&self, seq: &EventSequence, head: usize, w: &mut impl Write) -> io::Result<()> {
        let rows = self.score_matrix(seq, head);
        let width = rows.len();
        for row in &rows {
            let cells: Vec<String> = (0..width)
                .map(|i| row.get(i).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

impl ConditionalIntensity for Dapp<'_> {
    fn intensity(&self, t: f64, mark: Option<usize>, history: &[Event]) -> f64 {
        match self.attention {
            Attention::Offline => self.offline_intensity(t, mark, history),
            Attention::Online { eta } => {
                let cache = self.cache(history);
                let mut state = ActiveSet::new(self.heads.len(), eta);
                for i in 0..cache.len() {
                    self.update_active_set(&mut state, &cache, i)
                        .expect("history is time ordered");
                }
                self.online_intensity(t, mark, &state, &cache)
            }
        }
    }

    fn intensities(&self, seq: &EventSequence, queries: &[Query]) -> Vec<f64> {
        let cache = self.cache(seq.events());
        match self.attention {
            Attention::Offline => queries
                .iter()
                .map(|q| self.lambda_with(q.t, q.mark, &cache, |_| 0..q.count))
                .collect(),
            Attention::Online { eta } => {
                let snaps = self.active_snapshots(&cache, eta);
                queries
                    .iter()
                    .map(|q| {
                        let snap = &snaps[q.count];
                        self.lambda_with(q.t, q.mark, &cache, |k| snap[k].iter().copied())
                    })
                    .collect()
            }
        }
    }

    fn mark_space(&self) -> MarkSpace {
        self.params.mark_space
    }
}
