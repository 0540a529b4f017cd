//! Stochastic-gradient maximum likelihood for DAPP.
//!
//! Each iteration draws a minibatch of sequences and a fresh set of noise
//! vectors and phases per head, records the negative mean log-likelihood on
//! a tape (frequencies are produced by the generator on the same tape, so
//! gradients reach it through the reparameterized noise), and takes one
//! Adam step.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{Attention, AttentionError, Dapp, FeatureDraw, ModelConfig, ModelParams};
use crate::autodiff::{AutodiffError, Matrix, Tape, Var};
use crate::events::{Dataset, EventSequence, MarkSpace};
use crate::fourier::SCORE_FLOOR;
use crate::likelihood::{IntegrationConfig, LikelihoodError, QueryPlan};
use crate::rng::stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("loss diverged at iteration {iteration}: {loss}")]
    DivergedLoss { iteration: usize, loss: f64 },
    #[error("dataset has no sequences")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name", deny_unknown_fields)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Fourier features per head per iteration.
    pub features: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub attention: Attention,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 32,
            features: 20,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            clip_norm: 10.0,
            attention: Attention::Offline,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.features == 0 {
            return Err(TrainError::InvalidConfig("batch size and feature count must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::InvalidConfig(format!("clip norm {}", self.clip_norm)));
        }
        if let Attention::Online { eta } = self.attention {
            if eta == 0 {
                return Err(TrainError::InvalidConfig("online budget must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Memory budget retaining `fraction` of the longest sequence.
pub fn online_budget(ds: &Dataset, fraction: f64) -> usize {
    ((fraction * ds.max_len() as f64).ceil() as usize).max(1)
}

/// Tape leaves mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub heads: Vec<HeadVars>,
    pub output_weight: Var,
    pub output_bias: Var,
    pub base: Var,
}

#[derive(Clone, Debug)]
pub struct HeadVars {
    pub layers: Vec<(Var, Var)>,
    pub key: Var,
    pub value: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let flat: Vec<Var> = params.tensors().into_iter().map(|(_, m)| tape.leaf(m.clone())).collect();
        Self::from_flat(params, &flat)
    }

    /// Rebuilds the structure from leaves in [`ModelParams::tensors`] order.
    pub fn from_flat(params: &ModelParams, flat: &[Var]) -> Self {
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("one leaf per parameter tensor");
        let heads = params
            .heads
            .iter()
            .map(|h| HeadVars {
                layers: h.generator.layers.iter().map(|_| (next(), next())).collect(),
                key: next(),
                value: next(),
            })
            .collect();
        Self {
            heads,
            output_weight: next(),
            output_bias: next(),
            base: next(),
        }
    }

    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for h in &self.heads {
            for &(w, b) in &h.layers {
                out.push(w);
                out.push(b);
            }
            out.push(h.key);
            out.push(h.value);
        }
        out.extend([self.output_weight, self.output_bias, self.base]);
        out
    }
}

/// Per-head quantities shared by every sequence in a minibatch.
struct HeadTape {
    /// `(Omega W_u)^T`, `d x D`
    projection_t: Var,
    /// `1 x D`
    phases: Var,
    norm: f64,
}

/// Per-sequence active-set snapshots used as stop-gradient attention masks:
/// `[count][head] -> retained event indices`.
pub type Snapshots = Vec<Vec<Vec<usize>>>;

/// Active-set snapshots of each sequence under the current parameters.
pub fn online_snapshots(params: &ModelParams, draw: &FeatureDraw, seqs: &[&EventSequence], eta: usize) -> Result<Vec<Snapshots>, TrainError> {
    let model = Dapp::new(params, draw)?;
    Ok(seqs
        .iter()
        .map(|s| model.active_snapshots(&model.cache(s.events()), eta))
        .collect())
}

fn embed_rows(params: &ModelParams, items: impl Iterator<Item = crate::events::Event>) -> Matrix {
    let rows: Vec<Vec<f64>> = items.map(|e| params.embed(&e)).collect();
    let d = params.mark_space.dim();
    Matrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

fn sequence_ll(
    tape: &mut Tape,
    vars: &ParamVars,
    heads: &[HeadTape],
    params: &ModelParams,
    seq: &EventSequence,
    ic: &IntegrationConfig,
    snapshots: Option<&Snapshots>,
) -> Result<Var, TrainError> {
    let marks: MarkSpace = params.mark_space;
    let plan = QueryPlan::build(seq, marks, ic)?;
    let rows = plan.len();
    let n = seq.len();
    let p = params.config.value_dim;

    let xq = embed_rows(
        params,
        plan.queries.iter().map(|q| crate::events::Event { t: q.t, mark: q.mark }),
    );
    let xq = tape.constant(xq);

    let mut outputs = Vec::with_capacity(heads.len());
    if n == 0 {
        for _ in heads {
            outputs.push(tape.constant(Matrix::zeros(rows, p)));
        }
    } else {
        let xe = tape.constant(embed_rows(params, seq.events().iter().copied()));
        let ones = tape.constant(Matrix::filled(n, 1, 1.0));
        let empty_fix = tape.constant(Matrix::from_fn(rows, 1, |r, _| {
            if plan.queries[r].count == 0 {
                1.0
            } else {
                0.0
            }
        }));
        for (k, head) in heads.iter().enumerate() {
            let mask = Matrix::from_fn(rows, n, |r, j| {
                let c = plan.queries[r].count;
                let member = match snapshots {
                    Some(s) => s[c][k].binary_search(&j).is_ok(),
                    None => j < c,
                };
                if member {
                    1.0
                } else {
                    0.0
                }
            });
            let mask = tape.constant(mask);

            let aq = tape.matmul(xq, head.projection_t)?;
            let aq = tape.add(aq, head.phases)?;
            let fq = tape.cos(aq);
            let fq = tape.scale(fq, head.norm);
            let ae = tape.matmul(xe, head.projection_t)?;
            let ae = tape.add(ae, head.phases)?;
            let fe = tape.cos(ae);
            let fe = tape.scale(fe, head.norm);

            let fe_t = tape.transpose(fe);
            let raw = tape.matmul(fq, fe_t)?;
            let raw = tape.clamp_min(raw, SCORE_FLOOR);
            let raw = tape.mul(raw, mask)?;

            let wv_t = tape.transpose(vars.heads[k].value);
            let values = tape.matmul(xe, wv_t)?;
            let num = tape.matmul(raw, values)?;
            let den = tape.matmul(raw, ones)?;
            let den = tape.add(den, empty_fix)?;
            outputs.push(tape.div(num, den)?);
        }
    }

    let h = tape.concat_cols(&outputs)?;
    let z = tape.matmul(h, vars.output_weight)?;
    let z = tape.add(z, vars.output_bias)?;
    let excite = tape.softplus(z);

    let comps = marks.components();
    let onehot = Matrix::from_fn(rows, comps, |r, c| {
        if marks.component(plan.queries[r].mark) == c {
            1.0
        } else {
            0.0
        }
    });
    let onehot = tape.constant(onehot);
    let mu = tape.softplus(vars.base);
    let mu_rows = tape.matmul(onehot, mu)?;
    let lambda = tape.add(excite, mu_rows)?;

    let weights = tape.constant(Matrix::from_vec(1, rows, plan.weights.clone()));
    let compensator = tape.matmul(weights, lambda)?;
    if n == 0 {
        return Ok(tape.neg(compensator));
    }
    let select = Matrix::from_fn(n, rows, |i, r| if plan.event_rows[i] == r { 1.0 } else { 0.0 });
    let select = tape.constant(select);
    let at_events = tape.matmul(select, lambda)?;
    let logs = tape.log(at_events)?;
    let event_term = tape.sum(logs);
    Ok(tape.sub(event_term, compensator)?)
}

/// Records `-(1/M) sum_s loglik(s)` for the minibatch `seqs`. Parameter
/// values are read only through `vars`; `params` supplies the structure.
pub fn tape_loss(
    tape: &mut Tape,
    vars: &ParamVars,
    params: &ModelParams,
    draw: &FeatureDraw,
    seqs: &[&EventSequence],
    ic: &IntegrationConfig,
    snapshots: Option<&[Snapshots]>,
) -> Result<Var, TrainError> {
    if seqs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut heads = Vec::with_capacity(vars.heads.len());
    for (k, hv) in vars.heads.iter().enumerate() {
        let hd = &draw.heads[k];
        let noise = tape.constant(hd.noise.clone());
        let omegas = params.heads[k].generator.generate_on_tape(tape, &hv.layers, noise)?;
        let proj = tape.matmul(omegas, hv.key)?;
        let projection_t = tape.transpose(proj);
        let phases = tape.constant(Matrix::row_vector(&hd.phases));
        heads.push(HeadTape {
            projection_t,
            phases,
            norm: (2.0 / hd.phases.len() as f64).sqrt(),
        });
    }
    let mut total: Option<Var> = None;
    for (i, s) in seqs.iter().enumerate() {
        let ll = sequence_ll(tape, vars, &heads, params, s, ic, snapshots.map(|v| &v[i]))?;
        total = Some(match total {
            None => ll,
            Some(t) => tape.add(t, ll)?,
        });
    }
    Ok(tape.scale(total.expect("non-empty batch"), -1.0 / seqs.len() as f64))
}

/// Loss and gradients in [`ModelParams::tensors`] order.
pub fn loss_and_gradients(
    params: &ModelParams,
    draw: &FeatureDraw,
    seqs: &[&EventSequence],
    ic: &IntegrationConfig,
    attention: Attention,
) -> Result<(f64, Vec<Matrix>), TrainError> {
    let snapshots = match attention {
        Attention::Online { eta } => Some(online_snapshots(params, draw, seqs, eta)?),
        Attention::Offline => None,
    };
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let loss = tape_loss(&mut tape, &vars, params, draw, seqs, ic, snapshots.as_deref())?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = tape.backward(loss)?;
    let flat = vars.flat();
    let gs = flat
        .iter()
        .zip(params.tensors())
        .map(|(&v, (_, m))| grads.wrt(v, m.shape()))
        .collect();
    Ok((value, gs))
}

/// Adam (or plain gradient descent) state over a list of tensors.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    optimizer: Optimizer,
    lr: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, lr: f64, params: &ModelParams) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            optimizer,
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams, grads: &[Matrix]) {
        self.step += 1;
        let t = self.step as i32;
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            let g = grads[i].as_slice();
            match self.optimizer {
                Optimizer::Sgd => {
                    for (x, gi) in p.as_mut_slice().iter_mut().zip(g) {
                        *x -= self.lr * gi;
                    }
                }
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let m = self.m[i].as_mut_slice();
                    let v = self.v[i].as_mut_slice();
                    for (j, x) in p.as_mut_slice().iter_mut().enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        *x -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_gradients(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::frobenius_norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// Minibatch loss at each iteration, before that iteration's update.
    pub trace: Vec<f64>,
}

/// Initial parameters with the base rate set to the empirical per-mark rate.
pub fn initial_params(ds: &Dataset, model: &ModelConfig, seed: u64) -> Result<ModelParams, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let exposure: f64 = ds.sequences.iter().map(EventSequence::horizon).sum();
    let rate = ds.event_count() as f64 / (exposure * ds.mark_space.components() as f64);
    Ok(ModelParams::init(model.clone(), ds.mark_space, rate, &mut stream(seed, 0)))
}

pub fn train(ds: &Dataset, model: &ModelConfig, tc: &TrainConfig, ic: &IntegrationConfig) -> Result<TrainOutput, TrainError> {
    let params = initial_params(ds, model, tc.seed)?;
    train_from(params, ds, tc, ic)
}

/// Continues training from `params`.
pub fn train_from(mut params: ModelParams, ds: &Dataset, tc: &TrainConfig, ic: &IntegrationConfig) -> Result<TrainOutput, TrainError> {
    tc.validate()?;
    ic.validate()?;
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = stream(tc.seed, 1);
    let mut opt = OptimizerState::new(tc.optimizer, tc.learning_rate, &params);
    let mut trace = Vec::with_capacity(tc.iterations);
    let batch = tc.batch_size.min(ds.len());
    for iteration in 0..tc.iterations {
        let mut picks = sample_indices(&mut rng, ds.len(), batch).into_vec();
        picks.sort_unstable();
        let seqs: Vec<&EventSequence> = picks.iter().map(|&i| &ds.sequences[i]).collect();
        let draw = FeatureDraw::sample(&params, tc.features, &mut rng);
        let (loss, mut grads) = match loss_and_gradients(&params, &draw, &seqs, ic, tc.attention) {
            Ok(r) => r,
            Err(TrainError::Autodiff(AutodiffError::Domain { value, .. })) => {
                return Err(TrainError::DivergedLoss { iteration, loss: value })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::DivergedLoss { iteration, loss });
        }
        clip_gradients(&mut grads, tc.clip_norm);
        opt.apply(&mut params, &grads);
        trace.push(loss);
        if iteration % 100 == 0 {
            log::info!("iteration {iteration}: loss {loss:.6}");
        }
    }
    Ok(TrainOutput { params, trace })
}

/// Convenience: an independent draw of `features` features for evaluation.
pub fn evaluation_draw(params: &ModelParams, features: usize, rng: &mut impl Rng) -> FeatureDraw {
    FeatureDraw::sample(params, features, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Dapp;
    use crate::autodiff::grad_check;
    use crate::likelihood::sequence_loglik;
    use crate::rng::seeded;

    fn tiny() -> ModelConfig {
        ModelConfig {
            heads: 2,
            value_dim: 2,
            noise_dim: 2,
            feature_dim: 2,
            hidden: vec![3],
            time_scale: 1.0,
        }
    }

    fn toy_data() -> Vec<EventSequence> {
        vec![
            EventSequence::from_times(&[0.15, 0.4, 0.8], 1.0).unwrap(),
            EventSequence::from_times(&[0.3, 0.35, 0.9], 1.0).unwrap(),
        ]
    }

    #[test]
    fn tape_loss_matches_evaluator() {
        let mut rng = seeded(3);
        let params = ModelParams::init(tiny(), MarkSpace::TEMPORAL, 2.0, &mut rng);
        let draw = FeatureDraw::sample(&params, 6, &mut rng);
        let seqs = toy_data();
        let refs: Vec<&EventSequence> = seqs.iter().collect();
        let ic = IntegrationConfig::new(9, Default::default()).unwrap();
        for attention in [Attention::Offline, Attention::Online { eta: 1 }] {
            let (loss, _) = loss_and_gradients(&params, &draw, &refs, &ic, attention).unwrap();
            let model = Dapp::new(&params, &draw).unwrap().with_attention(attention);
            let direct: f64 = seqs.iter().map(|s| sequence_loglik(&model, s, &ic).unwrap()).sum::<f64>() / 2.0;
            assert!((loss + direct).abs() < 1e-10, "{attention:?}: {loss} vs {direct}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(4);
        let params = ModelParams::init(tiny(), MarkSpace::TEMPORAL, 2.0, &mut rng);
        let draw = FeatureDraw::sample(&params, 5, &mut rng);
        let seqs = toy_data();
        let refs: Vec<&EventSequence> = seqs.iter().collect();
        let ic = IntegrationConfig::new(6, Default::default()).unwrap();
        let point: Vec<Matrix> = params.tensors().into_iter().map(|(_, m)| m.clone()).collect();
        let report = grad_check(
            |tape, leaves| {
                let vars = ParamVars::from_flat(&params, leaves);
                tape_loss(tape, &vars, &params, &draw, &refs, &ic, None)
                    .map_err(|e| match e {
                        TrainError::Autodiff(a) => a,
                        other => panic!("{other}"),
                    })
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn zero_iterations_returns_initialisation() {
        let ds = Dataset::new(toy_data(), MarkSpace::TEMPORAL);
        let tc = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let out = train(&ds, &tiny(), &tc, &IntegrationConfig::default()).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.params, initial_params(&ds, &tiny(), tc.seed).unwrap());
    }

    #[test]
    fn deterministic_trace() {
        let ds = Dataset::new(toy_data(), MarkSpace::TEMPORAL);
        let tc = TrainConfig {
            iterations: 5,
            batch_size: 1,
            features: 4,
            ..TrainConfig::default()
        };
        let ic = IntegrationConfig::new(10, Default::default()).unwrap();
        let a = train(&ds, &tiny(), &tc, &ic).unwrap();
        let b = train(&ds, &tiny(), &tc, &ic).unwrap();
        let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.trace), bits(&b.trace));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Matrix::filled(2, 2, 10.0), Matrix::scalar(5.0)];
        let before = clip_gradients(&mut g, 1.0);
        assert!(before > 1.0);
        let after = g.iter().map(Matrix::frobenius_norm_sq).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let tc = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(tc.validate().is_err());
        let ds = Dataset::new(vec![], MarkSpace::TEMPORAL);
        assert_eq!(train(&ds, &tiny(), &TrainConfig::default(), &IntegrationConfig::default()), Err(TrainError::EmptyDataset));
    }
}
