//! Intensity-recovery error, held-out likelihood reports and CSV exports.

use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Dataset, Event, EventSequence, MarkSpace};
use crate::likelihood::{average_loglik, ConditionalIntensity, IntegrationConfig, LikelihoodError, Query};
use crate::simulation::TruthIntensity;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("dataset carries no ground-truth process")]
    MissingTruth,
    #[error("evaluation grid must have at least one point")]
    EmptyGrid,
    #[error("dataset has no sequences")]
    EmptyDataset,
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Default number of grid points per sequence for intensity recovery.
pub const MSE_GRID: usize = 1000;

/// Grid `t_k = k T / points`, `k = 0..points`.
pub fn uniform_grid(horizon: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| horizon * k as f64 / points as f64).collect()
}

/// Model intensity summed over marks at each time, conditioned on the
/// events of `seq` strictly before that time.
pub fn ground_intensities<M: ConditionalIntensity + ?Sized>(model: &M, seq: &EventSequence, times: &[f64]) -> Vec<f64> {
    let marks = model.mark_space().marks();
    let events = seq.events();
    let mut queries = Vec::with_capacity(times.len() * marks.len());
    let mut count = 0;
    for &t in times {
        while count < events.len() && events[count].t < t {
            count += 1;
        }
        for &mark in &marks {
            queries.push(Query { t, mark, count });
        }
    }
    model
        .intensities(seq, &queries)
        .chunks(marks.len())
        .map(|c| c.iter().sum())
        .collect()
}

fn truth_curves(ds: &Dataset, grid: usize) -> Result<Vec<Vec<f64>>, EvalError> {
    let truth = ds.truth.ok_or(EvalError::MissingTruth)?;
    Ok(ds
        .sequences
        .par_iter()
        .map(|s| ground_intensities(&truth.for_sequence(s), s, &uniform_grid(s.horizon(), grid)))
        .collect())
}

/// Mean over sequences of the mean squared difference between the model
/// and the true intensity on a `grid`-point uniform grid.
pub fn intensity_mse<M: ConditionalIntensity + ?Sized>(model: &M, ds: &Dataset, grid: usize) -> Result<f64, EvalError> {
    if grid == 0 {
        return Err(EvalError::EmptyGrid);
    }
    if ds.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let truth = truth_curves(ds, grid)?;
    let per_seq: Vec<f64> = ds
        .sequences
        .par_iter()
        .zip(truth.par_iter())
        .map(|(s, lt)| {
            let est = ground_intensities(model, s, &uniform_grid(s.horizon(), grid));
            est.iter().zip(lt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / grid as f64
        })
        .collect();
    Ok(per_seq.iter().sum::<f64>() / per_seq.len() as f64)
}

/// A history-independent intensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantRate {
    pub rate: f64,
}

impl ConditionalIntensity for ConstantRate {
    fn intensity(&self, _t: f64, _mark: Option<usize>, _history: &[Event]) -> f64 {
        self.rate
    }

    fn mark_space(&self) -> MarkSpace {
        MarkSpace::TEMPORAL
    }
}

/// The constant rate with the smallest intensity MSE (the grand mean of the
/// true intensity over all grid points) and that MSE.
pub fn best_constant_mse(ds: &Dataset, grid: usize) -> Result<(ConstantRate, f64), EvalError> {
    if grid == 0 {
        return Err(EvalError::EmptyGrid);
    }
    if ds.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let truth = truth_curves(ds, grid)?;
    let n = (truth.len() * grid) as f64;
    let mean = truth.iter().flatten().sum::<f64>() / n;
    let mse = truth.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((ConstantRate { rate: mean }, mse))
}

/// Metrics for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    pub heldout_avg_loglik: f64,
    pub sequences: usize,
    pub mse_grid: usize,
    pub integration: IntegrationConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    /// Wall-clock seconds; only filled when timing was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_secs: Option<f64>,
    pub config_digest: String,
}

/// A model under evaluation.
pub struct EvalModel<'a> {
    pub name: String,
    pub model: &'a dyn ConditionalIntensity,
    /// Feature count of the frozen draw, for DAPP models.
    pub features: Option<usize>,
    pub config_digest: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub mse_grid: usize,
    pub integration: IntegrationConfig,
    pub timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mse_grid: MSE_GRID,
            integration: IntegrationConfig::default(),
            timing: false,
        }
    }
}

/// Held-out likelihood for every model, plus intensity MSE when `test`
/// carries a truth descriptor.
pub fn eval_suite(models: &[EvalModel<'_>], test: &Dataset, opts: &EvalOptions) -> Result<Vec<EvalReport>, EvalError> {
    models
        .iter()
        .map(|m| {
            let start = Instant::now();
            let ll = average_loglik(m.model, test, &opts.integration)?;
            let mse = match test.truth {
                Some(_) => Some(intensity_mse(m.model, test, opts.mse_grid)?),
                None => None,
            };
            Ok(EvalReport {
                model: m.name.clone(),
                mse,
                heldout_avg_loglik: ll,
                sequences: test.len(),
                mse_grid: opts.mse_grid,
                integration: opts.integration,
                features: m.features,
                runtime_secs: opts.timing.then(|| start.elapsed().as_secs_f64()),
                config_digest: m.config_digest.clone(),
            })
        })
        .collect()
}

/// CSV `t,lambda[,truth]` on `grid` uniform points of `[0, T)`.
pub fn export_intensity_curve<M: ConditionalIntensity + ?Sized>(
    model: &M,
    seq: &EventSequence,
    truth: Option<&TruthIntensity>,
    grid: usize,
    w: &mut impl Write,
) -> io::Result<()> {
    let times = uniform_grid(seq.horizon(), grid);
    let est = ground_intensities(model, seq, &times);
    let tru = truth.map(|t| ground_intensities(t, seq, &times));
    match &tru {
        Some(_) => writeln!(w, "t,lambda,truth")?,
        None => writeln!(w, "t,lambda")?,
    }
    for (i, t) in times.iter().enumerate() {
        match &tru {
            Some(v) => writeln!(w, "{t},{},{}", est[i], v[i])?,
            None => writeln!(w, "{t},{}", est[i])?,
        }
    }
    Ok(())
}

/// CSV `iteration,loss`.
pub fn write_loss_trace(trace: &[f64], w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "iteration,loss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    Ok(())
}
