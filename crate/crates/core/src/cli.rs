//! Command-line front end: `simulate | train | eval | export`.
//!
//! Options may also come from a flat `key = value` file given by
//! `--config`; keys are long option names without dashes. Command-line
//! options take precedence over the file.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::{Attention, Dapp, FeatureDraw, ModelConfig, ModelParams};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::evaluation::{eval_suite, export_intensity_curve, write_loss_trace, EvalError, EvalModel, EvalOptions};
use crate::events::{Dataset, DatasetError};
use crate::fourier::FourierFeatureBatch;
use crate::hawkes::{fit_hawkes, HawkesError, HawkesParams};
use crate::likelihood::{ConditionalIntensity, IntegrationConfig, LikelihoodError, Scheme};
use crate::rng::seeded;
use crate::simulation::{calibrate_horizon, sample_dapp_dataset, GeneratorSpec, Process, SimulationError, ThinningConfig};
use crate::train::{initial_params, online_budget, train_from, Optimizer, TrainConfig, TrainError};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "DAPP_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "dapp", version, about = "Deep attention point processes", args_override_self = true)]
pub struct Cli {
    /// Flat key = value file with default option values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads [default: $DAPP_WORKERS or available parallelism].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset or sample from a trained model.
    Simulate(SimulateArgs),
    /// Fit DAPP (or the Hawkes baseline) to a dataset.
    Train(TrainArgs),
    /// Held-out log-likelihood and intensity-recovery error.
    Eval(EvalArgs),
    /// Figure data: intensity curves, score matrices, spectra.
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    Hawkes,
    SelfCorrection,
    Nhpp1,
    Nhpp2,
    Poisson,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub gen: Option<Generator>,
    /// Checkpoint to sample from instead of a generator.
    #[arg(long, conflicts_with = "gen")]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 100.0)]
    pub c: f64,
    #[arg(long, default_value_t = 50.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 50.0)]
    pub c2: f64,
    #[arg(long, default_value_t = 5.0)]
    pub rate: f64,
    /// Horizon; calibrated to --target-length when omitted.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Mean sequence length used to calibrate the horizon.
    #[arg(long, default_value_t = 30.0)]
    pub target_length: f64,
    #[arg(long, default_value_t = 500)]
    pub pilots: usize,
    /// Number of sequences.
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 2.0)]
    pub safety: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_rejections: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Hawkes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeName {
    Trapezoid,
    Simpson,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Trapezoid => Scheme::Trapezoid,
            SchemeName::Simpson => Scheme::Simpson,
        }
    }
}

#[derive(Debug, Args)]
pub struct IntegrationArgs {
    /// Uniform integration grid points per sequence.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long, value_enum, default_value_t = SchemeName::Trapezoid)]
    pub scheme: SchemeName,
}

impl IntegrationArgs {
    fn config(&self) -> Result<IntegrationConfig, CliError> {
        IntegrationConfig::new(self.grid, self.scheme.into()).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint (or Hawkes parameter JSON with --baseline).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Fourier features per head per iteration.
    #[arg(long, default_value_t = 20)]
    pub features: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerName::Adam)]
    pub optimizer: OptimizerName,
    #[arg(long, default_value_t = 10.0)]
    pub clip: f64,
    /// Train the online (bounded-memory) variant.
    #[arg(long)]
    pub online: bool,
    /// Fraction of the longest training sequence kept by online attention.
    #[arg(long, default_value_t = 0.5)]
    pub eta_frac: f64,
    /// Explicit online budget; overrides --eta-frac.
    #[arg(long)]
    pub eta: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub value_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub noise_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    /// Generator hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "128,256,128")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
    /// Loss trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub integration: IntegrationArgs,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// DAPP checkpoint.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    /// Hawkes parameter JSON written by `train --baseline hawkes`.
    #[arg(long)]
    pub hawkes: Vec<PathBuf>,
    /// Frozen Fourier features per head for DAPP evaluation.
    #[arg(long = "eval-features", default_value_t = 10_000)]
    pub eval_features: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub mse_grid: usize,
    /// Fail when the dataset has no truth instead of skipping the MSE.
    #[arg(long)]
    pub require_mse: bool,
    /// Record wall-clock time per model (makes output run-dependent).
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub integration: IntegrationArgs,
}

#[derive(Debug, Subcommand)]
pub enum ExportCommand {
    /// CSV `t,lambda[,truth]` for one sequence.
    Intensity(IntensityArgs),
    /// Lower-triangular normalized score matrix of one sequence.
    Scores(ScoresArgs),
    /// Sampled frequencies and phases of one head.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Args)]
pub struct IntensityArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long = "points", default_value_t = 1000)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoresArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 0)]
    pub head: usize,
    #[arg(long = "eval-features", default_value_t = 10_000)]
    pub eval_features: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub head: usize,
    #[arg(long = "eval-features", default_value_t = 10_000)]
    pub eval_features: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LikelihoodError> for CliError {
    fn from(e: LikelihoodError) -> Self {
        match e {
            LikelihoodError::InvalidGrid(_) => CliError::Config(e.to_string()),
            LikelihoodError::EmptyDataset => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Likelihood(l) => l.into(),
            EvalError::EmptyGrid => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::InvalidParameter(_) => CliError::Config(e.to_string()),
            SimulationError::Event(_) => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::EmptyDataset => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<HawkesError> for CliError {
    fn from(e: HawkesError) -> Self {
        match e {
            HawkesError::EmptyDataset => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

const COMMANDS: [&str; 4] = ["simulate", "train", "eval", "export"];
const EXPORTS: [&str; 3] = ["intensity", "scores", "spectrum"];

/// Turns `key = value` lines into `--key value` arguments. Boolean `true`
/// becomes a bare flag and `false` drops it; `#` starts a comment.
pub fn config_file_args(text: &str) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key.starts_with('-') || key == "config" {
            return Err(CliError::Config(format!("config line {}: invalid key {key:?}", i + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

/// Splices config-file arguments in after the subcommand so that later
/// command-line occurrences override them.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.to_string_lossy())))?;
    let extra = config_file_args(&text)?;
    let mut at = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if COMMANDS.contains(&s.as_ref()) {
            at = Some(i + 1);
            if s == "export" {
                if let Some(next) = args.get(i + 1) {
                    if EXPORTS.contains(&next.to_string_lossy().as_ref()) {
                        at = Some(i + 2);
                    }
                }
            }
            break;
        }
    }
    let Some(at) = at else {
        return Ok(args);
    };
    let mut out = args[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

/// Git-style blob digest: sha256 of `"blob <len>\0" + content`.
pub fn content_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    Ok(content_digest(&fs::read(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Sidecar `<file>.meta.json` for CSV outputs.
fn write_sidecar(path: &Path, meta: &Value) -> Result<(), CliError> {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    write_json(Path::new(&name), meta)
}

fn args_meta(command: &str, seed: u64, args: &impl std::fmt::Debug) -> Value {
    json!({
        "command": command,
        "seed": seed,
        "args": format!("{args:?}"),
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn worker_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{WORKERS_ENV}={v:?} is not a count"))),
        Err(_) => Ok(None),
    }
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<(), CliError> {
    let mut meta = args_meta("simulate", seed, a);
    let ds = match (&a.gen, &a.model) {
        (Some(g), None) => {
            let process = match g {
                Generator::Hawkes => Process::Hawkes { mu: a.mu, alpha: a.alpha, beta: a.beta },
                Generator::SelfCorrection => Process::SelfCorrection { mu: a.mu, alpha: a.alpha },
                Generator::Nhpp1 => Process::Nhpp1 { c: a.c },
                Generator::Nhpp2 => Process::Nhpp2 { c1: a.c1, c2: a.c2 },
                Generator::Poisson => Process::Poisson { rate: a.rate },
            };
            process.validate()?;
            let horizon = match a.horizon.or(process.natural_horizon()) {
                Some(h) => h,
                None => calibrate_horizon(process, a.target_length, a.pilots, seed ^ 0x5eed)?,
            };
            let spec = GeneratorSpec { process, horizon, sequences: a.n };
            let mut ds = spec.generate(seed)?;
            meta["generator"] = json!(spec);
            ds.meta = Some(meta);
            ds
        }
        (None, Some(path)) => {
            let horizon = a
                .horizon
                .ok_or_else(|| CliError::Config("sampling a model needs --T".into()))?;
            let ckpt = Checkpoint::load(path)?;
            let mut rng = seeded(seed);
            let draw = FeatureDraw::sample(&ckpt.params, 10_000, &mut rng);
            let model = Dapp::new(&ckpt.params, &draw)
                .map_err(|e| CliError::Data(e.to_string()))?
                .with_attention(ckpt.attention);
            let cfg = ThinningConfig { safety: a.safety, max_rejections: a.max_rejections };
            let mut ds = sample_dapp_dataset(&model, horizon, a.n, &cfg, seed)?;
            meta["model_digest"] = json!(file_digest(path)?);
            ds.meta = Some(meta);
            ds
        }
        _ => return Err(CliError::Config("simulate needs --gen or --model".into())),
    };
    ds.save(&a.out)?;
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<(), CliError> {
    let ds = Dataset::load(&a.data)?;
    let digest = file_digest(&a.data)?;
    if let Some(Baseline::Hawkes) = a.baseline {
        let fit = fit_hawkes(&ds)?;
        let out = json!({
            "mu": fit.params.mu,
            "alpha": fit.params.alpha,
            "beta": fit.params.beta,
            "loglik": fit.loglik,
            "boundary": fit.boundary,
            "iterations": fit.iterations,
            "meta": { "command": "train", "baseline": "hawkes", "seed": seed, "data_digest": digest },
        });
        return write_json(&a.out, &out);
    }
    let model = ModelConfig {
        heads: a.heads,
        value_dim: a.value_dim,
        noise_dim: a.noise_dim,
        feature_dim: a.feature_dim,
        hidden: a.hidden.clone(),
        time_scale: a.time_scale,
    };
    if model.heads == 0 || model.value_dim == 0 || model.noise_dim == 0 || model.feature_dim == 0 {
        return Err(CliError::Config("model dimensions must be >= 1".into()));
    }
    let attention = if a.online {
        Attention::Online {
            eta: a.eta.unwrap_or_else(|| online_budget(&ds, a.eta_frac)),
        }
    } else {
        Attention::Offline
    };
    let optimizer = match a.optimizer {
        OptimizerName::Adam => Optimizer::default(),
        OptimizerName::Sgd => Optimizer::Sgd,
    };
    let tc = TrainConfig {
        iterations: a.iters,
        batch_size: a.batch,
        features: a.features,
        learning_rate: a.lr,
        optimizer,
        clip_norm: a.clip,
        attention,
        seed,
    };
    tc.validate()?;
    let ic = a.integration.config()?;
    let init = initial_params(&ds, &model, seed)?;
    let out = train_from(init, &ds, &tc, &ic)?;
    if let Some(p) = &a.trace {
        let mut w = BufWriter::new(File::create(p)?);
        write_loss_trace(&out.trace, &mut w)?;
        w.flush()?;
        write_sidecar(p, &json!({ "command": "train", "seed": seed, "data_digest": digest }))?;
    }
    let ckpt = Checkpoint {
        params: out.params,
        attention,
        seed,
        metadata: json!({
            "command": "train",
            "train": tc,
            "integration": ic,
            "model": model,
            "seed": seed,
            "final_loss": out.trace.last(),
            "data_digest": digest,
        }),
    };
    ckpt.save(&a.out)?;
    Ok(())
}

enum Loaded {
    Dapp(Box<Checkpoint>, FeatureDraw),
    Hawkes(HawkesParams),
}

fn load_models(m: &ModelArgs, seed: u64) -> Result<Vec<(String, Loaded, String)>, CliError> {
    let mut out = Vec::new();
    for (i, p) in m.model.iter().enumerate() {
        let ckpt = Checkpoint::load(p)?;
        let draw = FeatureDraw::sample(&ckpt.params, m.eval_features, &mut crate::rng::stream(seed, i as u64));
        let name = match ckpt.attention {
            Attention::Offline => "dapp".to_string(),
            Attention::Online { eta } => format!("odapp(eta={eta})"),
        };
        out.push((name, Loaded::Dapp(Box::new(ckpt), draw), file_digest(p)?));
    }
    for p in &m.hawkes {
        let v: Value = serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| CliError::Data(e.to_string()))?;
        let get = |k: &str| {
            v.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| CliError::Data(format!("{}: missing {k}", p.display())))
        };
        let hp = HawkesParams::new(get("mu")?, get("alpha")?, get("beta")?)?;
        out.push(("hawkes".to_string(), Loaded::Hawkes(hp), file_digest(p)?));
    }
    if out.is_empty() {
        return Err(CliError::Config("give at least one --model or --hawkes".into()));
    }
    Ok(out)
}

fn with_models<R>(
    loaded: &[(String, Loaded, String)],
    f: impl FnOnce(Vec<(&str, &dyn ConditionalIntensity, Option<usize>, &str)>) -> Result<R, CliError>,
) -> Result<R, CliError> {
    let dapps: Vec<Option<Dapp>> = loaded
        .iter()
        .map(|(_, l, _)| match l {
            Loaded::Dapp(c, d) => Dapp::new(&c.params, d)
                .map(|m| Some(m.with_attention(c.attention)))
                .map_err(|e| CliError::Data(e.to_string())),
            Loaded::Hawkes(_) => Ok(None),
        })
        .collect::<Result<_, _>>()?;
    let list = loaded
        .iter()
        .zip(&dapps)
        .map(|((name, l, digest), d)| -> (&str, &dyn ConditionalIntensity, Option<usize>, &str) {
            match (l, d) {
                (Loaded::Dapp(_, draw), Some(m)) => (name.as_str(), m as &dyn ConditionalIntensity, Some(draw.features()), digest.as_str()),
                (Loaded::Hawkes(hp), _) => (name.as_str(), hp as &dyn ConditionalIntensity, None, digest.as_str()),
                _ => unreachable!(),
            }
        })
        .collect();
    f(list)
}

fn eval_cmd(a: &EvalArgs, seed: u64) -> Result<(), CliError> {
    let ds = Dataset::load(&a.data)?;
    if a.require_mse && ds.truth.is_none() {
        return Err(EvalError::MissingTruth.into());
    }
    let loaded = load_models(&a.models, seed)?;
    let opts = EvalOptions {
        mse_grid: a.mse_grid,
        integration: a.integration.config()?,
        timing: a.timing,
    };
    let reports = with_models(&loaded, |list| {
        let models: Vec<EvalModel> = list
            .into_iter()
            .map(|(name, model, features, digest)| EvalModel {
                name: name.to_string(),
                model,
                features,
                config_digest: digest.to_string(),
            })
            .collect();
        Ok(eval_suite(&models, &ds, &opts)?)
    })?;
    let mut meta = args_meta("eval", seed, a);
    meta["data_digest"] = json!(file_digest(&a.data)?);
    write_json(&a.out, &json!({ "meta": meta, "reports": reports }))
}

fn export_cmd(cmd: &ExportCommand, seed: u64) -> Result<(), CliError> {
    match cmd {
        ExportCommand::Intensity(a) => {
            let ds = Dataset::load(&a.data)?;
            let seq = ds
                .sequences
                .get(a.index)
                .ok_or_else(|| CliError::Config(format!("no sequence {}", a.index)))?;
            let loaded = load_models(&a.models, seed)?;
            if loaded.len() != 1 {
                return Err(CliError::Config("export intensity takes exactly one model".into()));
            }
            let truth = ds.truth.map(|p| p.for_sequence(seq));
            with_models(&loaded, |list| {
                let mut w = BufWriter::new(File::create(&a.out)?);
                export_intensity_curve(list[0].1, seq, truth.as_ref(), a.points, &mut w)?;
                w.flush()?;
                Ok(())
            })?;
            let mut meta = args_meta("export intensity", seed, a);
            meta["data_digest"] = json!(file_digest(&a.data)?);
            write_sidecar(&a.out, &meta)
        }
        ExportCommand::Scores(a) => {
            let ds = Dataset::load(&a.data)?;
            let seq = ds
                .sequences
                .get(a.index)
                .ok_or_else(|| CliError::Config(format!("no sequence {}", a.index)))?;
            let ckpt = Checkpoint::load(&a.model)?;
            if a.head >= ckpt.params.head_count() {
                return Err(CliError::Config(format!("model has {} heads", ckpt.params.head_count())));
            }
            let draw = FeatureDraw::sample(&ckpt.params, a.eval_features, &mut crate::rng::stream(seed, 0));
            let model = Dapp::new(&ckpt.params, &draw)
                .map_err(|e| CliError::Data(e.to_string()))?
                .with_attention(ckpt.attention);
            let mut w = BufWriter::new(File::create(&a.out)?);
            model.write_score_matrix_csv(seq, a.head, &mut w)?;
            w.flush()?;
            let mut meta = args_meta("export scores", seed, a);
            meta["data_digest"] = json!(file_digest(&a.data)?);
            meta["model_digest"] = json!(file_digest(&a.model)?);
            write_sidecar(&a.out, &meta)
        }
        ExportCommand::Spectrum(a) => {
            let ckpt = Checkpoint::load(&a.model)?;
            let params: &ModelParams = &ckpt.params;
            if a.head >= params.head_count() {
                return Err(CliError::Config(format!("model has {} heads", params.head_count())));
            }
            let mut rng = crate::rng::stream(seed, 0);
            let batch = FourierFeatureBatch::from_generator(&params.heads[a.head].generator, a.eval_features, a.head, &mut rng)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let mut w = BufWriter::new(File::create(&a.out)?);
            batch.write_csv(&mut w)?;
            w.flush()?;
            let mut meta = args_meta("export spectrum", seed, a);
            meta["model_digest"] = json!(file_digest(&a.model)?);
            write_sidecar(&a.out, &meta)
        }
    }
}

/// Parses already-expanded arguments and runs the command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = worker_count(cli.workers)? {
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Eval(a) => eval_cmd(a, cli.seed),
        Command::Export(c) => export_cmd(c, cli.seed),
    }
}

/// Entry point used by the `dapp` binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines_become_flags() {
        let args = config_file_args("# comment\niters = 5\nonline = true\nverbose = false\neta_frac=0.25\n").unwrap();
        let s: Vec<String> = args.into_iter().map(|a| a.into_string().unwrap()).collect();
        assert_eq!(s, ["--iters", "5", "--online", "--eta-frac", "0.25"]);
        assert!(config_file_args("nonsense").is_err());
    }

    #[test]
    fn cli_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "iters = 5\nbatch = 4\n").unwrap();
        let argv: Vec<OsString> = ["dapp", "--config", cfg.to_str().unwrap(), "train", "--data", "d", "--out", "o", "--iters", "7"]
            .iter()
            .map(OsString::from)
            .collect();
        let cli = Cli::try_parse_from(expand_args(argv).unwrap()).unwrap();
        match cli.command {
            Command::Train(t) => {
                assert_eq!(t.iters, 7);
                assert_eq!(t.batch, 4);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "bogus = 1\n").unwrap();
        let argv: Vec<OsString> = ["dapp", "--config", cfg.to_str().unwrap(), "train", "--data", "d", "--out", "o"]
            .iter()
            .map(OsString::from)
            .collect();
        assert!(Cli::try_parse_from(expand_args(argv).unwrap()).is_err());
    }

    #[test]
    fn digest_matches_git_style_sha256() {
        // sha256 of "blob 0\0"
        assert_eq!(
            content_digest(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
