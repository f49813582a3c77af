//! End-to-end experiment pipelines: configuration, data sources,
//! train-then-cluster runs and the pruning and training-fraction sweeps.
//!
//! Configuration files are TOML with four sections:
//!
//! ```toml
//! [model]
//! preset = "arl"            # arl | eyb
//! mask = "full"             # full | pruned:<ratio>:<seed> | csc:<F>:<L>[:effective|per-layer]
//! gamma = 1.0
//! mu = 1.0
//! lambda = 1.0
//! reg = "l1"                # l1 | l2
//! decoder_input = "latent"  # latent | self-expressed
//!
//! [train]
//! learning_rate = 1e-3      # defaults to the preset's rate
//! epochs = 1000
//! warmup_epochs = 100       # defaults to min(100, epochs)
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//! seed = 0                  # model initialization
//! log_every = 0
//!
//! [data]
//! source = "synth:default"  # synth:default | synth:key=value,... | <directory>
//! image_size = 32
//! # modalities = ["visible", "s0"]
//!
//! [cluster]
//! # k = 5                   # defaults to the number of ground-truth labels
//! affinity = "abs"          # abs | raw
//! seed = 0
//! ```

use crate::cluster::{cluster_coefficients, AffinityMode, ClusterReport, Metrics};
use crate::csc::CscStack;
use crate::data::{load_image_dirs, subset, synth_generate, MultiModalDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{architecture, DecoderInput, LossWeights, ModelSpec, VmscModel};
use crate::numerics::Rng;
use crate::selfexpr::{MaskKind, RegKind};
use crate::train::{fit_with, EpochLog, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    pub mask: String,
    pub gamma: f64,
    pub mu: f64,
    pub lambda: f64,
    pub reg: RegKind,
    pub decoder_input: DecoderInput,
}

impl Default for ModelSection {
    fn default() -> Self {
        let w = LossWeights::default();
        ModelSection {
            preset: "arl".into(),
            mask: "full".into(),
            gamma: w.gamma,
            mu: w.mu,
            lambda: w.lambda,
            reg: w.reg,
            decoder_input: DecoderInput::Latent,
        }
    }
}

impl ModelSection {
    pub fn mask_kind(&self) -> Result<MaskKind> {
        self.mask.parse()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            gamma: self.gamma,
            mu: self.mu,
            lambda: self.lambda,
            reg: self.reg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub warmup_epochs: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: None,
            epochs: t.epochs,
            warmup_epochs: None,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: t.seed,
            log_every: t.log_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: String,
    pub image_size: usize,
    pub modalities: Option<Vec<String>>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "synth:default".into(),
            image_size: 32,
            modalities: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: Option<usize>,
    pub affinity: AffinityMode,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub cluster: ClusterSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Optimizer settings with preset-dependent defaults filled in.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let arch = architecture(&self.model.preset)?;
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(arch.learning_rate),
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            epochs: t.epochs,
            warmup_epochs: t
                .warmup_epochs
                .unwrap_or(TrainConfig::default().warmup_epochs.min(t.epochs)),
            seed: t.seed,
            log_every: t.log_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model layout for `data`.
    pub fn model_spec(&self, data: &MultiModalDataset) -> Result<ModelSpec> {
        let weights = self.model.loss_weights();
        weights.validate()?;
        let mut spec = ModelSpec::for_dataset(&self.model.preset, data);
        spec.mask = self.model.mask_kind()?;
        spec.weights = weights;
        spec.decoder_input = self.model.decoder_input;
        spec.seed = self.train.seed;
        Ok(spec)
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        self.train_config()?;
        self.model.mask_kind()?;
        self.model.loss_weights().validate()?;
        parse_source(&self.data.source)?;
        if self.data.image_size == 0 {
            return Err(Error::InvalidInput("image_size must be positive".into()));
        }
        Ok(())
    }
}

/// Where samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth(SynthSpec),
    Directory(PathBuf),
}

/// Parses `synth:default`, `synth:key=value,...` (keys of [`SynthSpec`]) or
/// a directory path.
pub fn parse_source(source: &str) -> Result<DataSource> {
    let Some(rest) = source.strip_prefix("synth:") else {
        return Ok(DataSource::Directory(PathBuf::from(source)));
    };
    let mut spec = SynthSpec::default();
    if rest == "default" || rest.is_empty() {
        return Ok(DataSource::Synth(spec));
    }
    for pair in rest.split(',') {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("bad synth option {pair:?}")))?;
        let bad = || Error::InvalidInput(format!("bad value for synth option {k}: {v:?}"));
        match k.trim() {
            "clusters" => spec.clusters = v.parse().map_err(|_| bad())?,
            "subspace_dim" => spec.subspace_dim = v.parse().map_err(|_| bad())?,
            "ambient" => spec.ambient = v.parse().map_err(|_| bad())?,
            "per_cluster" => spec.per_cluster = v.parse().map_err(|_| bad())?,
            "modalities" => spec.modalities = v.parse().map_err(|_| bad())?,
            "noise_sigma" => spec.noise_sigma = v.parse().map_err(|_| bad())?,
            "seed" => spec.seed = v.parse().map_err(|_| bad())?,
            other => {
                return Err(Error::InvalidInput(format!("unknown synth option {other:?}")));
            }
        }
    }
    Ok(DataSource::Synth(spec))
}

pub fn load_data(section: &DataSection) -> Result<MultiModalDataset> {
    match parse_source(&section.source)? {
        DataSource::Synth(spec) => synth_generate(&spec),
        DataSource::Directory(dir) => {
            load_image_dirs(&dir, section.modalities.as_deref(), section.image_size)
        }
    }
}

/// Cluster count: explicit, else the number of ground-truth labels.
pub fn resolve_k(section: &ClusterSection, data: &MultiModalDataset) -> Result<usize> {
    section.k.or_else(|| data.cluster_count()).ok_or_else(|| {
        Error::InvalidInput("cluster count k is required when the data has no labels".into())
    })
}

/// Trains a fresh model per `cfg`, invoking `on_epoch` after every step.
pub fn train_model(
    cfg: &ExperimentConfig,
    data: &MultiModalDataset,
    on_epoch: impl FnMut(&VmscModel, &EpochLog) -> Result<()>,
) -> Result<(VmscModel, Vec<EpochLog>)> {
    let train = cfg.train_config()?;
    let model = cfg.model_spec(data)?.build()?;
    fit_with(model, data, &train, on_epoch)
}

/// Spectral clustering of a trained model's coefficients.
pub fn cluster_model(
    model: &VmscModel,
    data: &MultiModalDataset,
    section: &ClusterSection,
) -> Result<ClusterReport> {
    let k = resolve_k(section, data)?;
    let mut rng = Rng::new(section.seed);
    let (labels, metrics) = cluster_coefficients(
        &model.coefficients(),
        k,
        section.affinity,
        data.labels(),
        &mut rng,
    )?;
    Ok(ClusterReport {
        labels,
        metrics,
        params: model.param_count(),
        selfexpr_params: model.selfexpr().active_param_count(),
    })
}

/// A trained model with its loss history and clustering.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: VmscModel,
    pub history: Vec<EpochLog>,
    pub report: ClusterReport,
}

pub fn run(cfg: &ExperimentConfig, data: &MultiModalDataset) -> Result<RunOutcome> {
    let (model, history) = train_model(cfg, data, |_, _| Ok(()))?;
    let report = cluster_model(&model, data, &cfg.cluster)?;
    Ok(RunOutcome {
        model,
        history,
        report,
    })
}

/// One trial of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Pruning ratio or training fraction.
    pub setting: f64,
    pub trial: usize,
    pub seed: u64,
    pub n: usize,
    pub metrics: Metrics,
    pub params: usize,
}

/// Mean and sample standard deviation of one metric at one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub setting: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

pub const PRUNE_RATIOS: [f64; 4] = [0.1, 0.3, 0.5, 0.7];
pub const TRAIN_FRACTIONS: [f64; 5] = [0.25, 0.4, 0.5, 0.6, 0.75];

fn require_metrics(report: &ClusterReport) -> Result<Metrics> {
    report
        .metrics
        .ok_or_else(|| Error::InvalidInput("sweeps need ground-truth labels".into()))
}

fn require_labels(data: &MultiModalDataset) -> Result<()> {
    match data.labels() {
        Some(_) => Ok(()),
        None => Err(Error::InvalidInput("sweeps need ground-truth labels".into())),
    }
}

/// Runs `trial` for every `(setting, seed)` pair in parallel and returns
/// the rows in setting-major, seed-minor order.
fn sweep<F, C>(settings: &[f64], seeds: &[u64], trial: F, on_trial: C) -> Result<Vec<SweepRow>>
where
    F: Fn(f64, usize, u64) -> Result<(SweepRow, RunOutcome)> + Sync,
    C: Fn(&SweepRow, &RunOutcome) -> Result<()> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::InvalidInput("a sweep needs at least one seed".into()));
    }
    let jobs: Vec<(f64, usize, u64)> = settings
        .iter()
        .flat_map(|&s| seeds.iter().enumerate().map(move |(i, &seed)| (s, i, seed)))
        .collect();
    jobs.into_par_iter()
        .map(|(s, i, seed)| {
            let (row, out) = trial(s, i, seed)?;
            on_trial(&row, &out)?;
            Ok(row)
        })
        .collect()
}

/// Trains and clusters once per `(ratio, seed)`; each seed drives both the
/// weights and the pruning mask. Ratio 0 keeps every edge.
pub fn prune_sweep(
    cfg: &ExperimentConfig,
    data: &MultiModalDataset,
    ratios: &[f64],
    seeds: &[u64],
    on_trial: impl Fn(&SweepRow, &RunOutcome) -> Result<()> + Sync,
) -> Result<Vec<SweepRow>> {
    require_labels(data)?;
    for &r in ratios {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidInput(format!("pruning ratio must lie in [0, 1), got {r}")));
        }
    }
    let trial = |ratio: f64, trial: usize, seed: u64| {
        let mut c = cfg.clone();
        c.train.seed = seed;
        c.model.mask = MaskKind::RandomPruned { ratio, seed }.to_string();
        let out = run(&c, data)?;
        let row = SweepRow {
            setting: ratio,
            trial,
            seed,
            n: data.n(),
            metrics: require_metrics(&out.report)?,
            params: out.report.params,
        };
        Ok((row, out))
    };
    sweep(ratios, seeds, trial, on_trial)
}

/// Trains and clusters on a stratified `fraction` of the data per seed.
pub fn fraction_sweep(
    cfg: &ExperimentConfig,
    data: &MultiModalDataset,
    fractions: &[f64],
    seeds: &[u64],
    on_trial: impl Fn(&SweepRow, &RunOutcome) -> Result<()> + Sync,
) -> Result<Vec<SweepRow>> {
    require_labels(data)?;
    // fail fast on infeasible fractions before any training
    for &f in fractions {
        let part = subset(data, f, seeds.first().copied().unwrap_or(0))?;
        if part.n() < 2 {
            return Err(Error::InvalidInput(format!(
                "fraction {f} leaves {} samples; self-expression needs at least 2",
                part.n()
            )));
        }
    }
    let trial = |fraction: f64, trial: usize, seed: u64| {
        let part = subset(data, fraction, seed)?;
        let mut c = cfg.clone();
        c.train.seed = seed;
        let out = run(&c, &part)?;
        let row = SweepRow {
            setting: fraction,
            trial,
            seed,
            n: part.n(),
            metrics: require_metrics(&out.report)?,
            params: out.report.params,
        };
        Ok((row, out))
    };
    sweep(fractions, seeds, trial, on_trial)
}

/// Seeds `base, base + 1, ..., base + trials - 1`.
pub fn trial_seeds(base: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64).map(|i| base + i).collect()
}

/// Size of a CSC-factored coefficient layer against a dense one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CscSummary {
    pub samples: usize,
    pub padded_n: usize,
    pub fan: usize,
    pub depth: usize,
    pub edges: usize,
    pub dense_params: usize,
    /// `edges / padded_n²`.
    pub compression: f64,
}

impl CscSummary {
    pub fn padded(&self) -> bool {
        self.padded_n != self.samples
    }

    pub fn reduction(&self) -> f64 {
        1.0 - self.compression
    }

    pub fn note(&self) -> String {
        if self.padded() {
            format!(
                "padded N from {} to {} = {}^{} with {} masked phantom nodes",
                self.samples,
                self.padded_n,
                self.fan,
                self.depth,
                self.padded_n - self.samples
            )
        } else {
            format!("N = {} = {}^{}, no padding", self.samples, self.fan, self.depth)
        }
    }
}

/// Lays out a CSC stack over `samples` nodes. Without `allow_padding`
/// the stack must satisfy `fan^depth = samples` exactly.
pub fn csc_layout(samples: usize, fan: usize, depth: usize, allow_padding: bool) -> Result<CscSummary> {
    let stack = if allow_padding {
        CscStack::padded(samples, fan, depth)?
    } else {
        CscStack::build(samples, fan, depth)?
    };
    let n = stack.n();
    let edges = stack.edge_count();
    Ok(CscSummary {
        samples,
        padded_n: n,
        fan,
        depth: stack.depth(),
        edges,
        dense_params: n * n,
        compression: edges as f64 / (n * n) as f64,
    })
}

/// Mean and sample standard deviation of `values` (std 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type Extractor = Box<dyn Fn(&SweepRow) -> f64>;

/// Per-setting mean and std of ACC, ARI, NMI and the parameter count, in
/// first-appearance order of the settings.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut settings: Vec<f64> = Vec::new();
    for r in rows {
        if !settings.contains(&r.setting) {
            settings.push(r.setting);
        }
    }
    let mut out = Vec::new();
    for s in settings {
        let at: Vec<&SweepRow> = rows.iter().filter(|r| r.setting == s).collect();
        let metrics: [(&str, Extractor); 4] = [
            ("acc", Box::new(|r| r.metrics.acc)),
            ("ari", Box::new(|r| r.metrics.ari)),
            ("nmi", Box::new(|r| r.metrics.nmi)),
            ("params", Box::new(|r| r.params as f64)),
        ];
        for (name, f) in metrics {
            let vals: Vec<f64> = at.iter().map(|r| f(r)).collect();
            let (mean, std) = mean_std(&vals);
            out.push(SweepSummary {
                setting: s,
                metric: name.to_string(),
                mean,
                std,
            });
        }
    }
    out
}

/// Median of a non-empty list.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
