use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use vmsc::cluster::AffinityMode;
use vmsc::experiment::ExperimentConfig;
use vmsc::model::DecoderInput;
use vmsc::selfexpr::{CscPenalty, RegKind};
use vmsc::{Error, Result};

/// Volterra multimodal subspace clustering.
///
/// Environment: VF_THREADS caps the number of worker threads.
/// Exit codes: 0 success, 2 usage or I/O error, 3 data error, 4 numerical error.
#[derive(Parser, Debug)]
#[command(name = "vmsc", version, about, long_about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic union-of-subspaces dataset as PGM directories.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Spectrally cluster the coefficients of a trained checkpoint.
    Cluster(ClusterArgs),
    /// Train and cluster across random pruning ratios of the coefficient layer.
    PruneSweep(PruneSweepArgs),
    /// Train and cluster on stratified fractions of the data.
    FractionSweep(FractionSweepArgs),
    /// Train and cluster with a CSC-factored coefficient layer.
    Csc(CscArgs),
    /// Summarize output directories into tables and plots.
    Report(ReportArgs),
}

/// Experiment settings. Flags override values from `--config`, which
/// override built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config with [model], [train], [data] and [cluster] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generic override, e.g. `--set train.epochs=200`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub sets: Vec<String>,
    /// Architecture preset: arl or eyb.
    #[arg(long)]
    pub preset: Option<String>,
    /// `synth:default`, `synth:key=value,...` or a dataset directory.
    #[arg(long)]
    pub data: Option<String>,
    /// Side length images are resized to when loading directories.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Comma-separated modality subdirectories to load (default: all).
    #[arg(long, value_delimiter = ',')]
    pub modalities: Option<Vec<String>>,
    /// Coefficient mask: full, pruned:<ratio>:<seed> or csc:<F>:<L>[:effective|per-layer].
    #[arg(long)]
    pub mask: Option<String>,
    /// Reconstruction weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Self-expression weight.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Coefficient regularizer weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Coefficient regularizer: l1 or l2.
    #[arg(long)]
    pub reg: Option<RegKind>,
    /// Decoder input: latent or self-expressed.
    #[arg(long)]
    pub decoder_input: Option<DecoderInput>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate (default: the preset's).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Reconstruction-only warmup epochs (default: min(100, epochs)).
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Seed for model initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `train` also saves `checkpoints/epoch_<N>.ckpt` every N epochs (0 = off).
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Cluster count (default: number of ground-truth labels).
    #[arg(long)]
    pub k: Option<usize>,
    /// Affinity from coefficients: abs or raw.
    #[arg(long)]
    pub affinity: Option<AffinityMode>,
    /// Seed for k-means in spectral clustering.
    #[arg(long)]
    pub cluster_seed: Option<u64>,
}

fn set_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidInput(format!("--set expects SECTION.KEY=VALUE, got {spec:?}")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::InvalidInput(format!("--set key must be SECTION.KEY, got {key:?}")))?;
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(field.to_string(), parsed);
            Ok(())
        }
        _ => Err(Error::InvalidInput(format!("{section} is not a config section"))),
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let mut cfg = if self.sets.is_empty() {
            base
        } else {
            let mut table: toml::Table = toml::from_str(&base.to_toml())
                .map_err(|e| Error::Format(format!("config: {e}")))?;
            for s in &self.sets {
                set_override(&mut table, s)?;
            }
            toml::Value::Table(table)
                .try_into()
                .map_err(|e| Error::InvalidInput(format!("--set: {e}")))?
        };
        let m = &mut cfg.model;
        if let Some(v) = &self.preset {
            m.preset = v.clone();
        }
        if let Some(v) = &self.mask {
            m.mask = v.clone();
        }
        if let Some(v) = self.gamma {
            m.gamma = v;
        }
        if let Some(v) = self.mu {
            m.mu = v;
        }
        if let Some(v) = self.lambda {
            m.lambda = v;
        }
        if let Some(v) = self.reg {
            m.reg = v;
        }
        if let Some(v) = self.decoder_input {
            m.decoder_input = v;
        }
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
            // an implicit warmup never exceeds an explicit budget
            if self.warmup.is_none() {
                t.warmup_epochs = t.warmup_epochs.map(|w| w.min(v));
            }
        }
        if self.lr.is_some() {
            t.learning_rate = self.lr;
        }
        if self.warmup.is_some() {
            t.warmup_epochs = self.warmup;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.log_every {
            t.log_every = v;
        }
        let d = &mut cfg.data;
        if let Some(v) = &self.data {
            d.source = v.clone();
        }
        if let Some(v) = self.image_size {
            d.image_size = v;
        }
        if self.modalities.is_some() {
            d.modalities = self.modalities.clone();
        }
        let c = &mut cfg.cluster;
        if self.k.is_some() {
            c.k = self.k;
        }
        if let Some(v) = self.affinity {
            c.affinity = v;
        }
        if let Some(v) = self.cluster_seed {
            c.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator settings: `synth:default` or `synth:key=value,...`.
    #[arg(long, default_value = "synth:default")]
    pub spec: String,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long, default_value = "vmsc-train")]
    pub out: PathBuf,
    /// Print progress every N epochs (0 = silent).
    #[arg(long, default_value_t = 100)]
    pub progress: usize,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Checkpoint written by `train` or `csc`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset for sample ids and ground truth (default: the one recorded in the checkpoint).
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub modalities: Option<Vec<String>>,
    /// Cluster count (default: number of ground-truth labels).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "abs")]
    pub affinity: AffinityMode,
    /// Seed for k-means.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "vmsc-cluster")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SeedArgs {
    /// Trials per setting, with seeds base, base+1, ... from --seed.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Explicit comma-separated seed list; overrides --trials.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct PruneSweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Fractions of off-diagonal coefficients to remove.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7")]
    pub ratios: Vec<f64>,
    #[arg(long, default_value = "vmsc-prune-sweep")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FractionSweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Fractions of the data to train on.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.4,0.5,0.6,0.75")]
    pub fractions: Vec<f64>,
    #[arg(long, default_value = "vmsc-fraction-sweep")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CscArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Fan-out F of each layer.
    #[arg(long)]
    pub fan: usize,
    /// Number of layers L (a minimum when padding).
    #[arg(long)]
    pub depth: usize,
    /// Regularize the effective product or each layer.
    #[arg(long, default_value = "effective")]
    pub penalty: CscPenalty,
    /// Require F^L = N exactly instead of padding with phantom nodes.
    #[arg(long)]
    pub no_pad: bool,
    #[arg(long, default_value = "vmsc-csc")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Output directories of earlier commands.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Where to write the markdown summary (default: stdout only).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SeedArgs {
    pub fn resolve(&self, base: u64) -> Result<Vec<u64>> {
        let seeds = match &self.seeds {
            Some(s) => s.clone(),
            None => vmsc::experiment::trial_seeds(base, self.trials),
        };
        if seeds.is_empty() {
            return Err(Error::InvalidInput("at least one trial is required".into()));
        }
        Ok(seeds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_sets_and_defaults() {
        let args = ConfigArgs {
            sets: vec!["train.epochs=20".into(), "model.mask=\"pruned:0.5:3\"".into()],
            lr: Some(0.01),
            ..ConfigArgs::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.train.epochs, 20);
        assert_eq!(cfg.model.mask, "pruned:0.5:3");
        assert_eq!(cfg.train.learning_rate, Some(0.01));
    }

    #[test]
    fn bare_string_set_values() {
        let args = ConfigArgs {
            sets: vec!["data.source=synth:clusters=2".into()],
            ..ConfigArgs::default()
        };
        assert_eq!(args.resolve().unwrap().data.source, "synth:clusters=2");
    }

    #[test]
    fn bad_overrides_rejected() {
        for s in ["epochs=3", "train.nope=1", "train.epochs"] {
            let args = ConfigArgs {
                sets: vec![s.into()],
                ..ConfigArgs::default()
            };
            assert!(args.resolve().is_err(), "{s}");
        }
    }

    #[test]
    fn short_budget_clamps_implicit_warmup() {
        let args = ConfigArgs {
            epochs: Some(10),
            ..ConfigArgs::default()
        };
        assert_eq!(args.resolve().unwrap().train_config().unwrap().warmup_epochs, 10);
    }
}
