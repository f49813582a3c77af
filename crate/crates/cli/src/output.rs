//! Files written by the commands: CSV tables, manifests and plots.

use crate::plot::{Chart, Series};
use serde_json::json;
use std::path::{Path, PathBuf};
use vmsc::cluster::ClusterReport;
use vmsc::experiment::{CscSummary, ExperimentConfig, SweepRow, SweepSummary};
use vmsc::train::EpochLog;
use vmsc::{Error, Result};

pub const METRICS_HEADER: [&str; 4] = ["acc", "ari", "nmi", "params"];
pub const PRUNE_HEADER: [&str; 7] = ["ratio", "trial", "seed", "acc", "ari", "nmi", "params"];
pub const PRUNE_SUMMARY_HEADER: [&str; 4] = ["ratio", "metric", "mean", "std"];
pub const FRACTION_HEADER: [&str; 8] = ["fraction", "trial", "seed", "n", "acc", "ari", "nmi", "params"];
pub const FRACTION_SUMMARY_HEADER: [&str; 4] = ["fraction", "metric", "mean", "std"];
pub const CSC_HEADER: [&str; 7] = [
    "samples",
    "padded_n",
    "fan",
    "depth",
    "edges",
    "dense_params",
    "compression",
];

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header and rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
        ),
        _ => err(e),
    })?;
    let header = r.headers().map_err(err)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(err)?;
    Ok((header, rows))
}

/// `acc, ari, nmi, params`; metric cells stay empty without ground truth.
pub fn write_metrics(path: &Path, report: &ClusterReport) -> Result<()> {
    let (acc, ari, nmi) = match &report.metrics {
        Some(m) => (m.acc.to_string(), m.ari.to_string(), m.nmi.to_string()),
        None => Default::default(),
    };
    write_csv(path, &METRICS_HEADER, [[acc, ari, nmi, report.params.to_string()]])
}

/// One cluster id per line, in dataset sample order.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    write_text(path, &text)
}

pub fn write_csc(path: &Path, s: &CscSummary) -> Result<()> {
    write_csv(
        path,
        &CSC_HEADER,
        [[
            s.samples.to_string(),
            s.padded_n.to_string(),
            s.fan.to_string(),
            s.depth.to_string(),
            s.edges.to_string(),
            s.dense_params.to_string(),
            s.compression.to_string(),
        ]],
    )
}

pub fn write_prune_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(
        path,
        &PRUNE_HEADER,
        rows.iter().map(|r| {
            vec![
                r.setting.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.metrics.acc.to_string(),
                r.metrics.ari.to_string(),
                r.metrics.nmi.to_string(),
                r.params.to_string(),
            ]
        }),
    )
}

pub fn write_fraction_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(
        path,
        &FRACTION_HEADER,
        rows.iter().map(|r| {
            vec![
                r.setting.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.n.to_string(),
                r.metrics.acc.to_string(),
                r.metrics.ari.to_string(),
                r.metrics.nmi.to_string(),
                r.params.to_string(),
            ]
        }),
    )
}

pub fn write_summary(path: &Path, header: &[&str], summary: &[SweepSummary]) -> Result<()> {
    write_csv(
        path,
        header,
        summary
            .iter()
            .map(|s| [s.setting.to_string(), s.metric.clone(), s.mean.to_string(), s.std.to_string()]),
    )
}

pub fn read_summary(path: &Path) -> Result<Vec<SweepSummary>> {
    let (_, rows) = read_csv(path)?;
    let num = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::Format(format!("{}: bad number {v:?}", path.display())))
    };
    rows.iter()
        .map(|r| match r.as_slice() {
            [setting, metric, mean, std] => Ok(SweepSummary {
                setting: num(setting)?,
                metric: metric.clone(),
                mean: num(mean)?,
                std: num(std)?,
            }),
            _ => Err(Error::Format(format!("{}: expected 4 columns", path.display()))),
        })
        .collect()
}

pub fn write_history(path: &Path, history: &[EpochLog]) -> Result<()> {
    vmsc::train::write_history_csv(history, path)
}

/// Loss curves on a log scale: one series per objective term.
pub fn loss_chart(epochs: &[f64], columns: &[(&str, Vec<f64>)]) -> Chart {
    Chart {
        title: "Training loss".into(),
        x_label: "epoch".into(),
        y_label: "loss".into(),
        log_y: true,
        series: columns
            .iter()
            .map(|(name, v)| Series::new(name, epochs.iter().zip(v).map(|(&e, &y)| (e, y, 0.0)).collect()))
            .collect(),
    }
}

pub fn history_chart(history: &[EpochLog]) -> Chart {
    let epochs: Vec<f64> = history.iter().map(|h| h.epoch as f64).collect();
    loss_chart(
        &epochs,
        &[
            ("total", history.iter().map(|h| h.total()).collect()),
            ("reg", history.iter().map(|h| h.parts.reg).collect()),
            ("recon", history.iter().map(|h| h.parts.recon).collect()),
            ("selfexpr", history.iter().map(|h| h.parts.selfexpr).collect()),
        ],
    )
}

/// Mean ± std of ACC, ARI and NMI against the swept setting.
pub fn sweep_chart(title: &str, x_label: &str, summary: &[SweepSummary]) -> Chart {
    let series = ["acc", "ari", "nmi"]
        .iter()
        .map(|m| {
            Series::new(
                &m.to_uppercase(),
                summary
                    .iter()
                    .filter(|s| s.metric == *m)
                    .map(|s| (s.setting, s.mean, s.std))
                    .collect(),
            )
        })
        .collect();
    Chart {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "score".into(),
        log_y: false,
        series,
    }
}

pub fn write_chart(path: &Path, chart: &Chart) -> Result<()> {
    write_text(path, &chart.to_svg())
}

/// Resolved inputs of a command, enough to replay it.
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config: Option<&'a ExperimentConfig>,
    pub seeds: Vec<u64>,
    pub extra: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

impl Manifest<'_> {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let train = self.config.map(|c| c.train_config()).transpose()?;
        let outputs: Vec<String> = self
            .outputs
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect();
        let value = json!({
            "command": self.command,
            "versions": {
                "vmsc": vmsc::VERSION,
                "vmsc-cli": env!("CARGO_PKG_VERSION"),
            },
            "args": std::env::args().skip(1).collect::<Vec<_>>(),
            "config": self.config,
            "resolved_train": train,
            "seeds": self.seeds,
            "details": self.extra,
            "outputs": outputs,
        });
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&value)
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        write_text(&path, &(text + "\n"))
    }
}

/// Writes the resolved config next to the outputs so `--config` replays it.
pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let path = dir.join("config.toml");
    write_text(&path, &cfg.to_toml())?;
    Ok(path)
}
