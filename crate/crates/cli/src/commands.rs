use crate::args::{ClusterArgs, CscArgs, FractionSweepArgs, PruneSweepArgs, ReportArgs, SynthArgs, TrainArgs};
use crate::output::*;
use serde_json::json;
use std::path::{Path, PathBuf};
use vmsc::cluster::ClusterReport;
use vmsc::data::{synth_generate, MultiModalDataset};
use vmsc::experiment::{
    cluster_model, csc_layout, fraction_sweep, load_data, parse_source, prune_sweep, run, summarize,
    train_model, ClusterSection, DataSection, DataSource, ExperimentConfig, RunOutcome, SweepRow,
};
use vmsc::model::{read_checkpoint, write_checkpoint, VmscModel};
use vmsc::selfexpr::MaskKind;
use vmsc::{Error, Result};

fn checkpoint_meta(cfg: &ExperimentConfig) -> Vec<(&'static str, String)> {
    let mut meta = vec![
        ("data", cfg.data.source.clone()),
        ("image_size", cfg.data.image_size.to_string()),
    ];
    if let Some(m) = &cfg.data.modalities {
        meta.push(("modalities", m.join(",")));
    }
    if let Ok(t) = cfg.train_config() {
        meta.push(("epochs", t.epochs.to_string()));
        meta.push(("learning_rate", format!("{:?}", t.learning_rate)));
        meta.push(("warmup_epochs", t.warmup_epochs.to_string()));
    }
    meta
}

fn print_report(report: &ClusterReport) {
    print!("{}", report.table());
}

fn describe(data: &MultiModalDataset) -> String {
    let shapes: Vec<String> = (0..data.modality_count())
        .map(|t| {
            let (h, w, c) = data.shape(t);
            format!("{}:{h}x{w}x{c}", data.modality(t).name)
        })
        .collect();
    format!("{} samples, {} modalities ({})", data.n(), data.modality_count(), shapes.join(" "))
}

/// Writes loss, metrics and labels of one finished run into `dir`.
fn write_run(dir: &Path, out: &RunOutcome) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let files = vec![dir.join("loss.csv"), dir.join("metrics.csv"), dir.join("labels.txt")];
    write_history(&files[0], &out.history)?;
    write_metrics(&files[1], &out.report)?;
    write_labels(&files[2], &out.report.labels)?;
    Ok(files)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let DataSource::Synth(spec) = parse_source(&args.spec)? else {
        return Err(Error::InvalidInput(format!(
            "--spec must start with synth:, got {:?}",
            args.spec
        )));
    };
    let data = synth_generate(&spec)?;
    create_dir(&args.out)?;
    data.write_image_dirs(&args.out)?;
    Manifest {
        command: "synth",
        config: None,
        seeds: vec![spec.seed],
        extra: json!({ "spec": spec }),
        outputs: vec![args.out.join("labels.csv")],
    }
    .write(&args.out)?;
    eprintln!("wrote {} to {}", describe(&data), args.out.display());
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let data = load_data(&cfg.data)?;
    let train = cfg.train_config()?;
    create_dir(&args.out)?;
    let mut outputs = vec![write_config(&args.out, &cfg)?];
    let meta = checkpoint_meta(&cfg);
    eprintln!("training {} on {}", cfg.model.preset, describe(&data));

    let ckpt_dir = args.out.join("checkpoints");
    if train.log_every > 0 {
        create_dir(&ckpt_dir)?;
    }
    let (model, history) = train_model(&cfg, &data, |model, log| {
        let done = log.epoch + 1;
        if args.progress > 0 && (done % args.progress == 0 || done == train.epochs) {
            eprintln!(
                "epoch {done:>5}/{}  total {:.6e}  recon {:.4e}  selfexpr {:.4e}  reg {:.4e}",
                train.epochs,
                log.total(),
                log.parts.recon,
                log.parts.selfexpr,
                log.parts.reg
            );
        }
        if train.log_every > 0 && done % train.log_every == 0 {
            write_checkpoint(model, &meta, &ckpt_dir.join(format!("epoch_{done:05}.ckpt")))?;
        }
        Ok(())
    })?;

    let ckpt = args.out.join("model.ckpt");
    write_checkpoint(&model, &meta, &ckpt)?;
    let loss = args.out.join("loss.csv");
    write_history(&loss, &history)?;
    let plot = args.out.join("loss.svg");
    write_chart(&plot, &history_chart(&history))?;
    outputs.extend([ckpt, loss, plot]);
    Manifest {
        command: "train",
        config: Some(&cfg),
        seeds: vec![cfg.train.seed],
        extra: json!({ "params": model.param_count(), "n": model.n() }),
        outputs,
    }
    .write(&args.out)?;
    println!("params  {}", model.param_count());
    println!("checkpoint {}", args.out.join("model.ckpt").display());
    Ok(())
}

fn load_for_checkpoint(args: &ClusterArgs, model: &VmscModel, meta: &std::collections::BTreeMap<String, String>) -> Result<(DataSection, MultiModalDataset)> {
    let source = args.data.clone().or_else(|| meta.get("data").cloned()).ok_or_else(|| {
        Error::InvalidInput("the checkpoint records no dataset; pass --data".into())
    })?;
    let image_size = match args.image_size {
        Some(s) => s,
        None => meta
            .get("image_size")
            .and_then(|s| s.parse().ok())
            .unwrap_or(DataSection::default().image_size),
    };
    let modalities = args.modalities.clone().or_else(|| {
        meta.get("modalities")
            .map(|m| m.split(',').map(String::from).collect())
    });
    let section = DataSection {
        source,
        image_size,
        modalities,
    };
    let data = load_data(&section)?;
    if data.n() != model.n() {
        return Err(Error::Alignment(format!(
            "checkpoint was trained on {} samples but {} has {}",
            model.n(),
            section.source,
            data.n()
        )));
    }
    Ok((section, data))
}

pub fn cluster(args: &ClusterArgs) -> Result<()> {
    let (model, meta) = read_checkpoint(&args.checkpoint)?;
    let (data_section, data) = load_for_checkpoint(args, &model, &meta)?;
    let section = ClusterSection {
        k: args.k,
        affinity: args.affinity,
        seed: args.seed,
    };
    let report = cluster_model(&model, &data, &section)?;
    create_dir(&args.out)?;
    let labels = args.out.join("labels.txt");
    write_labels(&labels, &report.labels)?;
    let metrics = args.out.join("metrics.csv");
    write_metrics(&metrics, &report)?;
    Manifest {
        command: "cluster",
        config: None,
        seeds: vec![args.seed],
        extra: json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "data": data_section,
            "cluster": section,
            "selfexpr_params": report.selfexpr_params,
            "ground_truth": data.labels().is_some(),
        }),
        outputs: vec![labels, metrics],
    }
    .write(&args.out)?;
    if report.metrics.is_none() {
        eprintln!("no ground-truth labels: metrics omitted");
    }
    print_report(&report);
    Ok(())
}

fn print_summary(setting: &str, rows: &[SweepRow]) {
    println!("{setting:>8}  {:>15}  {:>15}  {:>15}  params", "ACC", "ARI", "NMI");
    let summary = summarize(rows);
    for chunk in summary.chunks(4) {
        let cell = |i: usize| format!("{:.4} ± {:.4}", chunk[i].mean, chunk[i].std);
        println!(
            "{:>8}  {:>15}  {:>15}  {:>15}  {}",
            chunk[0].setting,
            cell(0),
            cell(1),
            cell(2),
            chunk[3].mean
        );
    }
}

fn trial_done(label: &str, row: &SweepRow) {
    eprintln!(
        "{label} {} seed {}: ACC {:.4} ARI {:.4} NMI {:.4}",
        row.setting, row.seed, row.metrics.acc, row.metrics.ari, row.metrics.nmi
    );
}

pub fn prune_sweep_cmd(args: &PruneSweepArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let seeds = args.seeds.resolve(cfg.train.seed)?;
    let data = load_data(&cfg.data)?;
    create_dir(&args.out)?;
    let mut outputs = vec![write_config(&args.out, &cfg)?];
    eprintln!(
        "prune sweep: {} ratios x {} seeds on {}",
        args.ratios.len(),
        seeds.len(),
        describe(&data)
    );
    let rows = prune_sweep(&cfg, &data, &args.ratios, &seeds, |row, out| {
        let dir = args.out.join("trials").join(format!("ratio_{}_seed_{}", row.setting, row.seed));
        write_run(&dir, out)?;
        trial_done("ratio", row);
        Ok(())
    })?;
    let summary = summarize(&rows);
    let files = [
        args.out.join("prune_sweep.csv"),
        args.out.join("prune_summary.csv"),
        args.out.join("prune_sweep.svg"),
    ];
    write_prune_rows(&files[0], &rows)?;
    write_summary(&files[1], &PRUNE_SUMMARY_HEADER, &summary)?;
    write_chart(&files[2], &sweep_chart("Pruned coefficient layer", "pruning ratio", &summary))?;
    outputs.extend(files);
    Manifest {
        command: "prune-sweep",
        config: Some(&cfg),
        seeds: seeds.clone(),
        extra: json!({ "ratios": args.ratios }),
        outputs,
    }
    .write(&args.out)?;
    print_summary("ratio", &rows);
    Ok(())
}

pub fn fraction_sweep_cmd(args: &FractionSweepArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let seeds = args.seeds.resolve(cfg.train.seed)?;
    let data = load_data(&cfg.data)?;
    create_dir(&args.out)?;
    let mut outputs = vec![write_config(&args.out, &cfg)?];
    eprintln!(
        "fraction sweep: {} fractions x {} seeds on {}",
        args.fractions.len(),
        seeds.len(),
        describe(&data)
    );
    let rows = fraction_sweep(&cfg, &data, &args.fractions, &seeds, |row, out| {
        let dir = args
            .out
            .join("trials")
            .join(format!("fraction_{}_seed_{}", row.setting, row.seed));
        create_dir(&dir)?;
        write_history(&dir.join("loss.csv"), &out.history)?;
        write_metrics(&dir.join("metrics.csv"), &out.report)?;
        trial_done("fraction", row);
        Ok(())
    })?;
    let summary = summarize(&rows);
    let files = [
        args.out.join("fraction_sweep.csv"),
        args.out.join("fraction_summary.csv"),
        args.out.join("fraction_sweep.svg"),
    ];
    write_fraction_rows(&files[0], &rows)?;
    write_summary(&files[1], &FRACTION_SUMMARY_HEADER, &summary)?;
    write_chart(&files[2], &sweep_chart("Training on a fraction of the data", "fraction", &summary))?;
    outputs.extend(files);
    Manifest {
        command: "fraction-sweep",
        config: Some(&cfg),
        seeds: seeds.clone(),
        extra: json!({ "fractions": args.fractions }),
        outputs,
    }
    .write(&args.out)?;
    print_summary("fraction", &rows);
    Ok(())
}

pub fn csc(args: &CscArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    let data = load_data(&cfg.data)?;
    let layout = csc_layout(data.n(), args.fan, args.depth, !args.no_pad)?;
    cfg.model.mask = MaskKind::Csc {
        fan: args.fan,
        depth: args.depth,
        penalty: args.penalty,
    }
    .to_string();
    create_dir(&args.out)?;
    let mut outputs = vec![write_config(&args.out, &cfg)?];
    eprintln!("{}", layout.note());
    eprintln!("training {} on {}", cfg.model.preset, describe(&data));
    let out = run(&cfg, &data)?;
    outputs.extend(write_run(&args.out, &out)?);
    let ckpt = args.out.join("model.ckpt");
    write_checkpoint(&out.model, &checkpoint_meta(&cfg), &ckpt)?;
    let csc_file = args.out.join("csc.csv");
    write_csc(&csc_file, &layout)?;
    let plot = args.out.join("loss.svg");
    write_chart(&plot, &history_chart(&out.history))?;
    outputs.extend([ckpt, csc_file, plot]);
    Manifest {
        command: "csc",
        config: Some(&cfg),
        seeds: vec![cfg.train.seed],
        extra: json!({ "layout": layout, "note": layout.note() }),
        outputs,
    }
    .write(&args.out)?;
    print_report(&out.report);
    println!(
        "W edges {} of {} dense ({:.2}% reduction, compression {})",
        layout.edges,
        layout.dense_params,
        100.0 * layout.reduction(),
        layout.compression
    );
    println!("{}", layout.note());
    Ok(())
}

fn find(dir: &Path, name: &str) -> Option<PathBuf> {
    let p = dir.join(name);
    p.is_file().then_some(p)
}

fn summary_table(md: &mut String, setting: &str, path: &Path) -> Result<()> {
    let summary = read_summary(path)?;
    md.push_str(&format!(
        "\n| {setting} | ACC | ARI | NMI | No. of Parameters |\n|---|---|---|---|---|\n"
    ));
    let mut settings: Vec<f64> = Vec::new();
    for s in &summary {
        if !settings.contains(&s.setting) {
            settings.push(s.setting);
        }
    }
    for v in settings {
        let cell = |m: &str| {
            summary
                .iter()
                .find(|s| s.setting == v && s.metric == m)
                .map_or("-".to_string(), |s| {
                    if m == "params" {
                        format!("{}", s.mean)
                    } else {
                        format!("{:.4} ± {:.4}", s.mean, s.std)
                    }
                })
        };
        md.push_str(&format!(
            "| {v} | {} | {} | {} | {} |\n",
            cell("acc"),
            cell("ari"),
            cell("nmi"),
            cell("params")
        ));
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let mut md = String::from("# vmsc report\n");
    let mut runs = Vec::new();
    for dir in &args.dirs {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "output directory not found"),
            ));
        }
        if let Some(p) = find(dir, "metrics.csv") {
            let (_, rows) = read_csv(&p)?;
            for r in rows {
                runs.push((dir.display().to_string(), r));
            }
        }
    }
    if !runs.is_empty() {
        md.push_str("\n| Run | ACC | ARI | NMI | No. of Parameters |\n|---|---|---|---|---|\n");
        for (name, r) in &runs {
            let cell = |i: usize| {
                let v = r.get(i).map(String::as_str).unwrap_or("");
                match v.parse::<f64>() {
                    Ok(x) if i < 3 => format!("{x:.4}"),
                    _ if v.is_empty() => "-".into(),
                    _ => v.to_string(),
                }
            };
            md.push_str(&format!("| {name} | {} | {} | {} | {} |\n", cell(0), cell(1), cell(2), cell(3)));
        }
    }
    for dir in &args.dirs {
        let name = dir.display();
        if let Some(p) = find(dir, "prune_summary.csv") {
            md.push_str(&format!("\n## Pruning sweep: {name}\n"));
            summary_table(&mut md, "Ratio", &p)?;
            let chart = sweep_chart("Pruned coefficient layer", "pruning ratio", &read_summary(&p)?);
            write_chart(&dir.join("prune_sweep.svg"), &chart)?;
        }
        if let Some(p) = find(dir, "fraction_summary.csv") {
            md.push_str(&format!("\n## Training fraction sweep: {name}\n"));
            summary_table(&mut md, "Fraction", &p)?;
            let chart = sweep_chart("Training on a fraction of the data", "fraction", &read_summary(&p)?);
            write_chart(&dir.join("fraction_sweep.svg"), &chart)?;
        }
        if let Some(p) = find(dir, "csc.csv") {
            let (header, rows) = read_csv(&p)?;
            md.push_str(&format!("\n## CSC layout: {name}\n\n| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len())));
            for r in rows {
                md.push_str(&format!("| {} |\n", r.join(" | ")));
            }
        }
        if let Some(p) = find(dir, "loss.csv") {
            let (_, rows) = read_csv(&p)?;
            let col = |i: usize| -> Result<Vec<f64>> {
                rows.iter()
                    .map(|r| {
                        r.get(i)
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| Error::Format(format!("{}: bad row", p.display())))
                    })
                    .collect()
            };
            let epochs = col(0)?;
            let chart = loss_chart(
                &epochs,
                &[("total", col(1)?), ("reg", col(2)?), ("recon", col(3)?), ("selfexpr", col(4)?)],
            );
            write_chart(&dir.join("loss.svg"), &chart)?;
            if let Some(last) = rows.last() {
                md.push_str(&format!(
                    "\nFinal loss ({name}, epoch {}): total {}\n",
                    last[0], last[1]
                ));
            }
        }
    }
    print!("{md}");
    if let Some(out) = &args.out {
        write_text(out, &md)?;
    }
    Ok(())
}
