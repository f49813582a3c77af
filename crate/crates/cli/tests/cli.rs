use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "synth:clusters=2,subspace_dim=1,ambient=16,per_cluster=4,modalities=2,seed=1";

fn vmsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmsc"))
        .args(args)
        .env("VF_THREADS", "1")
        .output()
        .expect("spawn vmsc")
}

fn ok(args: &[&str]) -> String {
    let out = vmsc(args);
    assert!(
        out.status.success(),
        "vmsc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = vmsc(args);
    assert_eq!(out.status.code(), Some(code), "vmsc {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(p).unwrap()
}

fn header(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    format!("{}\n", text.lines().next().unwrap())
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn train(out: &Path, extra: &[&str]) {
    train_on(TINY, out, extra)
}

fn train_on(data: &str, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", data, "--epochs", "6", "--warmup", "2", "--log-every", "3", "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_train_cluster_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--spec", TINY, "--out", s(&data)]);
    assert_eq!(header(&data.join("labels.csv")), golden("labels.csv"));
    assert_eq!(std::fs::read_dir(data.join("modality0")).unwrap().count(), 8);

    let run = dir.path().join("run");
    train_on(s(&data), &run, &["--image-size", "4"]);
    for f in ["model.ckpt", "loss.csv", "loss.svg", "config.toml", "manifest.json", "checkpoints/epoch_00003.ckpt", "checkpoints/epoch_00006.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert_eq!(header(&run.join("loss.csv")), golden("loss.csv"));
    assert_eq!(rows(&run.join("loss.csv")).len(), 6);

    let cl = dir.path().join("cl");
    let stdout = ok(&["cluster", "--checkpoint", s(&run.join("model.ckpt")), "--k", "2", "--out", s(&cl)]);
    assert!(stdout.contains("ACC"));
    assert_eq!(header(&cl.join("metrics.csv")), golden("metrics.csv"));
    let labels = std::fs::read_to_string(cl.join("labels.txt")).unwrap();
    assert_eq!(labels.lines().count(), 8);
    assert!(labels.lines().all(|l| l.parse::<usize>().is_ok_and(|v| v < 2)));
    let m = &rows(&cl.join("metrics.csv"))[0];
    assert!(m[..3].iter().all(|v| v.parse::<f64>().is_ok()));

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cl.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "cluster");
}

#[test]
fn params_column_is_the_summed_parameter_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train(&run, &[]);
    let cl = dir.path().join("cl");
    ok(&["cluster", "--checkpoint", s(&run.join("model.ckpt")), "--out", s(&cl)]);
    // per modality: three 1x1 channels (1 + 1 each) and two 3x3 channels
    // (9 + 45 each), mirrored by the decoder; W has 8 * 7 active entries
    let bank = 3 * (1 + 1) + 2 * (9 + 45);
    let expected = 2 * 2 * bank + 8 * 7;
    assert_eq!(rows(&cl.join("metrics.csv"))[0][3], expected.to_string());
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    train(&a, &["--seed", "4"]);
    train(&b, &["--seed", "4"]);
    train(&c, &["--seed", "5"]);
    let read = |p: &Path| std::fs::read(p.join("model.ckpt")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(std::fs::read(a.join("loss.csv")).unwrap(), std::fs::read(b.join("loss.csv")).unwrap());
}

#[test]
fn mismatched_k_still_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train(&run, &[]);
    let cl = dir.path().join("cl");
    ok(&["cluster", "--checkpoint", s(&run.join("model.ckpt")), "--k", "3", "--out", s(&cl)]);
    let m = &rows(&cl.join("metrics.csv"))[0];
    assert!(m[..3].iter().all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)), "{m:?}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-dataset");
    let err = fails_with(&["train", "--data", s(&missing), "--epochs", "1", "--out", s(&dir.path().join("o"))], 2);
    assert!(err.contains("no-such-dataset"), "{err}");

    fails_with(&["train", "--bogus-flag"], 2);
    fails_with(&["train", "--data", TINY, "--lr", "-1", "--out", s(&dir.path().join("o"))], 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model\npreset = ").unwrap();
    fails_with(&["train", "--config", s(&bad), "--out", s(&dir.path().join("o"))], 3);

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, "not a checkpoint").unwrap();
    fails_with(&["cluster", "--checkpoint", s(&garbage), "--out", s(&dir.path().join("o"))], 3);

    let err = fails_with(
        &["csc", "--data", "synth:per_cluster=40,ambient=16", "--fan", "3", "--depth", "2", "--no-pad", "--epochs", "1", "--out", s(&dir.path().join("o"))],
        2,
    );
    assert!(err.contains("F^L"), "{err}");

    let err = fails_with(
        &["fraction-sweep", "--data", TINY, "--fractions", "0.05", "--trials", "1", "--epochs", "1", "--out", s(&dir.path().join("o"))],
        2,
    );
    assert!(err.contains("0.05"), "{err}");
}

#[test]
fn prune_sweep_shape_and_ratio_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&["prune-sweep", "--data", TINY, "--epochs", "6", "--warmup", "2", "--ratios", "0,0.5", "--seeds", "3,4", "--out", s(&out)]);
    assert_eq!(header(&out.join("prune_sweep.csv")), golden("prune_sweep.csv"));
    assert_eq!(header(&out.join("prune_summary.csv")), golden("prune_summary.csv"));
    let trials = rows(&out.join("prune_sweep.csv"));
    assert_eq!(trials.len(), 2 * 2);
    assert_eq!(rows(&out.join("prune_summary.csv")).len(), 2 * 4);
    assert!(out.join("prune_sweep.svg").is_file());

    // the ratio-0 trial with seed 3 matches a plain run with seed 3
    let run = dir.path().join("run");
    train(&run, &["--seed", "3"]);
    let cl = dir.path().join("cl");
    ok(&["cluster", "--checkpoint", s(&run.join("model.ckpt")), "--out", s(&cl)]);
    let plain = &rows(&cl.join("metrics.csv"))[0];
    let zero = trials.iter().find(|r| r[0].parse::<f64>().unwrap() == 0.0 && r[2] == "3").unwrap();
    assert_eq!(&zero[3..], &plain[..]);
    let unpruned_loss = std::fs::read(run.join("loss.csv")).unwrap();
    let trial_loss = std::fs::read(out.join("trials/ratio_0_seed_3/loss.csv")).unwrap();
    assert_eq!(trial_loss, unpruned_loss);
}

#[test]
fn fraction_sweep_params_grow_with_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("frac");
    let data = "synth:clusters=2,subspace_dim=1,ambient=16,per_cluster=10,modalities=2,seed=1";
    ok(&["fraction-sweep", "--data", data, "--epochs", "3", "--warmup", "1", "--fractions", "0.25,0.5,0.75", "--trials", "1", "--out", s(&out)]);
    assert_eq!(header(&out.join("fraction_sweep.csv")), golden("fraction_sweep.csv"));
    assert_eq!(header(&out.join("fraction_summary.csv")), golden("fraction_summary.csv"));
    let r = rows(&out.join("fraction_sweep.csv"));
    let params: Vec<usize> = r.iter().map(|row| row[7].parse().unwrap()).collect();
    assert_eq!(params.len(), 3);
    assert!(params.windows(2).all(|w| w[0] < w[1]), "{params:?}");
    let ns: Vec<usize> = r.iter().map(|row| row[3].parse().unwrap()).collect();
    assert_eq!(ns, vec![6, 10, 16]);
}

#[test]
fn csc_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("csc");
    let data = "synth:clusters=4,subspace_dim=1,ambient=16,per_cluster=64,modalities=1";
    let stdout = ok(&["csc", "--data", data, "--fan", "16", "--depth", "2", "--epochs", "1", "--warmup", "0", "--out", s(&out)]);
    assert_eq!(header(&out.join("csc.csv")), golden("csc.csv"));
    let r = &rows(&out.join("csc.csv"))[0];
    assert_eq!(r[..6], ["256", "256", "16", "2", "8192", "65536"].map(String::from));
    assert_eq!(r[6].parse::<f64>().unwrap(), 0.125);
    assert!(stdout.contains("8192"));
    assert!(out.join("model.ckpt").is_file() && out.join("metrics.csv").is_file());

    let out = dir.path().join("dense-cyclic");
    ok(&["csc", "--data", TINY, "--fan", "8", "--depth", "1", "--epochs", "1", "--warmup", "0", "--out", s(&out)]);
    assert_eq!(rows(&out.join("csc.csv"))[0][6].parse::<f64>().unwrap(), 1.0);

    let out = dir.path().join("padded");
    let data = "synth:clusters=5,subspace_dim=1,ambient=16,per_cluster=40,modalities=1";
    let stdout = ok(&["csc", "--data", data, "--fan", "3", "--depth", "2", "--epochs", "1", "--warmup", "0", "--out", s(&out)]);
    let r = &rows(&out.join("csc.csv"))[0];
    assert_eq!((r[0].as_str(), r[1].as_str(), r[3].as_str()), ("200", "243", "5"));
    assert!(stdout.contains("243"), "{stdout}");
}

#[test]
fn report_collects_tables() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train(&run, &[]);
    let cl = dir.path().join("cl");
    ok(&["cluster", "--checkpoint", s(&run.join("model.ckpt")), "--out", s(&cl)]);
    let md = dir.path().join("report.md");
    let stdout = ok(&["report", s(&cl), s(&run), "--out", s(&md)]);
    assert!(stdout.contains("| ACC | ARI | NMI | No. of Parameters |"), "{stdout}");
    assert_eq!(std::fs::read_to_string(&md).unwrap().trim(), stdout.trim());
}

#[test]
fn config_file_and_overrides_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, format!("[data]\nsource = \"{TINY}\"\n\n[train]\nepochs = 4\nwarmup_epochs = 1\n")).unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--set", "model.gamma=2.5", "--out", s(&run)]);
    let saved = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(saved.contains("gamma = 2.5"), "{saved}");
    assert_eq!(rows(&run.join("loss.csv")).len(), 4);

    // replaying the saved config reproduces the checkpoint
    let replay = dir.path().join("replay");
    ok(&["train", "--config", s(&run.join("config.toml")), "--out", s(&replay)]);
    assert_eq!(std::fs::read(run.join("model.ckpt")).unwrap(), std::fs::read(replay.join("model.ckpt")).unwrap());
}
