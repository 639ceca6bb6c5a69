use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajconv::data::synthetic_table;
use trajconv::models::{build_model, ModelSpec};
use trajconv::train::read_checkpoint;

const SCENES: [&str; 5] = ["eth", "hotel", "univ", "zara1", "zara2"];

fn trajconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajconv")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Five small synthetic scenes plus one unlabeled scene and a config
/// pointing at them.
fn workspace(dir: &Path) -> PathBuf {
    let mut cfg = String::from(
        "[data]\nstride = 4\n\n[model]\nfamily = \"conv1d\"\n\n[train]\nepochs = 1\nbatch_size = 16\nseed = 3\n\n",
    );
    for (i, s) in SCENES.iter().enumerate() {
        std::fs::write(dir.join(format!("{s}.txt")), synthetic_table(s, i as u64, 6, 50).to_text()).unwrap();
        cfg.push_str(&format!("[data.scenes.{s}]\npath = \"{s}.txt\"\n\n"));
    }
    std::fs::write(dir.join("test.txt"), synthetic_table("test", 99, 4, 40).to_text()).unwrap();
    cfg.push_str("[data.scenes.hidden]\npath = \"test.txt\"\nlabeled = false\n");
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = trajconv(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    let out = tmp.path().join("o");
    let o = trajconv(&["train", "--config", cfg.to_str().unwrap(), "--set", "model.colour=\"red\"", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_scene_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[data.scenes.ghost]\npath = \"nowhere/ghost.txt\"\n").unwrap();
    let out = tmp.path().join("o");
    let o = trajconv(&["ingest", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("ghost.txt"), "{}", stderr(&o));
}

#[test]
fn ingest_summarises_every_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    let out = tmp.path().join("o");
    let o = trajconv(&["ingest", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read(&out.join("scenes.csv"));
    assert_eq!(summary.lines().count(), 7);
    assert!(out.join("samples/eth.json").exists());
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["datasets"].as_object().unwrap().len(), 6);
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    let out = tmp.path().join("o");
    let o = trajconv(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "0", "--model", "lstm", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = read_checkpoint(&out.join("checkpoint.ckpt")).unwrap();
    let (init, _) = build_model::<f32>(&ModelSpec::new("lstm".parse().unwrap()), 3).unwrap();
    assert_eq!(ck.params, init);
    assert_eq!(ck.epoch, 0);
}

#[test]
fn training_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = trajconv(&["train", "--config", cfg.to_str().unwrap(), "--scenes", "eth,hotel", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        (std::fs::read(out.join("checkpoint.ckpt")).unwrap(), read(&out.join("loss.csv")))
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn holdout_training_evaluates_unseen_pedestrians() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    let out = tmp.path().join("o");
    let o = trajconv(&[
        "train", "--config", cfg.to_str().unwrap(), "--holdout", "--set", "data.holdout_fraction=0.3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read(&out.join("holdout.csv"));
    assert!(rows.lines().next().unwrap().contains("ade"));
    assert!(out.join("per_sample-holdout.csv").exists());
}

#[test]
fn unlabeled_scenes_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    let c = cfg.to_str().unwrap();
    let train_out = tmp.path().join("t");
    let o = trajconv(&["train", "--config", c, "--epochs", "0", "--out", train_out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = train_out.join("checkpoint.ckpt");

    let o = trajconv(&["train", "--config", c, "--scenes", "hidden", "--out", tmp.path().join("u").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let eval_out = tmp.path().join("e");
    let args = ["eval", "--config", c, "--checkpoint", ck.to_str().unwrap(), "--scenes", "hidden", "--out", eval_out.to_str().unwrap()];
    let o = trajconv(&args);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("hidden"), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    let bad = tmp.path().join("bad.ckpt");
    std::fs::write(&bad, b"TJCK\x01\x00\x00\x00garbage").unwrap();
    let out = tmp.path().join("o");
    let o = trajconv(&["eval", "--config", cfg.to_str().unwrap(), "--checkpoint", bad.to_str().unwrap(), "--scenes", "eth", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn eval_writes_report_and_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    let c = cfg.to_str().unwrap();
    let t = tmp.path().join("t");
    assert!(trajconv(&["train", "--config", c, "--scenes", "eth,hotel", "--out", t.to_str().unwrap()]).status.success());
    let e = tmp.path().join("e");
    let ck = t.join("checkpoint.ckpt");
    let o = trajconv(&["eval", "--config", c, "--checkpoint", ck.to_str().unwrap(), "--scenes", "univ,zara1", "--out", e.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read(&e.join("report.csv"));
    let scenes: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(scenes, ["univ", "zara1", "average", "pooled"]);
    for s in ["univ", "zara1"] {
        for kind in ["per_sample", "worst", "histogram"] {
            assert!(e.join(format!("{kind}-{s}.csv")).exists(), "{kind}-{s}");
        }
    }
}

#[test]
fn bench_reports_one_row_per_model_and_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = trajconv(&["bench", "--models", "conv1d,lstm,encdec-ks3", "--batch", "1,4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let timing = read(&out.join("timing.csv"));
    assert_eq!(timing.lines().count(), 7, "{timing}");
}

#[test]
fn bench_rejects_too_few_repeats() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = trajconv(&["bench", "--models", "lstm", "--repeats", "3", "--out", out.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
}

fn cells(line: &str) -> Vec<(f64, f64)> {
    line.split(',')
        .filter(|c| c.contains(" / "))
        .map(|c| {
            let (a, f) = c.split_once(" / ").unwrap();
            (a.trim().parse().unwrap(), f.trim().parse().unwrap())
        })
        .collect()
}

#[test]
fn xval_table_and_report_agree_with_fold_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    let out = tmp.path().join("x");
    let o = trajconv(&["xval", "--config", cfg.to_str().unwrap(), "--seeds", "1,2", "--jobs", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let folds = read(&out.join("folds.csv"));
    let rows: Vec<(String, f64, f64)> = folds
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 10);

    let means: Vec<(f64, f64)> = SCENES
        .iter()
        .map(|s| {
            let r: Vec<_> = rows.iter().filter(|x| x.0 == *s).collect();
            (r.iter().map(|x| x.1).sum::<f64>() / 2.0, r.iter().map(|x| x.2).sum::<f64>() / 2.0)
        })
        .collect();
    let avg = (means.iter().map(|m| m.0).sum::<f64>() / 5.0, means.iter().map(|m| m.1).sum::<f64>() / 5.0);
    let mut expected = means.clone();
    expected.push(avg);

    let table = read(&out.join("xval.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "eth,hotel,univ,zara1,zara2,average");
    let got = cells(lines[1]);
    assert_eq!(got.len(), 6);
    for (g, e) in got.iter().zip(&expected) {
        assert!((g.0 - e.0).abs() <= 5e-4 && (g.1 - e.1).abs() <= 5e-4, "{g:?} vs {e:?}");
    }

    let rep = tmp.path().join("r");
    let per_sample = out.join("per_sample-eth-seed1.csv");
    let o = trajconv(&[
        "report",
        out.join("folds.csv").to_str().unwrap(),
        per_sample.to_str().unwrap(),
        "--labels",
        "conv1d,eth-errors",
        "--out",
        rep.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let numeric = read(&rep.join("comparison_numeric.csv"));
    let avg_row = numeric.lines().find(|l| l.starts_with("conv1d,average,")).unwrap();
    let f: Vec<f64> = avg_row.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert!((f[0] - avg.0).abs() < 1e-9 && (f[1] - avg.1).abs() < 1e-9);
    assert!(read(&rep.join("distribution.csv")).contains("eth-errors"));

    let again = tmp.path().join("x2");
    let o = trajconv(&["xval", "--config", cfg.to_str().unwrap(), "--seeds", "1,2", "--jobs", "1", "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&again.join("folds.csv")), folds, "parallel and serial folds differ");
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["eth_ucy.toml", "trajnet.toml"] {
        let cfg = trajconv::config::RunConfig::load(Some(&root.join(name)), &[]).unwrap();
        cfg.train_config().unwrap();
        assert!(cfg.data.scenes.len() >= 3, "{name}");
    }
}
