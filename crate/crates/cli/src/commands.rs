use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use trajconv::config::RunConfig;
use trajconv::data::{holdout_split, Sample};
use trajconv::eval::{
    evaluate_fold, histogram_csv, latency_benchmark, per_sample_csv, report_csv, timing_csv, worst_cases_csv, BenchOptions,
    EvalOptions, EvalReport, Histogram,
};
use trajconv::models::{build_model, Family, ModelSpec};
use trajconv::train::{loss_log_csv, read_checkpoint, train_run, write_checkpoint, Checkpoint, TrainConfig, Trainer};
use trajconv::{Error, Result};

use crate::manifest::{fingerprint, run_dir, write_text, RunManifest};
use crate::ConfigArgs;

fn quoted(s: &str) -> String {
    format!("{s:?}")
}

impl ConfigArgs {
    /// Flags as dotted-key overrides, applied after `--set` entries.
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut o = Vec::new();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut push = |k: &str, v: String| o.push((k.to_string(), v));
        if let Some(v) = &self.preset {
            push("train.preset", quoted(v));
        }
        if let Some(v) = &self.model {
            push("model.family", quoted(v));
        }
        if let Some(v) = self.ks {
            push("model.kernel_size", v.to_string());
        }
        for (on, key) in [(self.pe, "model.positional_embedding"), (self.rc, "model.residual"), (self.tc, "model.transpose_conv")] {
            if on {
                push(key, "true".into());
            }
        }
        if let Some(v) = &self.norm {
            push("prep.norm_mode", quoted(v));
        }
        if let Some(list) = &self.augment {
            let items: Vec<String> = list.iter().filter(|s| !s.is_empty() && s.as_str() != "none").map(|s| quoted(s)).collect();
            push("prep.augment", format!("[{}]", items.join(", ")));
        }
        if let Some(v) = self.noise_sigma {
            push("prep.noise_sigma", format!("{v:?}"));
        }
        if let Some(v) = &self.social {
            push("social.kind", quoted(v));
        }
        if let Some(v) = self.epochs {
            push("train.epochs", v.to_string());
        }
        if let Some(v) = self.lr {
            push("train.base_lr", format!("{v:?}"));
        }
        if let Some(v) = self.gamma {
            push("train.gamma", format!("{v:?}"));
        }
        if let Some(v) = self.step {
            push("train.step", v.to_string());
        }
        if let Some(v) = self.batch_size {
            push("train.batch_size", v.to_string());
        }
        if let Some(v) = self.seed {
            push("train.seed", v.to_string());
        }
        Ok(o)
    }

    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides()?)?.materialized()
    }
}

fn start(command: &str, cfg: Option<&RunConfig>, out: Option<&Path>) -> Result<(PathBuf, RunManifest)> {
    let text = cfg.map(RunConfig::to_toml).unwrap_or_default();
    let dir = run_dir(out, command, &text)?;
    let mut m = RunManifest::new(command);
    if let Some(c) = cfg {
        m.config = Some(text);
        m.seed = Some(c.train.seed);
    }
    Ok((dir, m))
}

/// Load the scenes' samples, recording file fingerprints in the manifest.
fn load_scenes(cfg: &RunConfig, ids: &[String], m: &mut RunManifest) -> Result<BTreeMap<String, Vec<Sample>>> {
    let mut out = BTreeMap::new();
    for id in ids {
        let path = cfg.scene_path(id)?;
        m.datasets.insert(id.clone(), fingerprint(&path)?);
        out.insert(id.clone(), cfg.scene_samples(id)?);
    }
    Ok(out)
}

fn labeled_scenes(cfg: &RunConfig) -> Vec<String> {
    cfg.data.scenes.iter().filter(|(_, s)| s.labeled).map(|(k, _)| k.clone()).collect()
}

fn concat(scenes: &BTreeMap<String, Vec<Sample>>, ids: &[String]) -> Vec<Sample> {
    ids.iter().flat_map(|id| scenes[id].iter().cloned()).collect()
}

fn run<T>(dir: &Path, m: &mut RunManifest, body: impl FnOnce(&mut RunManifest) -> Result<T>) -> Result<PathBuf> {
    m.write(dir)?;
    match body(m) {
        Ok(_) => {
            m.finish(dir, "ok")?;
            Ok(dir.to_path_buf())
        }
        Err(e) => {
            let _ = m.finish(dir, &format!("failed: {e}"));
            Err(e)
        }
    }
}

pub fn ingest(args: &ConfigArgs, out: Option<&Path>) -> Result<PathBuf> {
    let cfg = args.load()?;
    let (dir, mut m) = start("ingest", Some(&cfg), out)?;
    run(&dir, &mut m, |m| {
        let cache = dir.join("samples");
        std::fs::create_dir_all(&cache).map_err(|e| Error::io(&cache, e))?;
        let mut summary = String::from("scene,records,pedestrians,frame_step,windows,labeled\n");
        for id in cfg.scene_ids() {
            let path = cfg.scene_path(&id)?;
            m.datasets.insert(id.clone(), fingerprint(&path)?);
            let table = cfg.load_scene(&id)?;
            let samples = cfg.scene_samples(&id)?;
            summary.push_str(&format!(
                "{id},{},{},{},{},{}\n",
                table.records.len(),
                table.pedestrian_count(),
                table.effective_frame_step(),
                samples.len(),
                table.labeled
            ));
            let json = serde_json::to_string(&samples).expect("samples serialize");
            write_text(&cache, &format!("{id}.json"), &json)?;
        }
        write_text(&dir, "scenes.csv", &summary)?;
        print!("{summary}");
        Ok(())
    })
}

fn write_eval(dir: &Path, tag: &str, r: &EvalReport) -> Result<()> {
    write_text(dir, &format!("per_sample-{tag}.csv"), &per_sample_csv(r))?;
    write_text(dir, &format!("worst-{tag}.csv"), &worst_cases_csv(r))?;
    write_text(dir, &format!("histogram-{tag}.csv"), &histogram_csv(&r.histogram))?;
    Ok(())
}

fn distribution_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("scene,n,ade_mean,ade_std,ade_max\n");
    for r in reports {
        s.push_str(&format!("{},{},{},{},{}\n", r.scene, r.n, r.ade_mean, r.ade_std, r.ade_max));
    }
    s
}

pub fn train(args: &ConfigArgs, out: Option<&Path>, scenes: &[String], holdout: bool, resume: Option<&Path>) -> Result<PathBuf> {
    let cfg = args.load()?;
    let tc = cfg.train_config()?;
    let ids = if scenes.is_empty() { labeled_scenes(&cfg) } else { scenes.to_vec() };
    if ids.is_empty() {
        return Err(Error::Config("no scenes to train on (configure [data.scenes])".into()));
    }
    let (dir, mut m) = start("train", Some(&cfg), out)?;
    run(&dir, &mut m, |m| {
        let data = load_scenes(&cfg, &ids, m)?;
        let all = concat(&data, &ids);
        let (train_set, held) = if holdout { holdout_split(&all, cfg.data.holdout_fraction, tc.seed) } else { (all, Vec::new()) };
        let mut trainer = match resume {
            Some(p) => {
                m.inputs.push(fingerprint(p)?);
                Trainer::resume(&tc, &train_set, &read_checkpoint(p)?)?
            }
            None => Trainer::new(&tc, &train_set)?,
        };
        let log = trainer.run()?;
        let ck = trainer.checkpoint();
        write_checkpoint(&ck, &dir.join("checkpoint.ckpt"))?;
        write_text(&dir, "loss.csv", &loss_log_csv(&log))?;
        if holdout {
            let r = evaluate_fold(&ck, &held, tc.norm_mode, &EvalOptions::default())?;
            write_text(&dir, "holdout.csv", &report_csv(std::slice::from_ref(&r)))?;
            write_eval(&dir, "holdout", &r)?;
        }
        Ok(())
    })
}

struct FoldResult {
    seed: u64,
    scene: String,
    checkpoint: Checkpoint,
    log: String,
    report: EvalReport,
}

/// Six-column table: one `ADE / FDE` cell per scene plus the unweighted
/// scene average, each cell a mean over seeds.
fn xval_table(scenes: &[String], results: &[FoldResult]) -> String {
    let mut head: Vec<String> = scenes.to_vec();
    head.push("average".into());
    let mut cells = Vec::new();
    let (mut sa, mut sf) = (0.0, 0.0);
    for s in scenes {
        let rs: Vec<&FoldResult> = results.iter().filter(|r| &r.scene == s).collect();
        let k = rs.len() as f64;
        let a = rs.iter().map(|r| r.report.ade).sum::<f64>() / k;
        let f = rs.iter().map(|r| r.report.fde).sum::<f64>() / k;
        sa += a;
        sf += f;
        cells.push(format!("{a:.3} / {f:.3}"));
    }
    let n = scenes.len() as f64;
    cells.push(format!("{:.3} / {:.3}", sa / n, sf / n));
    format!("{}\n{}\n", head.join(","), cells.join(","))
}

pub fn xval(args: &ConfigArgs, out: Option<&Path>, seeds: &[u64], jobs: usize) -> Result<PathBuf> {
    let cfg = args.load()?;
    let base = cfg.train_config()?;
    let scenes = labeled_scenes(&cfg);
    let plan = trajconv::data::leave_one_out_folds(&scenes)?;
    let seeds: Vec<u64> = if seeds.is_empty() { vec![base.seed] } else { seeds.to_vec() };
    let (dir, mut m) = start("xval", Some(&cfg), out)?;
    run(&dir, &mut m, |m| {
        let data = load_scenes(&cfg, &scenes, m)?;
        let tasks: Vec<(u64, &trajconv::data::Fold)> = seeds.iter().flat_map(|&s| plan.folds.iter().map(move |f| (s, f))).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start workers: {e}")))?;
        let results: Vec<Result<FoldResult>> = pool.install(|| {
            tasks
                .par_iter()
                .map(|&(seed, fold)| {
                    let tc = TrainConfig { seed, ..base.clone() };
                    let (checkpoint, log) = train_run(&tc, &concat(&data, &fold.train))?;
                    let report = evaluate_fold(&checkpoint, &data[&fold.test], tc.norm_mode, &EvalOptions::default())?;
                    eprintln!("fold {} seed {seed}: ADE {:.3} FDE {:.3}", fold.test, report.ade, report.fde);
                    Ok(FoldResult { seed, scene: fold.test.clone(), checkpoint, log: loss_log_csv(&log), report })
                })
                .collect()
        });
        let results: Vec<FoldResult> = results.into_iter().collect::<Result<_>>()?;
        let mut folds = String::from("seed,scene,n,ade,fde\n");
        for r in &results {
            let tag = format!("{}-seed{}", r.scene, r.seed);
            write_checkpoint(&r.checkpoint, &dir.join(format!("fold-{tag}.ckpt")))?;
            write_text(&dir, &format!("loss-{tag}.csv"), &r.log)?;
            write_eval(&dir, &tag, &r.report)?;
            folds.push_str(&format!("{},{},{},{},{}\n", r.seed, r.scene, r.report.n, r.report.ade, r.report.fde));
        }
        write_text(&dir, "folds.csv", &folds)?;
        let table = xval_table(&scenes, &results);
        write_text(&dir, "xval.csv", &table)?;
        print!("{table}");
        Ok(())
    })
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    args: &ConfigArgs,
    out: Option<&Path>,
    checkpoint: &Path,
    scenes: &[String],
    holdout: bool,
    worst_k: usize,
    bin_width: f64,
) -> Result<PathBuf> {
    let cfg = args.load()?;
    let ck = read_checkpoint(checkpoint)?;
    let trained: Option<TrainConfig> = serde_json::from_str(&ck.config_json).ok();
    let mode = trained.as_ref().map(|t| t.norm_mode).unwrap_or(cfg.prep.norm_mode);
    let split_seed = trained.as_ref().map(|t| t.seed).unwrap_or(cfg.train.seed);
    let ids = if scenes.is_empty() { cfg.scene_ids() } else { scenes.to_vec() };
    if ids.is_empty() {
        return Err(Error::Config("no scenes to evaluate (configure [data.scenes])".into()));
    }
    let (dir, mut m) = start("eval", Some(&cfg), out)?;
    run(&dir, &mut m, |m| {
        m.inputs.push(fingerprint(checkpoint)?);
        let data = load_scenes(&cfg, &ids, m)?;
        let opts = EvalOptions { worst_k, bin_width, ..EvalOptions::default() };
        let mut reports = Vec::new();
        for id in &ids {
            let samples = if holdout { holdout_split(&data[id], cfg.data.holdout_fraction, split_seed).1 } else { data[id].clone() };
            let r = evaluate_fold(&ck, &samples, mode, &opts)?;
            write_eval(&dir, id, &r)?;
            reports.push(r);
        }
        let table = report_csv(&reports);
        write_text(&dir, "report.csv", &table)?;
        write_text(&dir, "distribution.csv", &distribution_csv(&reports))?;
        print!("{table}");
        Ok(())
    })
}

fn parse_model_name(name: &str) -> Result<ModelSpec> {
    let (fam, ks) = match name.split_once("-ks") {
        Some((f, k)) => (f, Some(k.parse::<usize>().map_err(|_| Error::Config(format!("bad kernel size in `{name}`")))?)),
        None => (name, None),
    };
    let family: Family = fam.parse()?;
    let mut spec = ModelSpec::new(family);
    if let Some(k) = ks {
        spec.kernel_size = k;
    }
    Ok(spec)
}

pub fn bench(
    args: &ConfigArgs,
    out: Option<&Path>,
    models: &[String],
    checkpoints: &[PathBuf],
    batch: &[usize],
    repeats: usize,
    warmup: usize,
) -> Result<PathBuf> {
    let cfg = args.load()?;
    if batch.contains(&0) {
        return Err(Error::Config("batch sizes must be positive".into()));
    }
    let (dir, mut m) = start("bench", Some(&cfg), out)?;
    run(&dir, &mut m, |m| {
        let mut built = Vec::new();
        if checkpoints.is_empty() {
            for name in models {
                let spec = parse_model_name(name)?;
                let (params, model) = build_model::<f32>(&spec, cfg.train.seed)?;
                built.push((name.clone(), model, params));
            }
        } else {
            for p in checkpoints {
                m.inputs.push(fingerprint(p)?);
                let ck = read_checkpoint(p)?;
                let (_, model) = build_model::<f32>(&ck.spec, 0)?;
                built.push((ck.spec.label(), model, ck.params));
            }
        }
        let refs: Vec<_> = built.iter().map(|(l, m, p)| (l.clone(), m, p)).collect();
        let opts = BenchOptions { warmup, repeats, seed: cfg.train.seed };
        let rep = latency_benchmark(&refs, batch, &opts)?;
        let table = timing_csv(&rep);
        write_text(&dir, "timing.csv", &table)?;
        print!("{table}");
        Ok(())
    })
}

enum Input {
    Folds(Vec<(String, f64, f64)>),
    Samples(Vec<f64>),
}

fn read_input(path: &Path) -> Result<Input> {
    let bad = |reason: String| Error::Parse { line: 1, reason: format!("{}: {reason}", path.display()) };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ade, fde) = (col("ade").ok_or_else(|| bad("no `ade` column".into()))?, col("fde"));
    let num = |rec: &csv::StringRecord, i: usize, line: usize| -> Result<f64> {
        rec.get(i)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Parse { line, reason: format!("{}: expected a number", path.display()) })
    };
    if let Some(scene) = col("scene") {
        let fde = fde.ok_or_else(|| bad("no `fde` column".into()))?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse { line: i + 2, reason: e.to_string() })?;
            let s = rec.get(scene).unwrap_or_default().to_string();
            if s == "average" || s == "pooled" {
                continue;
            }
            rows.push((s, num(&rec, ade, i + 2)?, num(&rec, fde, i + 2)?));
        }
        Ok(Input::Folds(rows))
    } else if col("id").is_some() {
        let mut v = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse { line: i + 2, reason: e.to_string() })?;
            v.push(num(&rec, ade, i + 2)?);
        }
        Ok(Input::Samples(v))
    } else {
        Err(bad("expected a fold table (scene,ade,fde) or per-sample errors (id,ade,fde)".into()))
    }
}

pub fn report(out: Option<&Path>, inputs: &[PathBuf], labels: &[String], bin_width: f64) -> Result<PathBuf> {
    if !labels.is_empty() && labels.len() != inputs.len() {
        return Err(Error::Config(format!("{} labels for {} inputs", labels.len(), inputs.len())));
    }
    if !(bin_width > 0.0) {
        return Err(Error::Config("bin width must be positive".into()));
    }
    let label_of = |i: usize, p: &Path| -> String {
        labels.get(i).cloned().unwrap_or_else(|| {
            let parent = p.parent().and_then(|d| d.file_name()).map(|s| s.to_string_lossy().into_owned());
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            match parent {
                Some(d) if !d.is_empty() => format!("{d}/{stem}"),
                _ => stem,
            }
        })
    };
    let (dir, mut m) = start("report", None, out)?;
    run(&dir, &mut m, |m| {
        let mut folds: Vec<(String, Vec<(String, f64, f64)>)> = Vec::new();
        let mut dists: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, p) in inputs.iter().enumerate() {
            m.inputs.push(fingerprint(p)?);
            match read_input(p)? {
                Input::Folds(rows) => folds.push((label_of(i, p), rows)),
                Input::Samples(v) => dists.push((label_of(i, p), v)),
            }
        }
        if !folds.is_empty() {
            let mut scenes: Vec<String> = Vec::new();
            for (_, rows) in &folds {
                for (s, _, _) in rows {
                    if !scenes.contains(s) {
                        scenes.push(s.clone());
                    }
                }
            }
            let mut table = format!("model,{},average\n", scenes.join(","));
            let mut numeric = String::from("model,scene,ade,fde\n");
            for (label, rows) in &folds {
                let mut cells = Vec::new();
                let (mut sa, mut sf, mut k) = (0.0, 0.0, 0usize);
                for s in &scenes {
                    let r: Vec<_> = rows.iter().filter(|(x, _, _)| x == s).collect();
                    if r.is_empty() {
                        cells.push(String::new());
                        continue;
                    }
                    let n = r.len() as f64;
                    let a = r.iter().map(|x| x.1).sum::<f64>() / n;
                    let f = r.iter().map(|x| x.2).sum::<f64>() / n;
                    sa += a;
                    sf += f;
                    k += 1;
                    cells.push(format!("{a:.3} / {f:.3}"));
                    numeric.push_str(&format!("{label},{s},{a},{f}\n"));
                }
                let (a, f) = (sa / k as f64, sf / k as f64);
                cells.push(format!("{a:.3} / {f:.3}"));
                numeric.push_str(&format!("{label},average,{a},{f}\n"));
                table.push_str(&format!("{label},{}\n", cells.join(",")));
            }
            write_text(&dir, "comparison.csv", &table)?;
            write_text(&dir, "comparison_numeric.csv", &numeric)?;
            print!("{table}");
        }
        if !dists.is_empty() {
            let mut s = String::from("model,n,ade_mean,ade_std,ade_max\n");
            for (i, (label, v)) in dists.iter().enumerate() {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                let max = v.iter().copied().fold(0.0, f64::max);
                s.push_str(&format!("{label},{},{mean},{std},{max}\n", v.len()));
                write_text(&dir, &format!("histogram-{i}.csv"), &histogram_csv(&Histogram::new(v, bin_width)))?;
            }
            write_text(&dir, "distribution.csv", &s)?;
            print!("{s}");
        }
        Ok(())
    })
}
