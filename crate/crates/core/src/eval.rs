//! Displacement metrics, fold reports, gradient-flow diagnostics and
//! inference timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Point, Sample, OBS_LEN, PRED_LEN};
use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelInput, ModelSpec, ParamStore};
use crate::ndmath::NdArray;
use crate::prep::{denormalize, normalize, NormMode, Normalized};
use crate::scalar::Scalar;
use crate::train::{loss_and_grads, make_batch, Batch, Checkpoint};

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_shapes(pred: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::dim(format!("{} predictions vs {} ground truths", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::dim("no trajectories to score"));
    }
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.len() != t.len() || p.is_empty() {
            return Err(Error::dim(format!("trajectory {i}: {} predicted vs {} true points", p.len(), t.len())));
        }
    }
    Ok(())
}

/// Mean displacement over the points of one trajectory.
pub fn sample_ade(pred: &[Point], truth: &[Point]) -> f64 {
    pred.iter().zip(truth).map(|(&p, &t)| dist(p, t)).sum::<f64>() / pred.len() as f64
}

/// Displacement at the final point of one trajectory.
pub fn sample_fde(pred: &[Point], truth: &[Point]) -> f64 {
    dist(*pred.last().unwrap(), *truth.last().unwrap())
}

/// Average displacement error over all trajectories and steps.
pub fn ade(pred: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<f64> {
    check_shapes(pred, truth)?;
    let n: usize = pred.iter().map(Vec::len).sum();
    let total: f64 = pred.iter().zip(truth).flat_map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| dist(a, b))).sum();
    Ok(total / n as f64)
}

/// Final displacement error averaged over trajectories.
pub fn fde(pred: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<f64> {
    check_shapes(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| sample_fde(p, t)).sum::<f64>() / pred.len() as f64)
}

/// Predictions in the normalized frame for a batch of normalized samples.
pub trait Predictor {
    fn predict(&self, items: &[&Normalized]) -> Result<Vec<Vec<Point>>>;
}

/// A trained model in eval mode.
pub struct ModelPredictor<T> {
    pub model: Model,
    pub params: ParamStore<T>,
}

impl ModelPredictor<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (_, model) = build_model::<f32>(&ck.spec, 0)?;
        Ok(ModelPredictor { model, params: ck.params.clone() })
    }
}

impl<T: Scalar> Predictor for ModelPredictor<T> {
    fn predict(&self, items: &[&Normalized]) -> Result<Vec<Vec<Point>>> {
        let batch: Batch<T> = make_batch(items, &self.model.spec.social)?;
        let out = self.model.predict(&self.params, &batch.input)?;
        Ok(out
            .data()
            .chunks(PRED_LEN * 2)
            .map(|c| c.chunks(2).map(|p| [p[0].to_f64_lossy(), p[1].to_f64_lossy()]).collect())
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub bin_width: f64,
    pub worst_k: usize,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { bin_width: 0.1, worst_k: 10, batch_size: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub id: String,
    pub ade: f64,
    pub fde: f64,
}

/// A worst-case sample with its trajectories in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub id: String,
    pub ade: f64,
    pub obs: Vec<Point>,
    pub truth: Vec<Point>,
    pub pred: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts[i]` covers `[i·w, (i+1)·w)`.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bin_width: f64) -> Self {
        let mut counts = Vec::new();
        for &v in values {
            let i = (v / bin_width).floor().max(0.0) as usize;
            if counts.len() <= i {
                counts.resize(i + 1, 0);
            }
            counts[i] += 1;
        }
        Histogram { bin_width, counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene: String,
    pub n: usize,
    pub ade: f64,
    pub fde: f64,
    pub histogram: Histogram,
    pub ade_mean: f64,
    /// Population standard deviation of per-sample ADE.
    pub ade_std: f64,
    pub ade_max: f64,
    pub worst: Vec<WorstCase>,
    pub per_sample: Vec<SampleError>,
}

/// Score `predictor` on labeled samples; predictions are mapped back to world
/// coordinates before scoring.
pub fn evaluate_with(
    predictor: &dyn Predictor,
    samples: &[Sample],
    mode: NormMode,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if let Some(s) = samples.iter().find(|s| !s.labeled || s.future.len() != PRED_LEN) {
        return Err(Error::Unlabeled(format!(
            "sample {} has no ground-truth future; unlabeled test splits cannot be scored locally",
            s.id()
        )));
    }
    if samples.is_empty() {
        return Err(Error::InvalidBatch("no samples to evaluate".into()));
    }
    let normalized: Vec<_> = samples.iter().map(|s| normalize(s, mode)).collect();
    let mut preds: Vec<Vec<Point>> = Vec::with_capacity(samples.len());
    for chunk in normalized.chunks(opts.batch_size.max(1)) {
        let items: Vec<&Normalized> = chunk.iter().map(|(n, _)| n).collect();
        let out = predictor.predict(&items)?;
        for ((_, ctx), p) in chunk.iter().zip(out) {
            preds.push(denormalize(&p, ctx));
        }
    }
    let truth: Vec<Vec<Point>> = samples.iter().map(|s| s.future.clone()).collect();
    let per_sample: Vec<SampleError> = samples
        .iter()
        .zip(&preds)
        .zip(&truth)
        .map(|((s, p), t)| SampleError { id: s.id(), ade: sample_ade(p, t), fde: sample_fde(p, t) })
        .collect();
    let values: Vec<f64> = per_sample.iter().map(|e| e.ade).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max = values.iter().copied().fold(0.0, f64::max);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let worst = order
        .iter()
        .take(opts.worst_k)
        .map(|&i| WorstCase {
            id: per_sample[i].id.clone(),
            ade: values[i],
            obs: samples[i].obs.clone(),
            truth: truth[i].clone(),
            pred: preds[i].clone(),
        })
        .collect();
    Ok(EvalReport {
        scene: scene_label(samples),
        n: samples.len(),
        ade: ade(&preds, &truth)?,
        fde: fde(&preds, &truth)?,
        histogram: Histogram::new(&values, opts.bin_width),
        ade_mean: mean,
        ade_std: std,
        ade_max: max,
        worst,
        per_sample,
    })
}

fn scene_label(samples: &[Sample]) -> String {
    let mut ids: Vec<&str> = samples.iter().map(|s| s.scene_id.as_str()).collect();
    ids.dedup();
    ids.sort_unstable();
    ids.dedup();
    ids.join("+")
}

/// Evaluate a checkpoint in eval mode on a test split.
pub fn evaluate_fold(ck: &Checkpoint, samples: &[Sample], mode: NormMode, opts: &EvalOptions) -> Result<EvalReport> {
    let p = ModelPredictor::from_checkpoint(ck)?;
    evaluate_with(&p, samples, mode, opts)
}

/// Per-scene rows, the unweighted mean over scenes (`average`) and the
/// sample-weighted mean (`pooled`).
pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("scene,n,ade,fde\n");
    for r in reports {
        s.push_str(&format!("{},{},{},{}\n", r.scene, r.n, r.ade, r.fde));
    }
    if !reports.is_empty() {
        let k = reports.len() as f64;
        let n: usize = reports.iter().map(|r| r.n).sum();
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        let pooled = |f: fn(&EvalReport) -> f64| reports.iter().map(|r| f(r) * r.n as f64).sum::<f64>() / n as f64;
        s.push_str(&format!("average,{n},{},{}\n", avg(|r| r.ade), avg(|r| r.fde)));
        s.push_str(&format!("pooled,{n},{},{}\n", pooled(|r| r.ade), pooled(|r| r.fde)));
    }
    s
}

/// `id,ade,fde` per sample.
pub fn per_sample_csv(r: &EvalReport) -> String {
    let mut s = String::from("id,ade,fde\n");
    for e in &r.per_sample {
        s.push_str(&format!("{},{},{}\n", e.id, e.ade, e.fde));
    }
    s
}

/// Worst-case trajectories, one point per row.
pub fn worst_cases_csv(r: &EvalReport) -> String {
    let mut s = String::from("rank,id,ade,kind,t,x,y\n");
    for (rank, w) in r.worst.iter().enumerate() {
        for (kind, pts, t0) in [("obs", &w.obs, 0), ("truth", &w.truth, OBS_LEN), ("pred", &w.pred, OBS_LEN)] {
            for (i, p) in pts.iter().enumerate() {
                s.push_str(&format!("{rank},{},{},{kind},{},{},{}\n", w.id, w.ade, t0 + i, p[0], p[1]));
            }
        }
    }
    s
}

/// `lower,upper,count` per histogram bin.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("lower,upper,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        s.push_str(&format!("{},{},{c}\n", i as f64 * h.bin_width, (i + 1) as f64 * h.bin_width));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGradient {
    pub layer: String,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub count: usize,
}

/// Mean and max absolute gradient per layer after one backward pass of the
/// training loss. Layers appear in parameter order.
pub fn gradient_flow_report<T: Scalar>(model: &Model, params: &ParamStore<T>, batch: &Batch<T>) -> Result<Vec<LayerGradient>> {
    let (_, grads, _) = loss_and_grads(model, params, batch)?;
    let mut out: Vec<LayerGradient> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    for (id, g) in params.trainable_ids().into_iter().zip(&grads) {
        let layer = ParamStore::<T>::layer_of(&params.entries()[id.0].name).to_string();
        let pos = match out.iter().position(|l| l.layer == layer) {
            Some(p) => p,
            None => {
                out.push(LayerGradient { layer, mean_abs: 0.0, max_abs: 0.0, count: 0 });
                sums.push(0.0);
                out.len() - 1
            }
        };
        for v in g.data() {
            let a = v.to_f64_lossy().abs();
            sums[pos] += a;
            out[pos].max_abs = out[pos].max_abs.max(a);
        }
        out[pos].count += g.len();
    }
    for (l, s) in out.iter_mut().zip(sums) {
        l.mean_abs = s / l.count.max(1) as f64;
    }
    Ok(out)
}

pub fn gradient_flow_csv(layers: &[LayerGradient]) -> String {
    let mut s = String::from("layer,mean_abs_grad,max_abs_grad,count\n");
    for l in layers {
        s.push_str(&format!("{},{},{},{}\n", l.layer, l.mean_abs, l.max_abs, l.count));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub model: String,
    pub batch_size: usize,
    /// Median forward time divided by the batch size.
    pub per_element_seconds: f64,
    pub repeats: usize,
    /// Median absolute deviation of the per-element time.
    pub mad_seconds: f64,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub warmup: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { warmup: 5, repeats: 30, seed: 0 }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Time eval-mode forward passes on one worker thread.
pub fn latency_benchmark(
    models: &[(String, &Model, &ParamStore<f32>)],
    batch_sizes: &[usize],
    opts: &BenchOptions,
) -> Result<Vec<TimingReport>> {
    if opts.repeats < 30 {
        return Err(Error::Config(format!("latency benchmark needs ≥ 30 repeats, got {}", opts.repeats)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot create benchmark thread: {e}")))?;
    pool.install(|| {
        let mut out = Vec::new();
        for (label, model, params) in models {
            for &b in batch_sizes {
                let input = bench_input(&model.spec, b, opts.seed)?;
                for _ in 0..opts.warmup {
                    std::hint::black_box(model.predict(params, &input)?);
                }
                let mut times = Vec::with_capacity(opts.repeats);
                for _ in 0..opts.repeats {
                    let t = Instant::now();
                    std::hint::black_box(model.predict(params, &input)?);
                    times.push(t.elapsed().as_secs_f64() / b as f64);
                }
                let med = median(&mut times);
                let mut dev: Vec<f64> = times.iter().map(|t| (t - med).abs()).collect();
                out.push(TimingReport {
                    model: label.clone(),
                    batch_size: b,
                    per_element_seconds: med,
                    repeats: opts.repeats,
                    mad_seconds: median(&mut dev),
                    params: params.trainable_count(),
                });
            }
        }
        Ok(out)
    })
}

fn bench_input(spec: &ModelSpec, batch: usize, seed: u64) -> Result<ModelInput<f32>> {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let obs = (0..batch * OBS_LEN * 2).map(|_| r.random_range(-3.0f32..3.0)).collect();
    let s = spec.social.feature_len();
    let social = (s > 0)
        .then(|| NdArray::from_vec(&[batch, OBS_LEN, s], (0..batch * OBS_LEN * s).map(|_| r.random_range(0.0f32..1.0)).collect()))
        .transpose()?;
    ModelInput::new(NdArray::from_vec(&[batch, OBS_LEN, 2], obs)?, social)
}

/// `model,batch_size,per_element_seconds,params`
pub fn timing_csv(reports: &[TimingReport]) -> String {
    let mut s = String::from("model,batch_size,per_element_seconds,params\n");
    for r in reports {
        s.push_str(&format!("{},{},{},{}\n", r.model, r.batch_size, r.per_element_seconds, r.params));
    }
    s
}
