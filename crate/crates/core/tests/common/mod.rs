#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajconv::models::{build_model, Model, ModelInput, ModelSpec, ParamId, ParamStore};
use trajconv::ndmath::{Graph, NdArray, Phase, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> NdArray<f64> {
    let n: usize = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub worst_rel: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that entries whose true
/// gradient is ~0 are judged on absolute error.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central finite-difference check of `build` with respect to every element
/// of every input. `build` must produce an array; the loss is its inner
/// product with fixed random weights so no output direction is trivial.
pub fn fd_check<F>(inputs: &[NdArray<f64>], seed: u64, h: f64, build: F) -> FdReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let weights = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|a| g.constant(a.clone())).collect();
        let out = build(&mut g, &vars);
        random_array(&mut rng(seed), g.shape(out), 1.0)
    };
    let loss_of = |g: &mut Graph<f64>, vars: &[Var]| {
        let out = build(g, vars);
        let w = g.constant(weights.clone());
        let p = g.mul(out, w).unwrap();
        g.sum(p)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.param(a.clone())).collect();
    let loss = loss_of(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<NdArray<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().clone()).collect();

    let eval = |ins: &[NdArray<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|a| g.constant(a.clone())).collect();
        let l = loss_of(&mut g, &vars);
        g.value(l).item()
    };

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, input) in inputs.iter().enumerate() {
        let scale = analytic[k].data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..input.len() {
            let mut ins = inputs.to_vec();
            ins[k].data_mut()[i] += h;
            let up = eval(&ins);
            ins[k].data_mut()[i] -= 2.0 * h;
            let down = eval(&ins);
            let fd = (up - down) / (2.0 * h);
            let e = rel_err(analytic[k].data()[i], fd, (1e-3 * scale).max(1e-6));
            worst = worst.max(e);
            checked += 1;
        }
    }
    FdReport { worst_rel: worst, checked }
}

/// Random normalized batch: observations, optional social features and targets.
pub fn random_batch(seed: u64, batch: usize, social_len: usize) -> (ModelInput<f64>, NdArray<f64>) {
    let mut r = rng(seed);
    let obs = random_array(&mut r, &[batch, 8, 2], 2.0);
    let social = (social_len > 0).then(|| {
        let n = batch * 8 * social_len;
        NdArray::from_vec(&[batch, 8, social_len], (0..n).map(|_| r.random_range(0.0..2.0)).collect()).unwrap()
    });
    let target = random_array(&mut r, &[batch, 12, 2], 3.0);
    (ModelInput::new(obs, social).unwrap(), target)
}

/// Training-loss value for `store`.
pub fn model_loss(model: &Model, store: &ParamStore<f64>, input: &ModelInput<f64>, target: &NdArray<f64>) -> f64 {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let out = model.forward(&mut g, &p, input, Phase::Train).unwrap();
    let l = g.ade_loss(out, target).unwrap();
    g.value(l).item()
}

/// Analytic gradients of the training loss for every trainable parameter.
pub fn model_grads(model: &Model, store: &ParamStore<f64>, input: &ModelInput<f64>, target: &NdArray<f64>) -> Vec<(ParamId, NdArray<f64>)> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, true);
    let out = model.forward(&mut g, &p, input, Phase::Train).unwrap();
    let l = g.ade_loss(out, target).unwrap();
    g.backward(l).unwrap();
    store.trainable_ids().into_iter().map(|id| (id, g.grad(p.var(id)).unwrap().clone())).collect()
}

/// Central-difference check of a whole model's training loss. With
/// `per_tensor = None` every parameter entry is checked; otherwise that many
/// entries per tensor, always including the largest-gradient entry.
///
/// Every parameter is jittered first: with zero biases a ReLU fed an all-zero
/// window sits exactly on its kink, where a difference quotient is not a
/// derivative.
pub fn model_fd_check(spec: &ModelSpec, seed: u64, batch: usize, per_tensor: Option<usize>, h: f64) -> (FdReport, String) {
    let (mut store, model) = build_model::<f64>(spec, seed).unwrap();
    let mut r = rng(seed + 2);
    for id in store.trainable_ids() {
        for v in store.get_mut(id).data_mut() {
            *v += r.random_range(-0.05..0.05);
        }
    }
    let (input, target) = random_batch(seed + 1, batch, spec.social.feature_len());
    let grads = model_grads(&model, &store, &input, &target);
    // entries that are structurally zero (a conv bias feeding batch norm) are
    // judged against the model-wide gradient scale
    let global = grads.iter().flat_map(|(_, g)| g.data()).fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut worst, mut worst_name, mut checked) = (0.0f64, String::new(), 0);
    for (id, grad) in grads {
        let scale = grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-2 * global);
        let n = grad.len();
        let idx: Vec<usize> = match per_tensor {
            Some(k) if k < n => {
                let argmax = (0..n).max_by(|&a, &b| grad.data()[a].abs().total_cmp(&grad.data()[b].abs())).unwrap();
                std::iter::once(argmax).chain((1..k).map(|_| r.random_range(0..n))).collect()
            }
            _ => (0..n).collect(),
        };
        for i in idx {
            let mut s = store.clone();
            s.get_mut(id).data_mut()[i] += h;
            let up = model_loss(&model, &s, &input, &target);
            s.get_mut(id).data_mut()[i] -= 2.0 * h;
            let down = model_loss(&model, &s, &input, &target);
            let fd = (up - down) / (2.0 * h);
            let e = rel_err(grad.data()[i], fd, (1e-3 * scale).max(1e-6));
            if e > worst {
                worst = e;
                worst_name = format!("{}[{i}]", store.entries()[id.0].name);
            }
            checked += 1;
        }
    }
    (FdReport { worst_rel: worst, checked }, worst_name)
}

/// Direct double-loop ADE over `n×T` trajectories.
pub fn brute_ade(pred: &[Vec<[f64; 2]>], truth: &[Vec<[f64; 2]>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        for t in 0..pred[i].len() {
            let dx = pred[i][t][0] - truth[i][t][0];
            let dy = pred[i][t][1] - truth[i][t][1];
            total += (dx * dx + dy * dy).sqrt();
            count += 1;
        }
    }
    total / count as f64
}

/// Direct loop FDE.
pub fn brute_fde(pred: &[Vec<[f64; 2]>], truth: &[Vec<[f64; 2]>]) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        let t = pred[i].len() - 1;
        let dx = pred[i][t][0] - truth[i][t][0];
        let dy = pred[i][t][1] - truth[i][t][1];
        total += (dx * dx + dy * dy).sqrt();
    }
    total / pred.len() as f64
}

/// Random `n×12` trajectory pair with `n ≤ 100`.
pub fn random_trajectories(r: &mut ChaCha8Rng) -> (Vec<Vec<[f64; 2]>>, Vec<Vec<[f64; 2]>>) {
    let n = r.random_range(1..=100);
    let mut traj = |scale: f64| -> Vec<Vec<[f64; 2]>> {
        (0..n).map(|_| (0..12).map(|_| [r.random_range(-scale..scale), r.random_range(-scale..scale)]).collect()).collect()
    };
    let truth = traj(20.0);
    let pred = traj(20.0);
    (pred, truth)
}
