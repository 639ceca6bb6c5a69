//! Training loop, schedules, batching and checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, RngState, FORMAT_VERSION};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Sample, OBS_LEN, PRED_LEN};
use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelInput, ModelSpec, ParamStore};
use crate::ndmath::{lr_schedule, AdamState, Graph, NdArray, Phase, Var};
use crate::prep::{augment, normalize, AugmentConfig, Augmentation, NormMode, Normalized};
use crate::scalar::Scalar;
use crate::social::{sample_features, SocialConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    EthUcy,
    Trajnet,
}

impl Preset {
    /// `(epochs, base_lr, gamma, step)`
    pub fn schedule(self) -> (usize, f64, f64, usize) {
        match self {
            Preset::EthUcy => (60, 0.005, 0.5, 17),
            Preset::Trajnet => (250, 0.005, 0.75, 35),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::EthUcy => "eth_ucy",
            Preset::Trajnet => "trajnet",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eth_ucy" | "eth-ucy" | "ethucy" => Ok(Preset::EthUcy),
            "trajnet" => Ok(Preset::Trajnet),
            _ => Err(Error::Config(format!("unknown preset `{s}` (expected eth_ucy or trajnet)"))),
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub epochs: usize,
    pub base_lr: f64,
    pub gamma: f64,
    pub step: usize,
    pub batch_size: usize,
    pub norm_mode: NormMode,
    pub augment: Vec<Augmentation>,
    pub noise_sigma: f64,
    pub model: ModelSpec,
    pub seed: u64,
}

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

impl TrainConfig {
    pub fn preset(preset: Preset, model: ModelSpec) -> Self {
        let (epochs, base_lr, gamma, step) = preset.schedule();
        TrainConfig {
            preset,
            epochs,
            base_lr,
            gamma,
            step,
            batch_size: DEFAULT_BATCH_SIZE,
            norm_mode: NormMode::Tobs,
            augment: Vec::new(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            model,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.step == 0 {
            return Err(Error::Config("batch_size and step must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite() && self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("invalid schedule: lr {} gamma {}", self.base_lr, self.gamma)));
        }
        if self.model.uses_batch_norm() && self.batch_size < 2 {
            return Err(Error::Config("batch-norm models need batch_size ≥ 2".into()));
        }
        self.augment_config().map(|_| ())
    }

    pub fn augment_config(&self) -> Result<AugmentConfig> {
        AugmentConfig::from_set(&self.augment, self.noise_sigma, self.seed)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.base_lr, self.gamma, self.step)
    }

    /// Hex digest of every setting except the epoch budget, so a run can be
    /// resumed with a longer budget.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A model-ready batch in the normalized frame.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub input: ModelInput<T>,
    /// `B×12×2` future positions relative to the frame origin; for rel mode,
    /// positions relative to the last observation.
    pub target: NdArray<T>,
    pub mode: NormMode,
}

/// Stack normalized samples into a batch, encoding social features when
/// `social` is enabled. Unlabeled samples get a zero target.
pub fn make_batch<T: Scalar>(items: &[&Normalized], social: &SocialConfig) -> Result<Batch<T>> {
    let mode = items.first().map(|n| n.mode).ok_or_else(|| Error::InvalidBatch("empty batch".into()))?;
    let b = items.len();
    let s_len = social.feature_len();
    let mut obs = Vec::with_capacity(b * OBS_LEN * 2);
    let mut soc = Vec::with_capacity(b * OBS_LEN * s_len);
    let mut target = Vec::with_capacity(b * PRED_LEN * 2);
    for n in items {
        if n.mode != mode || n.obs.len() != OBS_LEN {
            return Err(Error::InvalidBatch("samples differ in mode or observation length".into()));
        }
        obs.extend(n.obs.iter().flat_map(|p| [T::lit(p[0]), T::lit(p[1])]));
        if s_len > 0 {
            for f in sample_features(n, social) {
                soc.extend(f.into_iter().map(T::lit));
            }
        }
        match n.target.len() {
            0 => target.extend(std::iter::repeat_n(T::zero(), PRED_LEN * 2)),
            PRED_LEN => {
                let mut acc = [0.0, 0.0];
                for p in &n.target {
                    let q = if mode == NormMode::Rel {
                        acc = [acc[0] + p[0], acc[1] + p[1]];
                        acc
                    } else {
                        *p
                    };
                    target.extend([T::lit(q[0]), T::lit(q[1])]);
                }
            }
            k => return Err(Error::InvalidBatch(format!("target has {k} steps, expected {PRED_LEN}"))),
        }
    }
    let social = (s_len > 0).then(|| NdArray::from_vec(&[b, OBS_LEN, s_len], soc)).transpose()?;
    Ok(Batch {
        input: ModelInput::new(NdArray::from_vec(&[b, OBS_LEN, 2], obs)?, social)?,
        target: NdArray::from_vec(&[b, PRED_LEN, 2], target)?,
        mode,
    })
}

/// Model output as positions comparable with [`Batch::target`].
pub fn output_positions<T: Scalar>(g: &mut Graph<T>, pred: Var, mode: NormMode) -> Result<Var> {
    if mode == NormMode::Rel {
        g.cumsum_time(pred)
    } else {
        Ok(pred)
    }
}

/// Record forward pass and ADE loss.
pub fn forward_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model,
    params: &crate::models::Bound<'_, T>,
    batch: &Batch<T>,
    phase: Phase,
) -> Result<Var> {
    let pred = model.forward(g, params, &batch.input, phase)?;
    let pos = output_positions(g, pred, batch.mode)?;
    g.ade_loss(pos, &batch.target)
}

/// Loss and per-parameter gradients (trainable entries, store order) on one
/// batch, plus the batch-norm statistics it produced.
pub fn loss_and_grads<T: Scalar>(
    model: &Model,
    params: &ParamStore<T>,
    batch: &Batch<T>,
) -> Result<(f64, Vec<NdArray<T>>, Vec<crate::ndmath::BatchStats<T>>)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let loss = forward_loss(&mut g, model, &p, batch, Phase::Train)?;
    let value = g.value(loss).item().to_f64_lossy();
    g.backward(loss)?;
    let grads = params
        .trainable_ids()
        .into_iter()
        .map(|id| g.grad(p.var(id)).cloned().unwrap_or_else(|| NdArray::zeros(params.get(id).shape())))
        .collect();
    let stats = g.take_batch_stats();
    Ok((value, grads, stats))
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
}

/// CSV with header `epoch,lr,train_loss`.
pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,train_loss\n");
    for r in log {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.lr, r.train_loss));
    }
    s
}

/// Mutable state of a run. Parameters are trained in f32.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub params: ParamStore<f32>,
    pub optimizer: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    shuffle: ChaCha8Rng,
    data: Vec<Normalized>,
    augment: AugmentConfig,
}

impl Trainer {
    pub fn new(config: &TrainConfig, samples: &[Sample]) -> Result<Self> {
        config.validate()?;
        let (params, model) = build_model::<f32>(&config.model, config.seed)?;
        let optimizer = AdamState::new(params.trainable_ids().into_iter().map(|id| params.get(id).len()));
        let shuffle = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4500);
        Self::assemble(config, samples, model, params, optimizer, 0, shuffle)
    }

    /// Continue a run from a checkpoint written with the same settings.
    pub fn resume(config: &TrainConfig, samples: &[Sample], ckpt: &Checkpoint) -> Result<Self> {
        config.validate()?;
        if ckpt.config_fingerprint != config.fingerprint() {
            return Err(Error::Config("checkpoint was written with different training settings".into()));
        }
        let (_, model) = build_model::<f32>(&ckpt.spec, config.seed)?;
        let shuffle = ckpt.rng.restore();
        Self::assemble(config, samples, model, ckpt.params.clone(), ckpt.optimizer.clone(), ckpt.epoch as usize, shuffle)
    }

    fn assemble(
        config: &TrainConfig,
        samples: &[Sample],
        model: Model,
        params: ParamStore<f32>,
        optimizer: AdamState<f32>,
        epoch: usize,
        shuffle: ChaCha8Rng,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidBatch("empty training set".into()));
        }
        if let Some(s) = samples.iter().find(|s| !s.labeled || s.future.len() != PRED_LEN) {
            return Err(Error::Unlabeled(format!("training sample {} has no ground-truth future", s.id())));
        }
        if model.spec.uses_batch_norm() && samples.len() < 2 {
            return Err(Error::InvalidBatch("batch-norm models need at least 2 training samples".into()));
        }
        let data = samples.iter().map(|s| normalize(s, config.norm_mode).0).collect();
        let augment = config.augment_config()?;
        Ok(Trainer { config: config.clone(), model, params, optimizer, epoch, shuffle, data, augment })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Batch of (augmented, for `epoch`) samples by index.
    pub fn batch(&self, indices: &[usize], epoch: usize) -> Result<Batch<f32>> {
        let items: Vec<Normalized> =
            indices.iter().map(|&i| augment(&self.data[i], &self.augment, i as u64, epoch as u64)).collect();
        let refs: Vec<&Normalized> = items.iter().collect();
        make_batch(&refs, &self.config.model.social)
    }

    /// One optimizer step; returns the batch loss before the update.
    pub fn step(&mut self, batch: &Batch<f32>, lr: f64) -> Result<f64> {
        let (loss, grads, stats) = loss_and_grads(&self.model, &self.params, batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: self.epoch, batch: 0 });
        }
        let ids = self.params.trainable_ids();
        let names: Vec<String> = ids.iter().map(|id| self.params.entries()[id.0].name.clone()).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let grad_refs: Vec<&NdArray<f32>> = grads.iter().collect();
        {
            let mut targets = self.params.trainable_mut();
            self.optimizer.step(&mut targets, &grad_refs, &name_refs, lr)?;
        }
        self.params.apply_batch_stats(&stats);
        Ok(loss)
    }

    /// Shuffle, batch and train one epoch; returns the sample-weighted mean
    /// batch loss.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch;
        let lr = self.config.lr_at(epoch);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut chunks: Vec<&[usize]> = order.chunks(self.config.batch_size).collect();
        if self.model.spec.uses_batch_norm() && chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
            chunks.pop();
        }
        let (mut total, mut count) = (0.0, 0usize);
        for (bi, idx) in chunks.iter().enumerate() {
            let batch = self.batch(idx, epoch)?;
            let loss = self.step(&batch, lr).map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, batch: bi },
                other => other,
            })?;
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        self.epoch += 1;
        Ok(EpochLog { epoch, lr, train_loss: total / count as f64 })
    }

    /// Train until `config.epochs` epochs are complete.
    pub fn run(&mut self) -> Result<Vec<EpochLog>> {
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            log.push(self.run_epoch()?);
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.model.spec.clone(),
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch as u64,
            rng: RngState::capture(&self.shuffle),
            config_fingerprint: self.config.fingerprint(),
            config_json: serde_json::to_string(&self.config).expect("config serializes"),
        }
    }
}

/// Train a fresh model for `config.epochs` epochs.
pub fn train_run(config: &TrainConfig, samples: &[Sample]) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut t = Trainer::new(config, samples)?;
    let log = t.run()?;
    Ok((t.checkpoint(), log))
}
