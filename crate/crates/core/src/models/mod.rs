//! Trajectory predictors: the 1-D and 2-D convolutional models and the
//! recurrent baselines, all mapping `B×8×2` observations to `B×12×2`
//! predictions in the normalized frame.

mod conv;
mod layers;
mod params;
mod recurrent;
mod spec;

pub use conv::{ConvBlock, ConvNet, Transition};
pub use layers::{fuse_social, BatchNorm, Builder, Linear, Lstm};
pub use params::{Bound, ParamEntry, ParamId, ParamStore};
pub use recurrent::{EncDecNet, Encoder, Head, LstmNet};
pub use spec::{Family, ModelSpec, CONV2D_CHANNELS};

use crate::data::{OBS_LEN, PRED_LEN};
use crate::error::{Error, Result};
use crate::ndmath::{Graph, NdArray, Phase, Var};
use crate::scalar::Scalar;

/// Batched model input in the normalized frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    /// `B×8×2`
    pub obs: NdArray<T>,
    /// `B×8×S` when the model uses social features.
    pub social: Option<NdArray<T>>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn new(obs: NdArray<T>, social: Option<NdArray<T>>) -> Result<Self> {
        let s = obs.shape();
        if s.len() != 3 || s[1] != OBS_LEN || s[2] != 2 {
            return Err(Error::dim(format!("observations must be B×{OBS_LEN}×2, got {:?}", s)));
        }
        if let Some(soc) = &social {
            let ss = soc.shape();
            if ss.len() != 3 || ss[0] != s[0] || ss[1] != OBS_LEN {
                return Err(Error::dim(format!("social features must be B×{OBS_LEN}×S, got {:?}", ss)));
            }
        }
        Ok(ModelInput { obs, social })
    }

    pub fn batch(&self) -> usize {
        self.obs.shape()[0]
    }

    /// Observed positions at step `t` as `B×2`.
    pub fn obs_step(&self, t: usize) -> NdArray<T> {
        let b = self.batch();
        let d = self.obs.data();
        let data = (0..b).flat_map(|i| [d[(i * OBS_LEN + t) * 2], d[(i * OBS_LEN + t) * 2 + 1]]).collect();
        NdArray::from_vec(&[b, 2], data).expect("shape")
    }

    /// Social features at step `t` as `B×S`.
    pub fn social_step(&self, t: usize) -> Option<NdArray<T>> {
        let soc = self.social.as_ref()?;
        let (b, s) = (self.batch(), soc.shape()[2]);
        let d = soc.data();
        let data = (0..b).flat_map(|i| d[(i * OBS_LEN + t) * s..(i * OBS_LEN + t + 1) * s].iter().copied()).collect();
        Some(NdArray::from_vec(&[b, s], data).expect("shape"))
    }

    /// Social features as `(B·8)×S`.
    pub fn social_flat(&self) -> Result<Option<NdArray<T>>> {
        match &self.social {
            None => Ok(None),
            Some(s) => {
                let sh = s.shape();
                Ok(Some(s.clone().reshape(&[sh[0] * sh[1], sh[2]])?))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Network {
    Conv(ConvNet),
    Lstm(LstmNet),
    EncDec(EncDecNet),
}

/// A built predictor: its spec plus the parameter layout it reads.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub net: Network,
}

/// Build a model and its seeded parameters.
pub fn build_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<(ParamStore<T>, Model)> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, seed);
    let net = match spec.family {
        Family::Conv1d | Family::Conv2d => Network::Conv(ConvNet::build(spec, &mut b)?),
        Family::Lstm => Network::Lstm(LstmNet::build(spec, &mut b)?),
        Family::EncDec => Network::EncDec(EncDecNet::build(spec, &mut b)?),
    };
    Ok((store, Model { spec: spec.clone(), net }))
}

impl Model {
    /// Record a forward pass; returns the `B×12×2` prediction node.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, input: &ModelInput<T>, phase: Phase) -> Result<Var> {
        let s_len = self.spec.social.feature_len();
        match &input.social {
            Some(s) if s.shape()[2] != s_len => {
                return Err(Error::dim(format!("social features have length {}, model expects {s_len}", s.shape()[2])))
            }
            None if s_len > 0 => return Err(Error::dim("model expects social features")),
            _ => {}
        }
        let out = match &self.net {
            Network::Conv(n) => n.forward(g, p, input, phase)?,
            Network::Lstm(n) => n.forward(g, p, input)?,
            Network::EncDec(n) => n.forward(g, p, input)?,
        };
        debug_assert_eq!(g.shape(out), [input.batch(), PRED_LEN, 2]);
        Ok(out)
    }

    /// Inference without gradient tracking.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, input: &ModelInput<T>) -> Result<NdArray<T>> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let out = self.forward(&mut g, &p, input, Phase::Eval)?;
        Ok(g.value(out).clone())
    }

    /// Whether predictions are produced in one pass (no output feedback).
    pub fn is_one_shot(&self) -> bool {
        matches!(self.net, Network::Conv(_))
    }
}
