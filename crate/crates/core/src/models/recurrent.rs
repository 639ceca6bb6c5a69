//! LSTM and encoder-decoder baselines.

use crate::data::{OBS_LEN, PRED_LEN};
use crate::error::{Error, Result};
use crate::ndmath::{Graph, NdArray, Var};
use crate::scalar::Scalar;

use super::layers::{fuse_social, Builder, Linear, Lstm};
use super::params::Bound;
use super::spec::ModelSpec;
use super::ModelInput;

/// Position embedding, optional social embedding, and the cell.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub embed: Linear,
    pub social: Option<Linear>,
    pub cell: Lstm,
}

/// Two linear output layers: hidden → out_hidden → 2.
#[derive(Clone, Debug)]
pub struct Head {
    pub hidden: Linear,
    pub out: Linear,
}

impl Encoder {
    fn build<T: Scalar>(prefix: &str, spec: &ModelSpec, social: bool, b: &mut Builder<'_, T>) -> Result<Self> {
        let s_len = spec.social.feature_len();
        Ok(Encoder {
            embed: b.linear(&format!("{prefix}embed"), 2, spec.embed_dim)?,
            social: if social && s_len > 0 { Some(b.linear(&format!("{prefix}social_embed"), s_len, spec.embed_dim)?) } else { None },
            cell: b.lstm(&format!("{prefix}lstm"), spec.embed_dim, spec.lstm_hidden)?,
        })
    }

    fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound<'_, T>,
        pos: Var,
        social: Option<Var>,
        state: (Var, Var),
    ) -> Result<(Var, Var)> {
        let mut x = self.embed.apply(g, p, pos)?;
        if let (Some(fc), Some(s)) = (&self.social, social) {
            x = fuse_social(g, p, x, s, fc)?;
        }
        g.lstm_step(x, state.0, state.1, &self.cell.vars(p))
    }

    fn zero_state<T: Scalar>(&self, g: &mut Graph<T>, batch: usize) -> (Var, Var) {
        let h = g.constant(NdArray::zeros(&[batch, self.cell.hidden]));
        let c = g.constant(NdArray::zeros(&[batch, self.cell.hidden]));
        (h, c)
    }

    /// Run over the observed window with ground-truth positions.
    /// `emit` is called after each step with the step index and new state.
    fn observe<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound<'_, T>,
        input: &ModelInput<T>,
        mut emit: impl FnMut(&mut Graph<T>, usize, (Var, Var)) -> Result<()>,
    ) -> Result<(Var, Var)> {
        if self.social.is_some() && input.social.is_none() {
            return Err(Error::dim("model expects social features"));
        }
        let mut state = self.zero_state(g, input.batch());
        for t in 0..OBS_LEN {
            let pos = g.constant(input.obs_step(t));
            let social = self.social.as_ref().map(|_| g.constant(input.social_step(t).expect("checked above")));
            state = self.step(g, p, pos, social, state)?;
            emit(g, t, state)?;
        }
        Ok(state)
    }
}

impl Head {
    fn build<T: Scalar>(prefix: &str, spec: &ModelSpec, b: &mut Builder<'_, T>) -> Result<Self> {
        Ok(Head {
            hidden: b.linear(&format!("{prefix}out_hidden"), spec.lstm_hidden, spec.out_hidden)?,
            out: b.linear(&format!("{prefix}out"), spec.out_hidden, 2)?,
        })
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, h: Var) -> Result<Var> {
        let z = self.hidden.apply(g, p, h)?;
        self.out.apply(g, p, z)
    }
}

/// Single LSTM fed ground truth for the observed window and its own
/// predictions afterwards.
#[derive(Clone, Debug)]
pub struct LstmNet {
    pub enc: Encoder,
    pub head: Head,
}

impl LstmNet {
    pub(crate) fn build<T: Scalar>(spec: &ModelSpec, b: &mut Builder<'_, T>) -> Result<Self> {
        Ok(LstmNet { enc: Encoder::build("", spec, true, b)?, head: Head::build("", spec, b)? })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, input: &ModelInput<T>) -> Result<Var> {
        let mut preds = Vec::with_capacity(PRED_LEN);
        // the step consuming the last observation emits the first prediction
        let mut state = self.enc.observe(g, p, input, |g, t, (h, _)| {
            if t == OBS_LEN - 1 {
                preds.push(self.head.apply(g, p, h)?);
            }
            Ok(())
        })?;
        while preds.len() < PRED_LEN {
            let prev = *preds.last().unwrap();
            state = self.enc.step(g, p, prev, None, state)?;
            preds.push(self.head.apply(g, p, state.0)?);
        }
        g.stack(&preds)
    }
}

/// LSTM encoder over the observed window; a separate LSTM decoder with the
/// baseline's output layers, started from the encoder state.
#[derive(Clone, Debug)]
pub struct EncDecNet {
    pub enc: Encoder,
    pub dec: Encoder,
    pub head: Head,
}

impl EncDecNet {
    pub(crate) fn build<T: Scalar>(spec: &ModelSpec, b: &mut Builder<'_, T>) -> Result<Self> {
        Ok(EncDecNet {
            enc: Encoder::build("enc.", spec, true, b)?,
            // the decoder sees positions only
            dec: Encoder::build("dec.", spec, false, b)?,
            head: Head::build("dec.", spec, b)?,
        })
    }

    /// Final encoder `(h, c)`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, input: &ModelInput<T>) -> Result<(Var, Var)> {
        self.enc.observe(g, p, input, |_, _, _| Ok(()))
    }

    /// Decode from `state`, first consuming the last observed position.
    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound<'_, T>,
        input: &ModelInput<T>,
        mut state: (Var, Var),
    ) -> Result<Var> {
        let mut pos = g.constant(input.obs_step(OBS_LEN - 1));
        let mut preds = Vec::with_capacity(PRED_LEN);
        for _ in 0..PRED_LEN {
            state = self.dec.step(g, p, pos, None, state)?;
            pos = self.head.apply(g, p, state.0)?;
            preds.push(pos);
        }
        g.stack(&preds)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, input: &ModelInput<T>) -> Result<Var> {
        let state = self.encode(g, p, input)?;
        self.decode(g, p, input, state)
    }
}
