//! One-shot convolutional predictors.
//!
//! Positions are embedded into a `64×8` matrix (features × time), processed
//! by a padded conv group, taken from 8 to 12 timesteps (upsample + two
//! shrinking convs, or a transpose conv), processed by a second padded group,
//! and mapped back to positions per timestep.

use crate::data::{OBS_LEN, PRED_LEN};
use crate::error::{Error, Result};
use crate::ndmath::{Graph, Phase, Var};
use crate::scalar::Scalar;

use super::layers::{fuse_social, BatchNorm, Builder, Linear};
use super::params::{Bound, ParamId};
use super::spec::{Family, ModelSpec};
use super::ModelInput;

#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub weight: ParamId,
    pub bias: ParamId,
    pub bn: Option<BatchNorm>,
    /// `(feature, time)` padding; the 1-D model uses only the time part.
    pub padding: (usize, usize),
    pub relu: bool,
}

#[derive(Clone, Debug)]
pub enum Transition {
    UpsampleReduce([ConvBlock; 2]),
    Transpose { weight: ParamId, bias: ParamId, relu: bool },
}

#[derive(Clone, Debug)]
pub struct ConvNet {
    pub two_d: bool,
    pub embed: Linear,
    pub positional: Option<ParamId>,
    pub social: Option<Linear>,
    pub head: Vec<ConvBlock>,
    pub transition: Transition,
    pub tail: Vec<ConvBlock>,
    pub out: Linear,
    pub residual: bool,
    pub embed_dim: usize,
    /// Feature rows reaching the output layer.
    pub out_features: usize,
}

impl ConvNet {
    pub(crate) fn build<T: Scalar>(spec: &ModelSpec, b: &mut Builder<'_, T>) -> Result<Self> {
        let two_d = spec.family == Family::Conv2d;
        let k = spec.kernel_size;
        let e = spec.embed_dim;
        let same = (k - 1) / 2;
        let shrink_time = (k - 3) / 2;
        let sched = spec.channel_schedule();
        let bn = spec.uses_batch_norm();
        let act = spec.activation;
        let n = sched.len();

        let embed = b.linear("embed", 2, e)?;
        let positional =
            if spec.positional_embedding { Some(b.zeros("pos_embed", &[OBS_LEN, e])?) } else { None };
        let s_len = spec.social.feature_len();
        let social = if s_len > 0 { Some(b.linear("social_embed", s_len, e)?) } else { None };

        let block = |b: &mut Builder<'_, T>, i: usize, padding: (usize, usize)| -> Result<ConvBlock> {
            let (cin, cout) = sched[i];
            let (shape, fan) = if two_d { (vec![cout, cin, k, k], cin * k * k) } else { (vec![cout, cin, k], cin * k) };
            Ok(ConvBlock {
                weight: b.weight(&format!("conv{i}.weight"), &shape, fan)?,
                bias: b.zeros(&format!("conv{i}.bias"), &[cout])?,
                bn: if bn { Some(b.batch_norm(&format!("bn{i}"), cout)?) } else { None },
                padding,
                relu: act && i + 1 < n,
            })
        };

        let h = spec.head_layers;
        let mut head = Vec::new();
        for i in 0..h {
            head.push(block(b, i, (same, same))?);
        }
        let transition = if spec.transpose_conv {
            let (cin, _) = sched[h];
            let (_, cout) = sched[h + 1];
            let kt = PRED_LEN - OBS_LEN + 1;
            Transition::Transpose {
                weight: b.weight("tconv.weight", &[cin, cout, kt], cin * kt)?,
                bias: b.zeros("tconv.bias", &[cout])?,
                relu: act,
            }
        } else {
            let feat_pad = if two_d && spec.symmetric_reduction_padding { shrink_time } else { same };
            let p = (feat_pad, shrink_time);
            Transition::UpsampleReduce([block(b, h, p)?, block(b, h + 1, p)?])
        };
        let mut tail = Vec::new();
        for i in h + 2..n {
            tail.push(block(b, i, (same, same))?);
        }
        let out_features =
            if two_d && spec.symmetric_reduction_padding && !spec.transpose_conv { e - 4 } else { e };
        let out_rows = if two_d { out_features } else { sched[n - 1].1 };
        let out = b.linear("out", out_rows, 2)?;
        Ok(ConvNet {
            two_d,
            embed,
            positional,
            social,
            head,
            transition,
            tail,
            out,
            residual: spec.residual,
            embed_dim: e,
            out_features: out_rows,
        })
    }

    pub(crate) fn block<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, x: Var, blk: &ConvBlock, phase: Phase) -> Result<Var> {
        let (w, bias) = (p.var(blk.weight), p.var(blk.bias));
        let mut y = if self.two_d {
            g.conv2d(x, w, Some(bias), blk.padding)?
        } else {
            g.conv1d(x, w, Some(bias), blk.padding.1)?
        };
        if let Some(bn) = &blk.bn {
            y = bn.apply(g, p, y, phase)?;
        }
        if blk.relu {
            y = g.relu(y);
        }
        if self.residual {
            let (lx, ly) = (*g.shape(x).last().unwrap(), *g.shape(y).last().unwrap());
            let skip = if lx == ly { x } else { g.narrow_last(x, (lx - ly) / 2, ly)? };
            y = g.add(skip, y)?;
        }
        Ok(y)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, input: &ModelInput<T>, phase: Phase) -> Result<Var> {
        let b = input.batch();
        let e = self.embed_dim;
        let obs = g.constant(input.obs.clone().reshape(&[b * OBS_LEN, 2])?);
        let mut z = self.embed.apply(g, p, obs)?;
        if let Some(fc) = &self.social {
            let s = input.social_flat()?.ok_or_else(|| Error::dim("model expects social features"))?;
            let s = g.constant(s);
            z = fuse_social(g, p, z, s, fc)?;
        }
        let mut z = g.reshape(z, &[b, OBS_LEN, e])?;
        if let Some(pos) = self.positional {
            z = g.add_broadcast(z, p.var(pos))?;
        }
        // features × time
        let mut x = g.swap_last2(z)?;
        if self.two_d {
            x = g.reshape(x, &[b, 1, e, OBS_LEN])?;
        }
        for blk in &self.head {
            x = self.block(g, p, x, blk, phase)?;
        }
        x = match &self.transition {
            Transition::UpsampleReduce(blocks) => {
                x = g.upsample2x(x)?;
                for blk in blocks {
                    x = self.block(g, p, x, blk, phase)?;
                }
                x
            }
            Transition::Transpose { weight, bias, relu } => {
                let y = g.transpose_conv1d(x, p.var(*weight), Some(p.var(*bias)), 1, 0)?;
                if *relu {
                    g.relu(y)
                } else {
                    y
                }
            }
        };
        for blk in &self.tail {
            x = self.block(g, p, x, blk, phase)?;
        }
        let s = g.shape(x).to_vec();
        if *s.last().unwrap() != PRED_LEN {
            return Err(Error::dim(format!("conv stack produced {} timesteps, expected {PRED_LEN}", s.last().unwrap())));
        }
        if self.two_d {
            x = g.reshape(x, &[b, s[2], s[3]])?;
        }
        let x = g.swap_last2(x)?;
        let x = g.reshape(x, &[b * PRED_LEN, self.out_features])?;
        let y = self.out.apply(g, p, x)?;
        g.reshape(y, &[b, PRED_LEN, 2])
    }
}
