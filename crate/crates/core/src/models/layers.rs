use crate::error::Result;
use crate::ndmath::{Graph, Initializer, LstmVars, NdArray, Phase, RunningStats, Var};
use crate::scalar::Scalar;

use super::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, x: Var) -> Result<Var> {
        g.fc(x, p.var(self.weight), Some(p.var(self.bias)))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound<'_, T>, x: Var, phase: Phase) -> Result<Var> {
        let running = RunningStats {
            mean: p.data(self.running_mean),
            var: p.data(self.running_var),
            tag: self.running_mean.0,
        };
        g.batch_norm(x, p.var(self.gamma), p.var(self.beta), running, phase)
    }
}

#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn vars<T: Scalar>(&self, p: &Bound<'_, T>) -> LstmVars {
        LstmVars { w_ih: p.var(self.w_ih), w_hh: p.var(self.w_hh), bias: p.var(self.bias) }
    }
}

/// Creates parameters in a fixed order from one seeded stream.
pub struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    init: Initializer,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Builder { store, init: Initializer::new(seed) }
    }

    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let v = self.init.fan_in_uniform(shape, fan_in);
        self.store.insert(name, v, true)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.insert(name, NdArray::zeros(shape), true)
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.weight(&format!("{name}.weight"), &[dout, din], din)?,
            bias: self.zeros(&format!("{name}.bias"), &[dout])?,
        })
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BatchNorm> {
        let gamma = self.store.insert(&format!("{name}.gamma"), NdArray::ones(&[channels]), true)?;
        let beta = self.zeros(&format!("{name}.beta"), &[channels])?;
        // running_var must directly follow running_mean (see ParamStore::apply_batch_stats)
        let running_mean = self.store.insert(&format!("{name}.running_mean"), NdArray::zeros(&[channels]), false)?;
        let running_var = self.store.insert(&format!("{name}.running_var"), NdArray::ones(&[channels]), false)?;
        Ok(BatchNorm { gamma, beta, running_mean, running_var })
    }

    pub fn lstm(&mut self, name: &str, din: usize, hidden: usize) -> Result<Lstm> {
        Ok(Lstm {
            w_ih: self.weight(&format!("{name}.w_ih"), &[4 * hidden, din], din)?,
            w_hh: self.weight(&format!("{name}.w_hh"), &[4 * hidden, hidden], hidden)?,
            bias: self.zeros(&format!("{name}.bias"), &[4 * hidden])?,
            hidden,
        })
    }
}

/// Add an embedded social vector to a position embedding: `pos + W·social + b`.
pub fn fuse_social<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound<'_, T>,
    pos_embed: Var,
    social: Var,
    social_fc: &Linear,
) -> Result<Var> {
    let s = social_fc.apply(g, p, social)?;
    g.add(pos_embed, s)
}
