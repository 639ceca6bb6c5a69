use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::NdArray;
use super::graph::{BatchStats, Graph, Op, Phase, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub(crate) struct BatchNormSaved<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    channels: usize,
    spatial: usize,
    batch_stats: bool,
}

/// Running statistics of one batch-norm layer.
pub struct RunningStats<'a, T> {
    pub mean: &'a [T],
    pub var: &'a [T],
    /// Opaque key echoed back in [`BatchStats::tag`].
    pub tag: usize,
}

impl<T: Scalar> Graph<T> {
    /// Batch normalization over `B×C×…`, per channel.
    ///
    /// Train mode normalizes with the batch's biased variance and records the
    /// batch mean and unbiased variance for the running-stat update; eval mode
    /// uses the running statistics.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats<'_, T>,
        phase: Phase,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() < 2 {
            return Err(Error::dim(format!("batch_norm expects B×C×…, got {:?}", xs)));
        }
        let (b, c) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || running.mean.len() != c || running.var.len() != c {
            return Err(Error::dim(format!("batch_norm: affine/running parameters do not match {c} channels")));
        }
        if phase == Phase::Train && b < 2 {
            return Err(Error::InvalidBatch(format!("batch norm in train mode needs at least 2 samples, got {b}")));
        }
        let eps = T::lit(BN_EPS);
        let x = self.value(input).data();
        let n = b * spatial;

        let (mean, var_biased) = if phase == Phase::Train {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let it = || (0..b).flat_map(move |bi| x[(bi * c + ch) * spatial..(bi * c + ch + 1) * spatial].iter().copied());
                let m = it().sum::<T>() / T::from_usize(n).unwrap();
                let v = it().map(|v| (v - m) * (v - m)).sum::<T>() / T::from_usize(n).unwrap();
                mean[ch] = m;
                var[ch] = v;
            }
            (mean, var)
        } else {
            (running.mean.to_vec(), running.var.to_vec())
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for (i, (&xv, (h, o))) in x.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (i / spatial) % c;
            *h = (xv - mean[ch]) * inv_std[ch];
            *o = gv[ch] * *h + bv[ch];
        }

        if phase == Phase::Train {
            let unbias = if n > 1 { T::from_usize(n).unwrap() / T::from_usize(n - 1).unwrap() } else { T::one() };
            self.record_batch_stats(BatchStats {
                tag: running.tag,
                mean: mean.clone(),
                var: var_biased.iter().map(|&v| v * unbias).collect(),
            });
        }

        let value = NdArray::from_vec(&xs, out)?;
        let rg = self.any_grad(&[input, gamma, beta]);
        let saved = BatchNormSaved { xhat, inv_std, channels: c, spatial, batch_stats: phase == Phase::Train };
        Ok(self.push(value, Op::BatchNorm { input, gamma, beta, saved }, rg))
    }
}

pub(crate) fn batch_norm_backward<T: Scalar>(dy: &[T], gamma: &[T], s: &BatchNormSaved<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (c, spatial) = (s.channels, s.spatial);
    let n = dy.len() / c;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    // Σ dxhat and Σ dxhat·xhat per channel
    let mut sum_dxhat = vec![T::zero(); c];
    let mut sum_dxhat_xhat = vec![T::zero(); c];
    for (i, (&d, &h)) in dy.iter().zip(&s.xhat).enumerate() {
        let ch = (i / spatial) % c;
        dgamma[ch] += d * h;
        dbeta[ch] += d;
        let dh = d * gamma[ch];
        sum_dxhat[ch] += dh;
        sum_dxhat_xhat[ch] += dh * h;
    }
    let nn = T::from_usize(n).unwrap();
    let dx = dy
        .iter()
        .zip(&s.xhat)
        .enumerate()
        .map(|(i, (&d, &h))| {
            let ch = (i / spatial) % c;
            let dh = d * gamma[ch];
            if s.batch_stats {
                s.inv_std[ch] / nn * (nn * dh - sum_dxhat[ch] - h * sum_dxhat_xhat[ch])
            } else {
                dh * s.inv_std[ch]
            }
        })
        .collect();
    (dx, dgamma, dbeta)
}
