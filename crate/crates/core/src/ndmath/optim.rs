use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::NdArray;

/// Adam moments for a list of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        Self::with_hyper(sizes, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(sizes: impl IntoIterator<Item = usize>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![T::zero(); n], vec![T::zero(); n])).unzip();
        AdamState { m, v, t: 0, beta1, beta2, eps }
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// Nothing is modified if any gradient is non-finite or mismatched.
    pub fn step(&mut self, params: &mut [&mut NdArray<T>], grads: &[&NdArray<T>], names: &[&str], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || names.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam: {} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != p.len() {
                return Err(Error::Optimizer {
                    name: names[i].to_string(),
                    reason: format!("gradient shape {:?} vs parameter {:?}", g.shape(), p.shape()),
                });
            }
            if !g.all_finite() {
                return Err(Error::Optimizer { name: names[i].to_string(), reason: "non-finite gradient".into() });
            }
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `base_lr · gamma^⌊epoch / step_size⌋`.
pub fn lr_schedule(epoch: usize, base_lr: f64, gamma: f64, step_size: usize) -> f64 {
    base_lr * gamma.powi((epoch / step_size.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = NdArray::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = NdArray::zeros(&[3]);
        let mut st = AdamState::<f64>::new([3]);
        st.step(&mut [&mut p], &[&g], &["w"], 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g0 in [3.0, -0.02, 1e4] {
            let mut p = NdArray::<f64>::scalar(0.0);
            let g = NdArray::scalar(g0);
            let mut st = AdamState::<f64>::new([1]);
            st.step(&mut [&mut p], &[&g], &["w"], 0.01).unwrap();
            assert!((p.item().abs() - 0.01).abs() < 1e-6, "{}", p.item());
            assert_eq!(p.item().signum(), -g0.signum());
        }
    }

    #[test]
    fn two_steps_on_square_match_scalar_oracle() {
        // oracle: scalar Adam on f(w) = w², f'(w) = 2w
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }

        let mut p = NdArray::<f64>::scalar(1.0);
        let mut st = AdamState::<f64>::new([1]);
        for _ in 0..2 {
            let g = NdArray::scalar(2.0 * p.item());
            st.step(&mut [&mut p], &[&g], &["w"], lr).unwrap();
        }
        assert!((p.item() - w).abs() < 1e-8, "{} vs {}", p.item(), w);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = NdArray::<f32>::scalar(1.0);
        let g = NdArray::scalar(f32::NAN);
        let mut st = AdamState::<f32>::new([1]);
        let err = st.step(&mut [&mut p], &[&g], &["conv3.weight"], 0.1).unwrap_err();
        assert!(matches!(&err, Error::Optimizer { name, .. } if name == "conv3.weight"));
        assert_eq!(st.t, 0);
        assert_eq!(p.item(), 1.0);
    }

    #[test]
    fn step_schedule_values() {
        assert_eq!(lr_schedule(0, 0.005, 0.5, 17), 0.005);
        assert_eq!(lr_schedule(16, 0.005, 0.5, 17), 0.005);
        assert_eq!(lr_schedule(17, 0.005, 0.5, 17), 0.0025);
        assert!((lr_schedule(70, 0.005, 0.75, 35) - 0.0028125).abs() < 1e-15);
    }
}
