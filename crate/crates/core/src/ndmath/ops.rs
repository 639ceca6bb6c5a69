//! Element-wise, shape and loss operations recorded on a [`Graph`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::NdArray;
use super::graph::{swap_last2_data, Graph, Op, Var};

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = NdArray::from_vec(x.shape(), data).expect("same shape");
        let rg = self.any_grad(&[a, b]);
        self.push(value, op, rg)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |p, q| p + q))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |p, q| p - q))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |p, q| p * q))
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim(format!("add_broadcast: {:?} does not end with {:?}", sa, sb)));
        }
        let bv = self.value(b).data().to_vec();
        let x = self.value(a);
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(bv.len()) {
            for (d, &v) in chunk.iter_mut().zip(&bv) {
                *d += v;
            }
        }
        let value = NdArray::from_vec(x.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::AddBroadcast(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a, c), |v| v * c)
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |v| v.tanh())
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Swap the last two axes (`…×R×C → …×C×R`).
    pub fn swap_last2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::dim(format!("swap_last2 needs rank ≥ 2, got {:?}", s)));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let data = swap_last2_data(self.value(a).data(), r, c);
        let mut ns = s.clone();
        let n = ns.len();
        ns.swap(n - 2, n - 1);
        let value = NdArray::from_vec(&ns, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SwapLast2(a), rg))
    }

    /// Slice `[start, start+len)` of the last axis.
    pub fn narrow_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let full = *s.last().ok_or_else(|| Error::dim("narrow_last on a scalar"))?;
        if start + len > full || len == 0 {
            return Err(Error::dim(format!("narrow_last [{start}, {}) out of extent {full}", start + len)));
        }
        let data = self.value(a).data().chunks(full).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let mut ns = s;
        *ns.last_mut().unwrap() = len;
        let value = NdArray::from_vec(&ns, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::NarrowLast { input: a, start }, rg))
    }

    /// Stack `n` arrays of shape `B×…` into `B×n×…`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("stack of zero arrays"))?;
        let s0 = self.shape(first).to_vec();
        if s0.is_empty() {
            return Err(Error::dim("stack needs a leading batch axis"));
        }
        for p in parts {
            if self.shape(*p) != s0.as_slice() {
                return Err(Error::dim(format!("stack: {:?} vs {:?}", self.shape(*p), s0)));
            }
        }
        let b = s0[0];
        let d = self.value(first).len() / b.max(1);
        let mut data = Vec::with_capacity(b * d * parts.len());
        for i in 0..b {
            for p in parts {
                data.extend_from_slice(&self.value(*p).data()[i * d..(i + 1) * d]);
            }
        }
        let mut ns = vec![b, parts.len()];
        ns.extend_from_slice(&s0[1..]);
        let value = NdArray::from_vec(&ns, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::Stack(parts.to_vec()), rg))
    }

    /// Nearest-neighbour upsampling of the last axis: `(a, b) → (a, a, b, b)`.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.last().copied().unwrap_or(0) == 0 {
            return Err(Error::dim(format!("upsample2x needs a nonempty last axis, got {:?}", s)));
        }
        let data = self.value(a).data().iter().flat_map(|&v| [v, v]).collect();
        let mut ns = s;
        *ns.last_mut().unwrap() *= 2;
        let value = NdArray::from_vec(&ns, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Upsample2x(a), rg))
    }

    /// Running sum over axis 1 of a `B×T×D` array.
    pub fn cumsum_time(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(format!("cumsum_time expects B×T×D, got {:?}", s)));
        }
        let (steps, d) = (s[1], s[2]);
        let mut data = self.value(a).data().to_vec();
        for seq in data.chunks_mut(steps * d) {
            for t in 1..steps {
                for k in 0..d {
                    let prev = seq[(t - 1) * d + k];
                    seq[t * d + k] += prev;
                }
            }
        }
        let value = NdArray::from_vec(&s, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::CumsumTime(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = NdArray::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Mean Euclidean distance between `pred` (`…×2`) and a fixed target.
    ///
    /// The gradient at zero distance is taken as zero.
    pub fn ade_loss(&mut self, pred: Var, target: &NdArray<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape().last() != Some(&2) {
            return Err(Error::dim(format!("ade_loss: prediction {:?} vs target {:?}", p.shape(), target.shape())));
        }
        let n = p.len() / 2;
        let total: T = p
            .data()
            .chunks(2)
            .zip(target.data().chunks(2))
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .sum();
        let value = NdArray::scalar(total / T::from_usize(n).unwrap());
        let rg = self.any_grad(&[pred]);
        Ok(self.push(value, Op::AdeLoss { pred, target: target.clone() }, rg))
    }
}
