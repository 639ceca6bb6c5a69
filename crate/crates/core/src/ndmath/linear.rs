use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

use super::array::NdArray;
use super::graph::{Graph, Op, Var};

impl<T: Scalar> Graph<T> {
    /// Fully connected layer: `out[b, j] = Σ_i weight[j, i] · input[b, i] + bias[j]`.
    ///
    /// `input` is `B×Din`, `weight` is `Dout×Din`, `bias` is `Dout`.
    pub fn fc(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(input), self.shape(weight));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::dim(format!("fc: input {:?} does not conform to weight {:?}", xs, ws)));
        }
        let (b, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(bias) = bias {
            if self.shape(bias) != [dout] {
                return Err(Error::dim(format!("fc: bias {:?} does not match weight {:?}", self.shape(bias), ws)));
            }
        }
        let mut out = match bias {
            Some(bv) => self.value(bv).data().repeat(b),
            None => vec![T::zero(); b * dout],
        };
        gemm(
            T::one(),
            MatRef::new(self.value(input).data(), b, din),
            MatRef::new(self.value(weight).data(), dout, din).t(),
            T::one(),
            &mut out,
        );
        let value = NdArray::from_vec(&[b, dout], out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(value, Op::Fc { input, weight, bias }, rg))
    }
}
