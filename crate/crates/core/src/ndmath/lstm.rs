use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::graph::{Graph, Var};

/// Parameters of one LSTM cell, gates stacked in the order input, forget,
/// candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    /// `4H × Din`
    pub w_ih: Var,
    /// `4H × H`
    pub w_hh: Var,
    /// `4H`
    pub bias: Var,
}

impl<T: Scalar> Graph<T> {
    /// One LSTM step.
    ///
    /// `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
    pub fn lstm_step(&mut self, x: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
        let hs = self.shape(h).to_vec();
        let four_h = self.shape(p.w_ih)[0];
        if hs.len() != 2 || four_h != 4 * hs[1] || self.shape(c) != hs.as_slice() || self.shape(p.w_hh) != [four_h, hs[1]] {
            return Err(Error::dim(format!(
                "lstm_step: h {:?}, c {:?}, w_ih {:?}, w_hh {:?}",
                hs,
                self.shape(c),
                self.shape(p.w_ih),
                self.shape(p.w_hh)
            )));
        }
        let hidden = hs[1];
        let zx = self.fc(x, p.w_ih, Some(p.bias))?;
        let zh = self.fc(h, p.w_hh, None)?;
        let z = self.add(zx, zh)?;
        let i = self.narrow_last(z, 0, hidden)?;
        let f = self.narrow_last(z, hidden, hidden)?;
        let g = self.narrow_last(z, 2 * hidden, hidden)?;
        let o = self.narrow_last(z, 3 * hidden, hidden)?;
        let (i, f, g, o) = (self.sigmoid(i), self.sigmoid(f), self.tanh(g), self.sigmoid(o));
        let fc_ = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_next = self.add(fc_, ig)?;
        let tc = self.tanh(c_next);
        let h_next = self.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::NdArray;

    fn zeros_cell(g: &mut Graph<f64>, din: usize, hidden: usize) -> LstmVars {
        LstmVars {
            w_ih: g.constant(NdArray::zeros(&[4 * hidden, din])),
            w_hh: g.constant(NdArray::zeros(&[4 * hidden, hidden])),
            bias: g.constant(NdArray::zeros(&[4 * hidden])),
        }
    }

    #[test]
    fn zero_params_zero_state() {
        let mut g = Graph::<f64>::new();
        let p = zeros_cell(&mut g, 3, 4);
        let x = g.constant(NdArray::from_f64(&[1, 3], &[5.0, -2.0, 1.0]).unwrap());
        let h = g.constant(NdArray::zeros(&[1, 4]));
        let c = g.constant(NdArray::zeros(&[1, 4]));
        let (h2, c2) = g.lstm_step(x, h, c, &p).unwrap();
        assert!(g.value(h2).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_and_closed_input_keep_cell() {
        let hidden = 2;
        let mut g = Graph::<f64>::new();
        let mut bias = vec![0.0; 4 * hidden];
        bias[..hidden].fill(-50.0); // input gate shut
        bias[hidden..2 * hidden].fill(50.0); // forget gate open
        let p = LstmVars {
            w_ih: g.constant(NdArray::zeros(&[4 * hidden, 1])),
            w_hh: g.constant(NdArray::zeros(&[4 * hidden, hidden])),
            bias: g.constant(NdArray::from_f64(&[4 * hidden], &bias).unwrap()),
        };
        let x = g.constant(NdArray::from_f64(&[1, 1], &[3.0]).unwrap());
        let h = g.constant(NdArray::from_f64(&[1, 2], &[0.2, -0.1]).unwrap());
        let c = g.constant(NdArray::from_f64(&[1, 2], &[0.7, -1.3]).unwrap());
        let (_, c2) = g.lstm_step(x, h, c, &p).unwrap();
        for (a, b) in g.value(c2).data().iter().zip([0.7, -1.3]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let p = zeros_cell(&mut g, 3, 4);
        let x = g.constant(NdArray::zeros(&[1, 3]));
        let h = g.constant(NdArray::zeros(&[1, 5]));
        let c = g.constant(NdArray::zeros(&[1, 5]));
        assert!(matches!(g.lstm_step(x, h, c, &p), Err(Error::Dimension(_))));
    }
}
