//! Convolution kernels. Cross-correlation (no kernel flip), zero padding, stride 1
//! for the forward convolutions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

use super::array::NdArray;
use super::graph::{Graph, Op, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.ph + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pw + 1 - self.kw
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TConv1dGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub len: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl TConv1dGeom {
    pub fn out_len(&self) -> usize {
        (self.len - 1) * self.stride + self.k - 2 * self.padding
    }
}

/// Unfold one `C×H×W` image into a `(C·kh·kw) × (H'·W')` patch matrix.
fn im2col<T: Scalar>(x: &[T], g: &Conv2dGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_channels {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oi in 0..oh {
                    let ii = oi as isize + ki as isize - g.ph as isize;
                    let drow = &mut dst[oi * ow..(oi + 1) * ow];
                    if ii < 0 || ii >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, d) in drow.iter_mut().enumerate() {
                        let jj = oj as isize + kj as isize - g.pw as isize;
                        *d = if jj < 0 || jj >= g.w as isize { T::zero() } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back onto a `C×H×W` image.
fn col2im<T: Scalar>(cols: &[T], g: &Conv2dGeom, x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oi in 0..oh {
                    let ii = oi as isize + ki as isize - g.ph as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = c * g.h * g.w + ii as usize * g.w;
                    for oj in 0..ow {
                        let jj = oj as isize + kj as isize - g.pw as isize;
                        if jj >= 0 && jj < g.w as isize {
                            x[base + jj as usize] += src[oi * ow + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], bias: Option<&[T]>, g: &Conv2dGeom) -> Vec<T> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let in_size = g.in_channels * g.h * g.w;
    let out_size = g.out_channels * plane;
    let mut out = vec![T::zero(); g.batch * out_size];
    out.par_chunks_mut(out_size).enumerate().for_each(|(b, ob)| {
        let mut cols = vec![T::zero(); patch * plane];
        im2col(&x[b * in_size..(b + 1) * in_size], g, &mut cols);
        if let Some(bias) = bias {
            for (o, row) in ob.chunks_mut(plane).enumerate() {
                row.fill(bias[o]);
            }
        }
        gemm(T::one(), MatRef::new(k, g.out_channels, patch), MatRef::new(&cols, patch, plane), T::one(), ob);
    });
    out
}

type Grads<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &Conv2dGeom,
    want_x: bool,
    want_k: bool,
    want_b: bool,
) -> Grads<T> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let in_size = g.in_channels * g.h * g.w;
    let out_size = g.out_channels * plane;

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..g.batch)
        .into_par_iter()
        .map(|b| {
            let dyb = &dy[b * out_size..(b + 1) * out_size];
            let dk = want_k.then(|| {
                let mut cols = vec![T::zero(); patch * plane];
                im2col(&x[b * in_size..(b + 1) * in_size], g, &mut cols);
                let mut dk = vec![T::zero(); g.out_channels * patch];
                gemm(
                    T::one(),
                    MatRef::new(dyb, g.out_channels, plane),
                    MatRef::new(&cols, patch, plane).t(),
                    T::zero(),
                    &mut dk,
                );
                dk
            });
            let dx = want_x.then(|| {
                let mut dcols = vec![T::zero(); patch * plane];
                gemm(
                    T::one(),
                    MatRef::new(k, g.out_channels, patch).t(),
                    MatRef::new(dyb, g.out_channels, plane),
                    T::zero(),
                    &mut dcols,
                );
                let mut dx = vec![T::zero(); in_size];
                col2im(&dcols, g, &mut dx);
                dx
            });
            (dx, dk)
        })
        .collect();

    let mut dx_all = want_x.then(|| Vec::with_capacity(g.batch * in_size));
    let mut dk_all = want_k.then(|| vec![T::zero(); g.out_channels * patch]);
    // fixed-order reduction keeps results independent of the thread count
    for (dx, dk) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend(dx);
        }
        if let (Some(all), Some(dk)) = (dk_all.as_mut(), dk) {
            for (a, v) in all.iter_mut().zip(dk) {
                *a += v;
            }
        }
    }
    let db = want_b.then(|| {
        let mut db = vec![T::zero(); g.out_channels];
        for sample in dy.chunks(out_size) {
            for (o, row) in sample.chunks(plane).enumerate() {
                db[o] += row.iter().copied().sum::<T>();
            }
        }
        db
    });
    (dx_all, dk_all, db)
}

pub(crate) fn tconv1d_forward<T: Scalar>(x: &[T], k: &[T], bias: Option<&[T]>, g: &TConv1dGeom) -> Vec<T> {
    let lo = g.out_len();
    let mut out = vec![T::zero(); g.batch * g.out_channels * lo];
    for b in 0..g.batch {
        let ob = &mut out[b * g.out_channels * lo..(b + 1) * g.out_channels * lo];
        if let Some(bias) = bias {
            for (o, row) in ob.chunks_mut(lo).enumerate() {
                row.fill(bias[o]);
            }
        }
        for c in 0..g.in_channels {
            let xr = &x[(b * g.in_channels + c) * g.len..(b * g.in_channels + c + 1) * g.len];
            for o in 0..g.out_channels {
                let kr = &k[(c * g.out_channels + o) * g.k..(c * g.out_channels + o + 1) * g.k];
                let orow = &mut ob[o * lo..(o + 1) * lo];
                for (i, &xv) in xr.iter().enumerate() {
                    for (m, &kv) in kr.iter().enumerate() {
                        let j = (i * g.stride + m) as isize - g.padding as isize;
                        if j >= 0 && (j as usize) < lo {
                            orow[j as usize] += xv * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn tconv1d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &TConv1dGeom,
    want_x: bool,
    want_k: bool,
    want_b: bool,
) -> Grads<T> {
    let lo = g.out_len();
    let mut dx = want_x.then(|| vec![T::zero(); x.len()]);
    let mut dk = want_k.then(|| vec![T::zero(); k.len()]);
    for b in 0..g.batch {
        for c in 0..g.in_channels {
            let xi = (b * g.in_channels + c) * g.len;
            for o in 0..g.out_channels {
                let ki = (c * g.out_channels + o) * g.k;
                let dyr = &dy[(b * g.out_channels + o) * lo..(b * g.out_channels + o + 1) * lo];
                for i in 0..g.len {
                    for m in 0..g.k {
                        let j = (i * g.stride + m) as isize - g.padding as isize;
                        if j < 0 || j as usize >= lo {
                            continue;
                        }
                        let d = dyr[j as usize];
                        if let Some(dx) = dx.as_mut() {
                            dx[xi + i] += d * k[ki + m];
                        }
                        if let Some(dk) = dk.as_mut() {
                            dk[ki + m] += d * x[xi + i];
                        }
                    }
                }
            }
        }
    }
    let db = want_b.then(|| {
        let mut db = vec![T::zero(); g.out_channels];
        for (r, row) in dy.chunks(lo).enumerate() {
            db[r % g.out_channels] += row.iter().copied().sum::<T>();
        }
        db
    });
    (dx, dk, db)
}

impl<T: Scalar> Graph<T> {
    /// 2-D cross-correlation of `B×C×H×W` with `C'×C×kh×kw` kernels, stride 1,
    /// zero padding `(ph, pw)`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: (usize, usize)) -> Result<Var> {
        let (xs, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::dim(format!("conv2d: input {:?} does not conform to kernels {:?}", xs, ks)));
        }
        let geom = Conv2dGeom {
            batch: xs[0],
            in_channels: xs[1],
            out_channels: ks[0],
            h: xs[2],
            w: xs[3],
            kh: ks[2],
            kw: ks[3],
            ph: padding.0,
            pw: padding.1,
        };
        if geom.kh > geom.h + 2 * geom.ph || geom.kw > geom.w + 2 * geom.pw || geom.kh == 0 || geom.kw == 0 {
            return Err(Error::dim(format!(
                "conv2d: kernel {}×{} larger than padded input {}×{}",
                geom.kh,
                geom.kw,
                geom.h + 2 * geom.ph,
                geom.w + 2 * geom.pw
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [geom.out_channels] {
                return Err(Error::dim(format!("conv2d: bias {:?} vs {} output channels", self.shape(b), geom.out_channels)));
            }
        }
        let out = conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = NdArray::from_vec(&[geom.batch, geom.out_channels, geom.out_h(), geom.out_w()], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom }, rg))
    }

    /// 1-D cross-correlation of `B×C×L` with `C'×C×k` kernels, stride 1, zero padding `p`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 3 || ks.len() != 3 {
            return Err(Error::dim(format!("conv1d: input {:?} does not conform to kernels {:?}", xs, ks)));
        }
        let x4 = self.reshape(input, &[xs[0], xs[1], 1, xs[2]])?;
        let k4 = self.reshape(kernel, &[ks[0], ks[1], 1, ks[2]])?;
        let y = self.conv2d(x4, k4, bias, (0, padding))?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, &[ys[0], ys[1], ys[3]])
    }

    /// Transposed 1-D convolution of `B×C×L` with `C×C'×k` kernels:
    /// `L' = (L−1)·stride − 2·padding + k`.
    pub fn transpose_conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 3 || ks.len() != 3 || xs[1] != ks[0] || stride == 0 || xs[2] == 0 {
            return Err(Error::dim(format!("transpose_conv1d: input {:?} does not conform to kernels {:?}", xs, ks)));
        }
        let full = (xs[2] - 1) * stride + ks[2];
        if full <= 2 * padding {
            return Err(Error::dim(format!(
                "transpose_conv1d: output length {} − 2·{} is not positive",
                full, padding
            )));
        }
        let geom = TConv1dGeom {
            batch: xs[0],
            in_channels: xs[1],
            out_channels: ks[1],
            len: xs[2],
            k: ks[2],
            stride,
            padding,
        };
        if let Some(b) = bias {
            if self.shape(b) != [geom.out_channels] {
                return Err(Error::dim(format!("transpose_conv1d: bias {:?}", self.shape(b))));
            }
        }
        let out = tconv1d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = NdArray::from_vec(&[geom.batch, geom.out_channels, geom.out_len()], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(value, Op::TConv1d { input, kernel, bias, geom }, rg))
    }
}
