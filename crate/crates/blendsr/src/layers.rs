//! Differentiable primitive layers: convolution, transposed convolution and
//! the three activations, each with an analytic backward pass.
//!
//! Convolutions are realized as im2col patch matrices multiplied by the
//! kernel matrix. The transposed convolution reuses the same three kernels
//! with the roles of input and output swapped, so the forward map is exactly
//! the linear adjoint of the paired strided convolution.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

/// Learnable parameters of one 2-D convolution.
///
/// Weight layout is `(out_channels, in_channels, k, k)` with square odd
/// kernels; bias is optional (the attention reduce layer runs without one).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S = f32> {
    pub weight: Tensor<S>,
    pub bias: Option<Vec<S>>,
    pub stride: usize,
    pub pad: usize,
}

/// Gradients for one [`Conv2d`]; mirrors the parameter layout.
#[derive(Debug, Clone)]
pub struct Conv2dGrad<S = f32> {
    pub weight: Tensor<S>,
    pub bias: Option<Vec<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn from_parts(weight: Tensor<S>, bias: Option<Vec<S>>, stride: usize, pad: usize) -> Result<Self> {
        if weight.h() != weight.w() {
            return Err(Error::Config(format!(
                "convolution kernels must be square, got {}x{}",
                weight.h(),
                weight.w()
            )));
        }
        if weight.h().is_multiple_of(2) {
            return Err(Error::Config(format!("convolution kernel size must be odd, got {}", weight.h())));
        }
        if stride == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        if let Some(b) = &bias {
            if b.len() != weight.n() {
                return Err(Error::Config(format!(
                    "bias length {} does not match out_channels {}",
                    b.len(),
                    weight.n()
                )));
            }
        }
        Ok(Self { weight, bias, stride, pad })
    }

    /// He-style initialization: weights from N(0, 2/fan_in) with
    /// fan_in = in_channels * k^2, biases zero.
    pub fn init<R: Rng>(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, with_bias: bool, rng: &mut R) -> Self {
        let std = S::from_f64((2.0 / (in_c * k * k) as f64).sqrt());
        let weight = Tensor::from_fn(out_c, in_c, k, k, |_, _, _, _| S::standard_normal(rng) * std);
        let bias = with_bias.then(|| vec![S::zero(); out_c]);
        Self::from_parts(weight, bias, stride, pad).expect("init builds a valid layer")
    }

    pub fn in_channels(&self) -> usize {
        self.weight.c()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.n()
    }

    pub fn kernel(&self) -> usize {
        self.weight.h()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn out_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        let span_h = (h + 2 * self.pad).checked_sub(k);
        let span_w = (w + 2 * self.pad).checked_sub(k);
        match (span_h, span_w) {
            (Some(sh), Some(sw)) if sh % self.stride == 0 && sw % self.stride == 0 => {
                Ok((sh / self.stride + 1, sw / self.stride + 1))
            }
            _ => Err(Error::Shape(format!(
                "conv output size not integral: input {h}x{w}, k={k}, stride={}, pad={}",
                self.stride, self.pad
            ))),
        }
    }

    /// out[n,o,i,j] = bias[o] + sum_{c,u,v} weight[o,c,u,v] * x_pad[n,c,i*s+u,j*s+v]
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.c() != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                x.c()
            )));
        }
        let (out_h, out_w) = self.out_spatial(x.h(), x.w())?;
        let out_c = self.out_channels();
        let ckk = self.in_channels() * self.kernel() * self.kernel();
        let span = out_h * out_w;

        let mut out = Tensor::zeros(x.n(), out_c, out_h, out_w);
        let mut col = vec![S::zero(); ckk * span];
        for n in 0..x.n() {
            im2col(x, n, self.kernel(), self.stride, self.pad, out_h, out_w, &mut col);
            let start = out.idx(n, 0, 0, 0);
            S::gemm(out_c, ckk, span, S::one(), self.weight.data(), &col, S::zero(), &mut out.data_mut()[start..start + out_c * span]);
            if let Some(bias) = &self.bias {
                let slab = &mut out.data_mut()[start..start + out_c * span];
                for (o, &b) in bias.iter().enumerate() {
                    for v in &mut slab[o * span..(o + 1) * span] {
                        *v += b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact partial derivatives of sum(grad_out . forward(x)) with respect
    /// to the input, the weights and the bias.
    pub fn backward(&self, x: &Tensor<S>, grad_out: &Tensor<S>) -> Result<(Tensor<S>, Conv2dGrad<S>)> {
        if x.c() != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                x.c()
            )));
        }
        let (out_h, out_w) = self.out_spatial(x.h(), x.w())?;
        let out_c = self.out_channels();
        if grad_out.n() != x.n() || grad_out.c() != out_c || grad_out.h() != out_h || grad_out.w() != out_w {
            return Err(Error::Shape(format!(
                "conv grad_out shape {} does not match forward output (n={}, c={out_c}, h={out_h}, w={out_w})",
                grad_out.shape(),
                x.n()
            )));
        }

        let k = self.kernel();
        let ckk = self.in_channels() * k * k;
        let span = out_h * out_w;

        let mut grad_w = Tensor::zeros(out_c, self.in_channels(), k, k);
        let mut grad_x = Tensor::zeros(x.n(), x.c(), x.h(), x.w());
        let mut col = vec![S::zero(); ckk * span];
        let mut col_grad = vec![S::zero(); ckk * span];
        for n in 0..x.n() {
            let g_start = grad_out.idx(n, 0, 0, 0);
            let g_mat = &grad_out.data()[g_start..g_start + out_c * span];

            // grad_w += g (out_c x span) * col^T (span x ckk)
            im2col(x, n, k, self.stride, self.pad, out_h, out_w, &mut col);
            S::gemm_nt(out_c, span, ckk, S::one(), g_mat, &col, S::one(), grad_w.data_mut());

            // col_grad = W^T (ckk x out_c) * g (out_c x span), scattered back
            S::gemm_tn(ckk, out_c, span, S::one(), self.weight.data(), g_mat, S::zero(), &mut col_grad);
            col2im_accumulate(&mut grad_x, n, k, self.stride, self.pad, out_h, out_w, &col_grad);
        }

        let grad_b = self.bias.as_ref().map(|_| {
            let mut gb = vec![S::zero(); out_c];
            for n in 0..grad_out.n() {
                for (o, acc) in gb.iter_mut().enumerate() {
                    for &g in grad_out.plane(n, o) {
                        *acc += g;
                    }
                }
            }
            gb
        });

        Ok((grad_x, Conv2dGrad { weight: grad_w, bias: grad_b }))
    }
}

/// Learnable parameters of one 2-D transposed convolution.
///
/// Weight layout is `(in_channels, out_channels, k, k)`. The kernel family
/// is constrained to `k - 2*pad == stride`, which makes the output spatial
/// size exactly `stride` times the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconv2d<S = f32> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
    pub stride: usize,
    pub pad: usize,
}

/// Gradients for one [`Deconv2d`].
#[derive(Debug, Clone)]
pub struct Deconv2dGrad<S = f32> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Deconv2d<S> {
    pub fn from_parts(weight: Tensor<S>, bias: Vec<S>, stride: usize, pad: usize) -> Result<Self> {
        if weight.h() != weight.w() {
            return Err(Error::Config(format!(
                "deconvolution kernels must be square, got {}x{}",
                weight.h(),
                weight.w()
            )));
        }
        if stride == 0 {
            return Err(Error::Config("deconvolution stride must be positive".into()));
        }
        if weight.h() != stride + 2 * pad {
            return Err(Error::Config(format!(
                "deconvolution requires k - 2*pad == stride, got k={}, pad={pad}, stride={stride}",
                weight.h()
            )));
        }
        if bias.len() != weight.c() {
            return Err(Error::Config(format!(
                "bias length {} does not match out_channels {}",
                bias.len(),
                weight.c()
            )));
        }
        Ok(Self { weight, bias, stride, pad })
    }

    pub fn init<R: Rng>(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        let std = S::from_f64((2.0 / (in_c * k * k) as f64).sqrt());
        let weight = Tensor::from_fn(in_c, out_c, k, k, |_, _, _, _| S::standard_normal(rng) * std);
        Self::from_parts(weight, vec![S::zero(); out_c], stride, pad).expect("init builds a valid layer")
    }

    pub fn in_channels(&self) -> usize {
        self.weight.n()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.c()
    }

    pub fn kernel(&self) -> usize {
        self.weight.h()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<(usize, usize)> {
        if x.c() != self.in_channels() {
            return Err(Error::Shape(format!(
                "deconv expects {} input channels, got {}",
                self.in_channels(),
                x.c()
            )));
        }
        let out_h = (x.h() - 1) * self.stride + self.kernel() - 2 * self.pad;
        let out_w = (x.w() - 1) * self.stride + self.kernel() - 2 * self.pad;
        Ok((out_h, out_w))
    }

    /// Transpose of the paired strided convolution as a linear map, plus bias.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (out_h, out_w) = self.check_input(x)?;
        let k = self.kernel();
        let out_c = self.out_channels();
        let ckk = out_c * k * k;
        let span = x.h() * x.w();

        let mut out = Tensor::zeros(x.n(), out_c, out_h, out_w);
        let mut col_grad = vec![S::zero(); ckk * span];
        for n in 0..x.n() {
            let x_start = x.idx(n, 0, 0, 0);
            let x_mat = &x.data()[x_start..x_start + self.in_channels() * span];
            S::gemm_tn(ckk, self.in_channels(), span, S::one(), self.weight.data(), x_mat, S::zero(), &mut col_grad);
            col2im_accumulate(&mut out, n, k, self.stride, self.pad, x.h(), x.w(), &col_grad);
        }
        for n in 0..out.n() {
            for (o, &b) in self.bias.iter().enumerate() {
                let start = out.idx(n, o, 0, 0);
                for v in &mut out.data_mut()[start..start + out_h * out_w] {
                    *v += b;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<S>, grad_out: &Tensor<S>) -> Result<(Tensor<S>, Deconv2dGrad<S>)> {
        let (out_h, out_w) = self.check_input(x)?;
        if grad_out.n() != x.n() || grad_out.c() != self.out_channels() || grad_out.h() != out_h || grad_out.w() != out_w {
            return Err(Error::Shape(format!(
                "deconv grad_out shape {} does not match forward output (n={}, c={}, h={out_h}, w={out_w})",
                grad_out.shape(),
                x.n(),
                self.out_channels()
            )));
        }

        let k = self.kernel();
        let ckk = self.out_channels() * k * k;
        let span = x.h() * x.w();

        // grad_x is the paired strided convolution of grad_out.
        let mut grad_x = Tensor::zeros(x.n(), x.c(), x.h(), x.w());
        let mut grad_w = Tensor::zeros(self.weight.n(), self.weight.c(), k, k);
        let mut col = vec![S::zero(); ckk * span];
        for n in 0..x.n() {
            im2col(grad_out, n, k, self.stride, self.pad, x.h(), x.w(), &mut col);
            let gx_start = grad_x.idx(n, 0, 0, 0);
            S::gemm(
                self.in_channels(),
                ckk,
                span,
                S::one(),
                self.weight.data(),
                &col,
                S::zero(),
                &mut grad_x.data_mut()[gx_start..gx_start + self.in_channels() * span],
            );

            let x_start = x.idx(n, 0, 0, 0);
            let x_mat = &x.data()[x_start..x_start + self.in_channels() * span];
            S::gemm_nt(self.in_channels(), span, ckk, S::one(), x_mat, &col, S::one(), grad_w.data_mut());
        }

        let mut grad_b = vec![S::zero(); self.out_channels()];
        for n in 0..grad_out.n() {
            for (o, acc) in grad_b.iter_mut().enumerate() {
                for &g in grad_out.plane(n, o) {
                    *acc += g;
                }
            }
        }

        Ok((grad_x, Deconv2dGrad { weight: grad_w, bias: grad_b }))
    }
}

/// Gathers padded k*k patches of batch element `n` into a `(c*k*k, out_h*out_w)`
/// row-major matrix. Out-of-bounds taps read zero.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(x: &Tensor<S>, n: usize, k: usize, stride: usize, pad: usize, out_h: usize, out_w: usize, col: &mut [S]) {
    let span = out_h * out_w;
    debug_assert_eq!(col.len(), x.c() * k * k * span);
    let (h, w) = (x.h() as isize, x.w() as isize);
    for c in 0..x.c() {
        let plane = x.plane(n, c);
        for u in 0..k {
            for v in 0..k {
                let row = (c * k + u) * k + v;
                let out_row = &mut col[row * span..(row + 1) * span];
                for i in 0..out_h {
                    let y = (i * stride + u) as isize - pad as isize;
                    let base = i * out_w;
                    if y < 0 || y >= h {
                        for val in &mut out_row[base..base + out_w] {
                            *val = S::zero();
                        }
                        continue;
                    }
                    let row_off = y as usize * w as usize;
                    for j in 0..out_w {
                        let xx = (j * stride + v) as isize - pad as isize;
                        out_row[base + j] = if xx < 0 || xx >= w { S::zero() } else { plane[row_off + xx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a `(c*k*k, out_h*out_w)` matrix back
/// into the spatial layout of `dst` for batch element `n`.
#[allow(clippy::too_many_arguments)]
fn col2im_accumulate<S: Scalar>(dst: &mut Tensor<S>, n: usize, k: usize, stride: usize, pad: usize, out_h: usize, out_w: usize, col: &[S]) {
    let span = out_h * out_w;
    debug_assert_eq!(col.len(), dst.c() * k * k * span);
    let (h, w) = (dst.h() as isize, dst.w() as isize);
    let plane_len = dst.h() * dst.w();
    for c in 0..dst.c() {
        let start = dst.idx(n, c, 0, 0);
        let plane = &mut dst.data_mut()[start..start + plane_len];
        for u in 0..k {
            for v in 0..k {
                let row = (c * k + u) * k + v;
                let col_row = &col[row * span..(row + 1) * span];
                for i in 0..out_h {
                    let y = (i * stride + u) as isize - pad as isize;
                    if y < 0 || y >= h {
                        continue;
                    }
                    let row_off = y as usize * w as usize;
                    for j in 0..out_w {
                        let xx = (j * stride + v) as isize - pad as isize;
                        if xx >= 0 && xx < w {
                            plane[row_off + xx as usize] += col_row[i * out_w + j];
                        }
                    }
                }
            }
        }
    }
}

/// max(0, v). The subgradient at exactly 0 is fixed to 0.
pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

pub fn relu_backward<S: Scalar>(x: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu_backward shapes differ: {} vs {}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::from_vec(x.n(), x.c(), x.h(), x.w(), data)
}

/// v if v > 0 else slope[c] * v, one slope per channel.
pub fn prelu_forward<S: Scalar>(x: &Tensor<S>, slopes: &[S]) -> Result<Tensor<S>> {
    if slopes.len() != x.c() {
        return Err(Error::Shape(format!(
            "prelu expects {} slopes (one per channel), got {}",
            x.c(),
            slopes.len()
        )));
    }
    let mut out = x.clone();
    let plane_len = x.h() * x.w();
    for n in 0..x.n() {
        for (c, &slope) in slopes.iter().enumerate() {
            let start = out.idx(n, c, 0, 0);
            for v in &mut out.data_mut()[start..start + plane_len] {
                if *v < S::zero() {
                    *v *= slope;
                }
            }
        }
    }
    Ok(out)
}

/// Returns the input gradient and the per-channel slope gradient.
pub fn prelu_backward<S: Scalar>(x: &Tensor<S>, slopes: &[S], grad_out: &Tensor<S>) -> Result<(Tensor<S>, Vec<S>)> {
    if slopes.len() != x.c() {
        return Err(Error::Shape(format!(
            "prelu expects {} slopes (one per channel), got {}",
            x.c(),
            slopes.len()
        )));
    }
    if x.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "prelu_backward shapes differ: {} vs {}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let mut grad_x = Tensor::zeros(x.n(), x.c(), x.h(), x.w());
    let mut grad_slopes = vec![S::zero(); slopes.len()];
    for n in 0..x.n() {
        for c in 0..x.c() {
            let slope = slopes[c];
            let gx_start = grad_x.idx(n, c, 0, 0);
            let plane_len = x.h() * x.w();
            let xs = x.plane(n, c);
            let gs = grad_out.plane(n, c);
            let gx = &mut grad_x.data_mut()[gx_start..gx_start + plane_len];
            for i in 0..plane_len {
                if xs[i] > S::zero() {
                    gx[i] = gs[i];
                } else {
                    gx[i] = gs[i] * slope;
                    grad_slopes[c] += gs[i] * xs[i];
                }
            }
        }
    }
    Ok((grad_x, grad_slopes))
}

/// 1 / (1 + e^-v)
pub fn sigmoid_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| S::one() / (S::one() + (-v).exp()))
}

pub fn sigmoid_backward<S: Scalar>(x: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "sigmoid_backward shapes differ: {} vs {}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| {
            let s = S::one() / (S::one() + (-v).exp());
            g * s * (S::one() - s)
        })
        .collect();
    Tensor::from_vec(x.n(), x.c(), x.h(), x.w(), data)
}

/// Default PReLU slopes: 0.25 per channel.
pub fn prelu_init<S: Scalar>(channels: usize) -> Vec<S> {
    vec![S::from_f64(0.25); channels]
}
