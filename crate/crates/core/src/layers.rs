//! Parameterized building blocks with explicit forward and backward passes.
//!
//! Backward passes accumulate into per-layer gradient buffers; callers
//! zero them between optimizer steps.

use crate::error::{Error, Result};
use crate::rng::{uniform, SeededRng};
use crate::tensor::Tensor;

/// A named view of one parameter tensor and its gradient buffer.
pub struct Param<'a> {
    pub name: String,
    pub value: &'a mut Tensor,
    pub grad: &'a mut Tensor,
}

/// Anything that owns trainable tensors.
pub trait Parameterized {
    fn params(&mut self) -> Vec<Param<'_>>;

    fn zero_grad(&mut self) {
        for p in self.params() {
            p.grad.fill(0.0);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim).map(|_| uniform(rng, -bound, bound)).collect();
        let mut layer = Linear::zeros(in_dim, out_dim);
        layer.weight = Tensor::from_vec(&[out_dim, in_dim], data).expect("weight dims");
        layer
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
            grad_weight: Tensor::zeros(&[out_dim, in_dim]),
            grad_bias: Tensor::zeros(&[out_dim]),
        }
    }

    /// Builds a layer from explicit weights (`out x in`) and bias (`out`).
    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.dims().len() != 2 || bias.dims() != [weight.dims()[0]] {
            return Err(Error::shape("Linear::from_parts", weight.dims(), bias.dims()));
        }
        let grad_weight = Tensor::zeros(weight.dims());
        let grad_bias = Tensor::zeros(bias.dims());
        Ok(Linear {
            weight,
            bias,
            grad_weight,
            grad_bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.dims().len() != 2 || x.dims()[1] != self.in_dim() {
            return Err(Error::shape("linear_forward", x.dims(), self.weight.dims()));
        }
        Ok(())
    }

    /// `out[b, o] = sum_i weight[o, i] * x[b, i] + bias[o]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (n, out) = (x.rows(), self.out_dim());
        let w = self.weight.data();
        let bias = self.bias.data();
        let mut y = Vec::with_capacity(n * out);
        for b in 0..n {
            let xr = x.row(b);
            for o in 0..out {
                let wr = &w[o * xr.len()..(o + 1) * xr.len()];
                y.push(dot(wr, xr) + bias[o]);
            }
        }
        Tensor::from_vec(&[n, out], y)
    }

    /// Gradient with respect to the input only; parameter grads untouched.
    pub fn backward_input(&self, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.dims().len() != 2 || grad_out.dims()[1] != self.out_dim() {
            return Err(Error::shape("linear_backward", grad_out.dims(), self.weight.dims()));
        }
        let (n, inp) = (grad_out.rows(), self.in_dim());
        let w = self.weight.data();
        let mut gx = vec![0.0; n * inp];
        for b in 0..n {
            let gi = &mut gx[b * inp..(b + 1) * inp];
            for (o, &g) in grad_out.row(b).iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &w[o * inp..(o + 1) * inp], gi);
                }
            }
        }
        Tensor::from_vec(&[n, inp], gx)
    }

    /// `grad_weight += grad_out^T x`, `grad_bias += sum_b grad_out`.
    pub fn accumulate_grads(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<()> {
        self.check_input(x)?;
        if grad_out.dims() != [x.rows(), self.out_dim()] {
            return Err(Error::shape(
                "linear_backward",
                grad_out.dims(),
                &[x.rows(), self.out_dim()],
            ));
        }
        let inp = self.in_dim();
        let gw = self.grad_weight.data_mut();
        let gb = self.grad_bias.data_mut();
        for b in 0..x.rows() {
            let xr = x.row(b);
            for (o, &g) in grad_out.row(b).iter().enumerate() {
                if g != 0.0 {
                    axpy(g, xr, &mut gw[o * inp..(o + 1) * inp]);
                    gb[o] += g;
                }
            }
        }
        Ok(())
    }

    /// Accumulates parameter grads and returns `grad_out * weight`.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        self.accumulate_grads(x, grad_out)?;
        self.backward_input(grad_out)
    }

    pub fn params_named(&mut self, prefix: &str) -> Vec<Param<'_>> {
        vec![
            Param {
                name: format!("{prefix}.weight"),
                value: &mut self.weight,
                grad: &mut self.grad_weight,
            },
            Param {
                name: format!("{prefix}.bias"),
                value: &mut self.bias,
                grad: &mut self.grad_bias,
            },
        ]
    }
}

impl Parameterized for Linear {
    fn params(&mut self) -> Vec<Param<'_>> {
        self.params_named("linear")
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// `max(x, slope * x)` elementwise.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > 0.0 { *v } else { slope * *v });
    y
}

/// Gradient of [`leaky_relu`]; at exactly zero the slope branch is taken.
pub fn leaky_relu_backward(x: &Tensor, grad_out: &Tensor, slope: f64) -> Result<Tensor> {
    if x.dims() != grad_out.dims() {
        return Err(Error::shape("leaky_relu_backward", x.dims(), grad_out.dims()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xi, &g)| if xi > 0.0 { g } else { slope * g })
        .collect();
    Tensor::from_vec(x.dims(), data)
}

/// Softmax over the last axis with max-shift.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let k = out.cols();
    for row in out.data_mut().chunks_mut(k) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Pulls a gradient with respect to softmax outputs back to the logits:
/// `g_logit = p * (g - <p, g>)`, row by row.
pub fn softmax_backward(probs: &Tensor, grad_probs: &Tensor) -> Result<Tensor> {
    if probs.dims() != grad_probs.dims() {
        return Err(Error::shape("softmax_backward", probs.dims(), grad_probs.dims()));
    }
    let k = probs.cols();
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks(k).zip(grad_probs.data().chunks(k)) {
        let inner = dot(p, g);
        out.extend(p.iter().zip(g).map(|(pi, gi)| pi * (gi - inner)));
    }
    Tensor::from_vec(probs.dims(), out)
}
