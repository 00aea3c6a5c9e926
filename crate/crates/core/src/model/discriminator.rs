use crate::error::{Error, Result};
use crate::layers::{leaky_relu, leaky_relu_backward, Linear, Param, Parameterized};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::{patchify, unpatchify};

/// Patch discriminator over source-space probability maps.
///
/// Each stage is a stride-2 patch-linear layer (a non-overlapping 2x2
/// convolution) followed by a leaky ReLU; a linear head reduces the final
/// map to one raw score per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub slope: f64,
    pub layers: Vec<Linear>,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct DiscCache {
    /// Per stage: input map dims, patchified input, pre-activation.
    stages: Vec<(Vec<usize>, Tensor, Tensor)>,
    final_dims: Vec<usize>,
    flat: Tensor,
}

const STAGE_STRIDE: usize = 2;

impl Discriminator {
    pub fn new(
        in_channels: usize,
        channels: &[usize],
        height: usize,
        width: usize,
        slope: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let mut layers = Vec::with_capacity(channels.len());
        let mut c_in = in_channels;
        for &c in channels {
            layers.push(Linear::new(STAGE_STRIDE * STAGE_STRIDE * c_in, c, rng));
            c_in = c;
        }
        let reduce = 1usize << channels.len();
        let head = Linear::new((height / reduce) * (width / reduce) * c_in, 1, rng);
        Discriminator { slope, layers, head }
    }

    /// One raw score per image, shape `[N]`.
    pub fn forward(&self, probs: &Tensor) -> Result<(Tensor, DiscCache)> {
        if probs.dims().len() != 4 {
            return Err(Error::shape("discriminator_forward", probs.dims(), &[0, 0, 0, 0]));
        }
        let mut x = probs.clone();
        let mut stages = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let &[n, h, w, _] = x.dims() else { unreachable!() };
            let patches = patchify(&x, STAGE_STRIDE)?;
            let pre = layer.forward(&patches)?;
            let act = leaky_relu(&pre, self.slope);
            let next = act.reshape(&[n, h / STAGE_STRIDE, w / STAGE_STRIDE, layer.out_dim()])?;
            stages.push((x.dims().to_vec(), patches, pre));
            x = next;
        }
        let n = x.dims()[0];
        let final_dims = x.dims().to_vec();
        let flat = x.reshape(&[n, final_dims[1..].iter().product()])?;
        let scores = self.head.forward(&flat)?.reshape(&[n])?;
        scores.ensure_finite("discriminator_forward")?;
        Ok((
            scores,
            DiscCache {
                stages,
                final_dims,
                flat,
            },
        ))
    }

    /// Walks the chain backwards, reporting `(layer, input, grad_out)` for
    /// each linear stage (`None` = head) and returning the input gradient.
    fn chain(
        &self,
        cache: &DiscCache,
        grad_scores: &Tensor,
        mut visit: impl FnMut(Option<usize>, &Tensor, &Tensor),
    ) -> Result<Tensor> {
        let n = cache.flat.rows();
        if grad_scores.len() != n {
            return Err(Error::shape("discriminator_backward", grad_scores.dims(), &[n]));
        }
        let g = grad_scores.clone().reshape(&[n, 1])?;
        visit(None, &cache.flat, &g);
        let mut grad = self.head.backward_input(&g)?.reshape(&cache.final_dims)?;
        for (i, (layer, (in_dims, patches, pre))) in self.layers.iter().zip(&cache.stages).enumerate().rev() {
            let g_act = super::flatten_rows(&grad);
            let g_pre = leaky_relu_backward(pre, &g_act, self.slope)?;
            visit(Some(i), patches, &g_pre);
            let g_patches = layer.backward_input(&g_pre)?;
            grad = unpatchify(&g_patches, in_dims, STAGE_STRIDE)?;
        }
        Ok(grad)
    }

    /// Input gradient only; the discriminator's own grad buffers are untouched.
    pub fn backward_input(&self, cache: &DiscCache, grad_scores: &Tensor) -> Result<Tensor> {
        self.chain(cache, grad_scores, |_, _, _| {})
    }

    /// Accumulates parameter grads and returns the input gradient.
    pub fn backward(&mut self, cache: &DiscCache, grad_scores: &Tensor) -> Result<Tensor> {
        let mut pending = Vec::with_capacity(self.layers.len() + 1);
        let grad = self.chain(cache, grad_scores, |i, x, g| pending.push((i, x.clone(), g.clone())))?;
        for (i, x, g) in pending {
            match i {
                None => self.head.accumulate_grads(&x, &g)?,
                Some(i) => self.layers[i].accumulate_grads(&x, &g)?,
            }
        }
        Ok(grad)
    }
}

impl Parameterized for Discriminator {
    fn params(&mut self) -> Vec<Param<'_>> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            v.extend(l.params_named(&format!("disc.l{}", i + 1)));
        }
        v.extend(self.head.params_named("disc.head"));
        v
    }
}
