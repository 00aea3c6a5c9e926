use crate::error::{Error, Result};
use crate::layers::{leaky_relu, leaky_relu_backward, Linear, Param, Parameterized};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::{patchify, unpatchify};

/// Shared encoder: stride-`s` patchify, then two per-patch linear layers
/// with a leaky ReLU between them. Maps `N x H x W x C` to
/// `N x H/s x W/s x f_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub stride: usize,
    pub slope: f64,
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    input_dims: Vec<usize>,
    patches: Tensor,
    pre: Tensor,
    hidden: Tensor,
}

impl Encoder {
    pub fn new(stride: usize, in_channels: usize, hidden: usize, f_d: usize, slope: f64, rng: &mut SeededRng) -> Self {
        Encoder {
            stride,
            slope,
            l1: Linear::new(stride * stride * in_channels, hidden, rng),
            l2: Linear::new(hidden, f_d, rng),
        }
    }

    pub fn f_d(&self) -> usize {
        self.l2.out_dim()
    }

    pub fn forward(&self, images: &Tensor) -> Result<(Tensor, EncoderCache)> {
        let &[n, h, w, _] = images.dims() else {
            return Err(Error::shape("encoder_forward", images.dims(), &[0, 0, 0, 0]));
        };
        let patches = patchify(images, self.stride)?;
        let pre = self.l1.forward(&patches)?;
        let hidden = leaky_relu(&pre, self.slope);
        let out = self.l2.forward(&hidden)?;
        out.ensure_finite("encoder_forward")?;
        let map = out.reshape(&[n, h / self.stride, w / self.stride, self.f_d()])?;
        Ok((
            map,
            EncoderCache {
                input_dims: images.dims().to_vec(),
                patches,
                pre,
                hidden,
            },
        ))
    }

    /// Accumulates parameter grads; returns the gradient w.r.t. the images.
    pub fn backward(&mut self, cache: &EncoderCache, grad_map: &Tensor) -> Result<Tensor> {
        let g = super::flatten_rows(grad_map);
        let g_hidden = self.l2.backward(&cache.hidden, &g)?;
        let g_pre = leaky_relu_backward(&cache.pre, &g_hidden, self.slope)?;
        let g_patches = self.l1.backward(&cache.patches, &g_pre)?;
        unpatchify(&g_patches, &cache.input_dims, self.stride)
    }
}

impl Parameterized for Encoder {
    fn params(&mut self) -> Vec<Param<'_>> {
        let mut v = self.l1.params_named("encoder.l1");
        v.extend(self.l2.params_named("encoder.l2"));
        v
    }
}
