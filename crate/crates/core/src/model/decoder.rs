use crate::error::{Error, Result};
use crate::layers::{softmax, softmax_backward, Linear, Param, Parameterized};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::flatten_rows;

/// Task decoder: per-cell linear classifier, nearest-neighbour upsampling
/// by the encoder stride, then a per-pixel softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub stride: usize,
    pub linear: Linear,
}

#[derive(Clone, Debug)]
pub struct DecoderCache {
    input: Tensor,
    cell_probs: Tensor,
    map_dims: Vec<usize>,
}

impl Decoder {
    pub fn new(stride: usize, f_d: usize, n_classes: usize, rng: &mut SeededRng) -> Self {
        Decoder {
            stride,
            linear: Linear::new(f_d, n_classes, rng),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.linear.out_dim()
    }

    fn map_shape(map: &Tensor) -> Result<(usize, usize, usize)> {
        match *map.dims() {
            [n, h, w, _] => Ok((n, h, w)),
            _ => Err(Error::shape("decoder_forward", map.dims(), &[0, 0, 0, 0])),
        }
    }

    /// Returns the `N x H x W x C` probability map.
    pub fn forward(&self, map: &Tensor) -> Result<(Tensor, DecoderCache)> {
        let (n, h, w) = Self::map_shape(map)?;
        let input = flatten_rows(map);
        let logits = self.linear.forward(&input)?;
        let cell_probs = softmax(&logits);
        cell_probs.ensure_finite("decoder_forward")?;
        let probs = self.upsample(&cell_probs, n, h, w)?;
        Ok((
            probs,
            DecoderCache {
                input,
                cell_probs,
                map_dims: map.dims().to_vec(),
            },
        ))
    }

    fn upsample(&self, cells: &Tensor, n: usize, h: usize, w: usize) -> Result<Tensor> {
        let (s, c) = (self.stride, cells.cols());
        let (hh, ww) = (h * s, w * s);
        let mut out = Vec::with_capacity(n * hh * ww * c);
        for b in 0..n {
            for y in 0..hh {
                for x in 0..ww {
                    out.extend_from_slice(cells.row((b * h + y / s) * w + x / s));
                }
            }
        }
        Tensor::from_vec(&[n, hh, ww, c], out)
    }

    /// Sums a pixel-level gradient over each cell's `s x s` block.
    fn downsample_sum(&self, grad: &Tensor, cache: &DecoderCache) -> Result<Tensor> {
        let (n, h, w) = (cache.map_dims[0], cache.map_dims[1], cache.map_dims[2]);
        let (s, c) = (self.stride, self.n_classes());
        if grad.dims() != [n, h * s, w * s, c] {
            return Err(Error::shape("decoder_backward", grad.dims(), &[n, h * s, w * s, c]));
        }
        let mut cells = Tensor::zeros(&[n * h * w, c]);
        for b in 0..n {
            for y in 0..h * s {
                for x in 0..w * s {
                    let src = grad.row((b * h * s + y) * w * s + x);
                    let dst = cells.row_mut((b * h + y / s) * w + x / s);
                    dst.iter_mut().zip(src).for_each(|(d, g)| *d += g);
                }
            }
        }
        Ok(cells)
    }

    /// Backward from a gradient w.r.t. the pixel logits (pre-softmax).
    pub fn backward_logits(&mut self, cache: &DecoderCache, grad_logits: &Tensor) -> Result<Tensor> {
        let g = self.downsample_sum(grad_logits, cache)?;
        self.linear.backward(&cache.input, &g)?.reshape(&cache.map_dims)
    }

    /// Backward from a gradient w.r.t. the pixel probabilities.
    pub fn backward_probs(&mut self, cache: &DecoderCache, grad_probs: &Tensor) -> Result<Tensor> {
        let g = self.downsample_sum(grad_probs, cache)?;
        let g = softmax_backward(&cache.cell_probs, &g)?;
        self.linear.backward(&cache.input, &g)?.reshape(&cache.map_dims)
    }

    /// Per-pixel argmax labels, `N x H x W` flattened.
    pub fn predict(&self, map: &Tensor) -> Result<Vec<u16>> {
        let (n, h, w) = Self::map_shape(map)?;
        let logits = self.linear.forward(&flatten_rows(map))?;
        let s = self.stride;
        let cell_label: Vec<u16> = (0..logits.rows()).map(|r| argmax(logits.row(r)) as u16).collect();
        let mut out = Vec::with_capacity(n * h * s * w * s);
        for b in 0..n {
            for y in 0..h * s {
                for x in 0..w * s {
                    out.push(cell_label[(b * h + y / s) * w + x / s]);
                }
            }
        }
        Ok(out)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Parameterized for Decoder {
    fn params(&mut self) -> Vec<Param<'_>> {
        self.linear.params_named("decoder")
    }
}
