use crate::error::Result;
use crate::layers::{Linear, Param, Parameterized};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::flatten_rows;

/// Per-cell linear map `f_d -> f_e` into the clustering space.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTransform {
    pub linear: Linear,
}

#[derive(Clone, Debug)]
pub struct FtnCache {
    input: Tensor,
    map_dims: Vec<usize>,
}

impl FeatureTransform {
    pub fn new(f_d: usize, f_e: usize, rng: &mut SeededRng) -> Self {
        FeatureTransform {
            linear: Linear::new(f_d, f_e, rng),
        }
    }

    pub fn f_e(&self) -> usize {
        self.linear.out_dim()
    }

    pub fn forward(&self, map: &Tensor) -> Result<(Tensor, FtnCache)> {
        let input = flatten_rows(map);
        let out = self.linear.forward(&input)?;
        out.ensure_finite("ftn_forward")?;
        let mut dims = map.dims().to_vec();
        *dims.last_mut().unwrap() = self.f_e();
        Ok((
            out.reshape(&dims)?,
            FtnCache {
                input,
                map_dims: map.dims().to_vec(),
            },
        ))
    }

    /// `grad_emb` may be `N x h x w x f_e` or the flattened `M x f_e` rows.
    pub fn backward(&mut self, cache: &FtnCache, grad_emb: &Tensor) -> Result<Tensor> {
        let g = self.linear.backward(&cache.input, &flatten_rows(grad_emb))?;
        g.reshape(&cache.map_dims)
    }
}

impl Parameterized for FeatureTransform {
    fn params(&mut self) -> Vec<Param<'_>> {
        self.linear.params_named("ftn")
    }
}
