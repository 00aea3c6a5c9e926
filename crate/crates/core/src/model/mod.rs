//! Network components: shared encoder, per-task decoders, feature
//! transform, discriminator and the trainable cluster bank.
//!
//! Convolutions are expressed as patch-wise linear layers: a stride-`s`
//! patchify followed by a [`Linear`](crate::layers::Linear) applied to
//! every patch, which is exactly a non-overlapping `s x s` convolution.

mod checkpoint;
mod clusters;
mod decoder;
mod discriminator;
mod encoder;
mod ftn;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MANIFEST};
pub use clusters::{Assignment, ClusterBank};
pub(crate) use decoder::argmax as argmax_index;
pub use decoder::{Decoder, DecoderCache};
pub use discriminator::{DiscCache, Discriminator};
pub use encoder::{Encoder, EncoderCache};
pub use ftn::{FeatureTransform, FtnCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Param, Parameterized};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub stride: usize,
    pub hidden: usize,
    pub f_d: usize,
    pub f_e: usize,
    pub k: usize,
    pub n_source_classes: usize,
    pub n_target_classes: usize,
    pub disc_channels: Vec<usize>,
    pub slope: f64,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 16,
            width: 16,
            in_channels: 3,
            stride: 4,
            hidden: 32,
            f_d: 32,
            f_e: 16,
            k: 10,
            n_source_classes: 4,
            n_target_classes: 3,
            disc_channels: vec![8, 16, 16, 16],
            slope: 0.2,
            temperature: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let reduce = 1usize << self.disc_channels.len();
        if self.stride == 0 || !self.height.is_multiple_of(self.stride) || !self.width.is_multiple_of(self.stride) {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} not divisible by encoder stride {}",
                self.height, self.width, self.stride
            )));
        }
        if !self.height.is_multiple_of(reduce) || !self.width.is_multiple_of(reduce) {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} not divisible by discriminator reduction {reduce}",
                self.height, self.width
            )));
        }
        if self.k == 0 || self.f_e == 0 || self.f_d == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("model widths must be positive".into()));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) || self.temperature <= 0.0 {
            return Err(Error::InvalidArgument(
                "slope must lie in (0, 1) and temperature be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn map_height(&self) -> usize {
        self.height / self.stride
    }

    pub fn map_width(&self) -> usize {
        self.width / self.stride
    }
}

/// Rearranges `N x H x W x C` into rows of non-overlapping `s x s` patches:
/// `(N * H/s * W/s) x (s * s * C)`, patch-major, `(dy, dx, c)` within a row.
pub fn patchify(x: &Tensor, s: usize) -> Result<Tensor> {
    let &[n, h, w, c] = x.dims() else {
        return Err(Error::shape("patchify", x.dims(), &[0, 0, 0, 0]));
    };
    if h % s != 0 || w % s != 0 {
        return Err(Error::shape("patchify", x.dims(), &[s, s]));
    }
    let (ph, pw) = (h / s, w / s);
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for b in 0..n {
        for i in 0..ph {
            for j in 0..pw {
                for dy in 0..s {
                    let start = ((b * h + i * s + dy) * w + j * s) * c;
                    out.extend_from_slice(&src[start..start + s * c]);
                }
            }
        }
    }
    Tensor::from_vec(&[n * ph * pw, s * s * c], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(rows: &Tensor, dims: &[usize], s: usize) -> Result<Tensor> {
    let &[n, h, w, c] = dims else {
        return Err(Error::shape("unpatchify", dims, &[0, 0, 0, 0]));
    };
    let (ph, pw) = (h / s, w / s);
    if rows.dims() != [n * ph * pw, s * s * c] {
        return Err(Error::shape("unpatchify", rows.dims(), &[n * ph * pw, s * s * c]));
    }
    let src = rows.data();
    let mut out = vec![0.0; src.len()];
    let mut k = 0;
    for b in 0..n {
        for i in 0..ph {
            for j in 0..pw {
                for dy in 0..s {
                    let start = ((b * h + i * s + dy) * w + j * s) * c;
                    out[start..start + s * c].copy_from_slice(&src[k..k + s * c]);
                    k += s * c;
                }
            }
        }
    }
    Tensor::from_vec(dims, out)
}

/// Views the last axis as columns of a 2-D tensor.
pub(crate) fn flatten_rows(t: &Tensor) -> Tensor {
    let cols = t.cols();
    t.clone().reshape(&[t.len() / cols, cols]).expect("row view")
}

#[derive(Clone, Debug, PartialEq)]
pub struct C2aModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder_s: Decoder,
    pub decoder_t: Decoder,
    pub ftn: FeatureTransform,
    pub disc: Discriminator,
    pub clusters: ClusterBank,
}

impl C2aModel {
    /// Seeded initialization; each layer draws from its own stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let r = |name: &str| rng::rng(seed, &[rng::tag(name)]);
        let c = &config;
        let encoder = Encoder::new(c.stride, c.in_channels, c.hidden, c.f_d, c.slope, &mut r("encoder"));
        let decoder_s = Decoder::new(c.stride, c.f_d, c.n_source_classes, &mut r("decoder_s"));
        let decoder_t = Decoder::new(c.stride, c.f_d, c.n_target_classes, &mut r("decoder_t"));
        let ftn = FeatureTransform::new(c.f_d, c.f_e, &mut r("ftn"));
        let disc = Discriminator::new(
            c.n_source_classes,
            &c.disc_channels,
            c.height,
            c.width,
            c.slope,
            &mut r("disc"),
        );
        let clusters = ClusterBank::random(c.k, c.f_e, c.temperature, &mut r("clusters"));
        Ok(C2aModel {
            config,
            encoder,
            decoder_s,
            decoder_t,
            ftn,
            disc,
            clusters,
        })
    }

    /// Encoder, both decoders and the feature transform.
    pub fn generator_params(&mut self) -> Vec<Param<'_>> {
        let mut v = self.encoder.params();
        v.extend(self.decoder_s.linear.params_named("decoder_s"));
        v.extend(self.decoder_t.linear.params_named("decoder_t"));
        v.extend(self.ftn.linear.params_named("ftn"));
        v
    }

    pub fn cluster_params(&mut self) -> Vec<Param<'_>> {
        self.clusters.params()
    }

    pub fn disc_params(&mut self) -> Vec<Param<'_>> {
        self.disc.params()
    }
}

impl Parameterized for C2aModel {
    fn params(&mut self) -> Vec<Param<'_>> {
        let mut v = self.encoder.params();
        v.extend(self.decoder_s.linear.params_named("decoder_s"));
        v.extend(self.decoder_t.linear.params_named("decoder_t"));
        v.extend(self.ftn.linear.params_named("ftn"));
        v.extend(self.disc.params());
        v.extend(self.clusters.params());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal;

    #[test]
    fn patchify_round_trip_and_layout() {
        let x = Tensor::from_vec(&[1, 4, 4, 1], (0..16).map(f64::from).collect()).unwrap();
        let p = patchify(&x, 2).unwrap();
        assert_eq!(p.dims(), &[4, 4]);
        assert_eq!(p.row(0), &[0., 1., 4., 5.]);
        assert_eq!(p.row(3), &[10., 11., 14., 15.]);
        assert_eq!(unpatchify(&p, x.dims(), 2).unwrap(), x);

        let mut r = rng::rng(2, &[]);
        let x = Tensor::from_vec(&[2, 8, 4, 3], (0..192).map(|_| normal(&mut r)).collect()).unwrap();
        assert_eq!(unpatchify(&patchify(&x, 4).unwrap(), x.dims(), 4).unwrap(), x);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = C2aModel::new(ModelConfig::default(), 5).unwrap();
        let b = C2aModel::new(ModelConfig::default(), 5).unwrap();
        assert_eq!(a, b);
        let c = C2aModel::new(ModelConfig::default(), 6).unwrap();
        assert_ne!(a.encoder, c.encoder);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.height = 12;
        assert!(C2aModel::new(c, 0).is_err());
        let c = ModelConfig {
            slope: 1.5,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn parameter_names_are_unique() {
        let mut m = C2aModel::new(ModelConfig::default(), 0).unwrap();
        let names: Vec<String> = m.params().into_iter().map(|p| p.name).collect();
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(names.contains(&"encoder.l1.weight".to_string()));
        assert!(names.contains(&"clusters.centers".to_string()));
    }
}
