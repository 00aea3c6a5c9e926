use crate::error::{Error, Result};
use crate::layers::{dot, softmax_in_place, Param, Parameterized};
use crate::rng::{normal, SeededRng};
use crate::tensor::Tensor;

const MIN_NORM: f64 = 1e-8;

/// `K` trainable centers. Soft assignment of a vector `v` is the softmax
/// over `k` of `cos(v, mu_k) / temperature`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterBank {
    pub centers: Tensor,
    pub grad: Tensor,
    pub temperature: f64,
}

/// Soft assignments of a batch of embeddings plus what backward needs.
#[derive(Clone, Debug)]
pub struct Assignment {
    /// `M x K`, rows on the simplex.
    pub probs: Tensor,
    /// `M x K` cosine similarities.
    pub cos: Tensor,
    v_norm: Vec<f64>,
    mu_norm: Vec<f64>,
}

impl Assignment {
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.probs.rows())
            .map(|r| super::decoder::argmax(self.probs.row(r)))
            .collect()
    }
}

impl ClusterBank {
    pub fn random(k: usize, f_e: usize, temperature: f64, rng: &mut SeededRng) -> Self {
        let data = (0..k * f_e).map(|_| normal(rng)).collect();
        ClusterBank::from_centers(Tensor::from_vec(&[k, f_e], data).expect("center dims"), temperature)
    }

    pub fn from_centers(centers: Tensor, temperature: f64) -> Self {
        let grad = Tensor::zeros(centers.dims());
        ClusterBank {
            centers,
            grad,
            temperature,
        }
    }

    pub fn k(&self) -> usize {
        self.centers.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.dims()[1]
    }

    /// Errors if any center has (near-)zero norm. Centers are never
    /// renormalized behind the caller's back.
    pub fn check_centers(&self) -> Result<Vec<f64>> {
        let norms: Vec<f64> = (0..self.k()).map(|k| norm(self.centers.row(k))).collect();
        if norms.iter().any(|&n| !(n > MIN_NORM)) {
            return Err(Error::ZeroNorm("cluster center"));
        }
        Ok(norms)
    }

    /// Soft assignment of a single vector.
    pub fn assign_one(&self, v: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::from_vec(&[1, v.len()], v.to_vec())?;
        Ok(self.assign(&t)?.probs.into_data())
    }

    /// Soft assignments for every row of `emb` (`M x f_e`, or any tensor
    /// whose last axis is `f_e`).
    pub fn assign(&self, emb: &Tensor) -> Result<Assignment> {
        if emb.cols() != self.dim() {
            return Err(Error::shape("cluster_assign", emb.dims(), self.centers.dims()));
        }
        let mu_norm = self.check_centers()?;
        let (m, k) = (emb.rows(), self.k());
        let mut v_norm = Vec::with_capacity(m);
        let mut cos = Vec::with_capacity(m * k);
        let mut probs = Vec::with_capacity(m * k);
        for r in 0..m {
            let v = emb.row(r);
            let vn = norm(v);
            if !(vn > MIN_NORM) {
                return Err(Error::ZeroNorm("cluster_assign"));
            }
            v_norm.push(vn);
            let start = cos.len();
            for j in 0..k {
                cos.push(dot(v, self.centers.row(j)) / (vn * mu_norm[j]));
            }
            probs.extend(cos[start..].iter().map(|c| c / self.temperature));
            softmax_in_place(&mut probs[start..]);
        }
        Ok(Assignment {
            probs: Tensor::from_vec(&[m, k], probs)?,
            cos: Tensor::from_vec(&[m, k], cos)?,
            v_norm,
            mu_norm,
        })
    }

    /// Pulls a gradient w.r.t. the assignment logits (`cos / temperature`)
    /// back to the embeddings (returned, `M x f_e`) and the centers
    /// (accumulated into `grad`).
    pub fn backward(&mut self, emb: &Tensor, a: &Assignment, grad_logits: &Tensor) -> Result<Tensor> {
        let (m, k, d) = (emb.rows(), self.k(), self.dim());
        if grad_logits.dims() != [m, k] {
            return Err(Error::shape("cluster_backward", grad_logits.dims(), &[m, k]));
        }
        let mut grad_emb = vec![0.0; m * d];
        let centers = self.centers.data();
        let gmu = self.grad.data_mut();
        for r in 0..m {
            let v = emb.row(r);
            let vn = a.v_norm[r];
            let ge = &mut grad_emb[r * d..(r + 1) * d];
            for j in 0..k {
                let g = grad_logits.row(r)[j] / self.temperature;
                if g == 0.0 {
                    continue;
                }
                let c = a.cos.row(r)[j];
                let mn = a.mu_norm[j];
                let mu = &centers[j * d..(j + 1) * d];
                let gm = &mut gmu[j * d..(j + 1) * d];
                for i in 0..d {
                    let vh = v[i] / vn;
                    let mh = mu[i] / mn;
                    ge[i] += g * (mh - c * vh) / vn;
                    gm[i] += g * (vh - c * mh) / mn;
                }
            }
        }
        Tensor::from_vec(&[m, d], grad_emb)
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

impl Parameterized for ClusterBank {
    fn params(&mut self) -> Vec<Param<'_>> {
        vec![Param {
            name: "clusters.centers".into(),
            value: &mut self.centers,
            grad: &mut self.grad,
        }]
    }
}
