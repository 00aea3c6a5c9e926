//! Training objectives and their hand-derived gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Assignment, ClusterBank, Discriminator};
use crate::tensor::{LabelTensor, Tensor, IGNORE};

/// Default weight of the generator-side adversarial term.
pub const DEFAULT_LAMBDA_ADV: f64 = 0.001;

const P_FLOOR: f64 = 1e-30;

/// Pixel cross-entropy, averaged over the non-ignored pixels of each image
/// and then over the images that have any such pixels.
///
/// Returns the loss and its gradient w.r.t. the pixel logits that produced
/// `probs` through a softmax. An all-ignored batch yields `(0, 0)`.
pub fn sup_loss(probs: &Tensor, labels: &LabelTensor) -> Result<(f64, Tensor)> {
    let &[n, h, w, c] = probs.dims() else {
        return Err(Error::shape("sup_loss", probs.dims(), labels.dims()));
    };
    if labels.dims() != [n, h, w] {
        return Err(Error::shape("sup_loss", probs.dims(), labels.dims()));
    }
    let per_image = h * w;
    let lab = labels.data();
    if let Some(&bad) = lab.iter().find(|&&l| l != IGNORE && l as usize >= c) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let valid: Vec<usize> = (0..n)
        .map(|b| {
            lab[b * per_image..(b + 1) * per_image]
                .iter()
                .filter(|&&l| l != IGNORE)
                .count()
        })
        .collect();
    let images = valid.iter().filter(|&&v| v > 0).count();
    let mut grad = Tensor::zeros(probs.dims());
    if images == 0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    let g = grad.data_mut();
    for b in 0..n {
        if valid[b] == 0 {
            continue;
        }
        let scale = 1.0 / (valid[b] as f64 * images as f64);
        for px in b * per_image..(b + 1) * per_image {
            let y = lab[px];
            if y == IGNORE {
                continue;
            }
            let p = &probs.data()[px * c..(px + 1) * c];
            loss -= scale * p[y as usize].max(P_FLOOR).ln();
            let gp = &mut g[px * c..(px + 1) * c];
            for (k, (gk, pk)) in gp.iter_mut().zip(p).enumerate() {
                *gk = scale * (pk - if k == y as usize { 1.0 } else { 0.0 });
            }
        }
    }
    Ok((loss, grad))
}

/// Generator-side least-squares term from raw scores: `mean(s^2)`.
pub fn adv_loss_from_scores(scores: &Tensor) -> (f64, Tensor) {
    let n = scores.len() as f64;
    let loss = scores.data().iter().map(|s| s * s).sum::<f64>() / n;
    let mut g = scores.clone();
    g.scale(2.0 / n);
    (loss, g)
}

/// Generator-side adversarial loss on bridge-domain probability maps.
///
/// Returns the loss and its gradient w.r.t. `probs_aux`. The
/// discriminator is read-only here: its grad buffers are not touched.
pub fn adv_loss(disc: &Discriminator, probs_aux: &Tensor) -> Result<(f64, Tensor)> {
    let (scores, cache) = disc.forward(probs_aux)?;
    let (loss, g_scores) = adv_loss_from_scores(&scores);
    Ok((loss, disc.backward_input(&cache, &g_scores)?))
}

/// `mean_src(s^2) + mean_aux((s - 1)^2)`; accumulates into the
/// discriminator's grad buffers only (probability maps are constants).
pub fn disc_loss(disc: &mut Discriminator, probs_src: &Tensor, probs_aux: &Tensor) -> Result<f64> {
    let mut total = 0.0;
    for (probs, target) in [(probs_src, 0.0), (probs_aux, 1.0)] {
        let (scores, cache) = disc.forward(probs)?;
        let n = scores.len() as f64;
        total += scores.data().iter().map(|s| (s - target).powi(2)).sum::<f64>() / n;
        let g = Tensor::from_vec(
            scores.dims(),
            scores.data().iter().map(|s| 2.0 * (s - target) / n).collect(),
        )?;
        disc.backward(&cache, &g)?;
    }
    Ok(total)
}

/// `-(1/M) sum_j log max_k p_jk` and its gradient w.r.t. the assignment
/// logits: `(p_j - onehot(argmax_j)) / M`, ties to the lowest index.
pub fn cluster_loss_from_probs(p: &Tensor) -> (f64, Tensor) {
    let (m, k) = (p.rows(), p.cols());
    let mut loss = 0.0;
    let mut grad = p.clone();
    grad.scale(1.0 / m as f64);
    for r in 0..m {
        let row = p.row(r);
        let best = crate::model::argmax_index(row);
        loss -= row[best].max(P_FLOOR).ln();
        grad.data_mut()[r * k + best] -= 1.0 / m as f64;
    }
    (loss / m as f64, grad)
}

/// Clustering loss over embedding rows; accumulates center grads and
/// returns `(loss, grad w.r.t. embeddings)`.
pub fn cluster_loss(bank: &mut ClusterBank, emb: &Tensor) -> Result<(f64, Tensor)> {
    if emb.rows() == 0 {
        return Err(Error::InvalidArgument("cluster_loss of an empty embedding set".into()));
    }
    let a = bank.assign(emb)?;
    let (loss, g) = cluster_loss_from_probs(&a.probs);
    Ok((loss, bank.backward(emb, &a, &g)?))
}

/// Sharpened, frequency-normalized target:
/// `q_jk = (p_jk^2 / f_k) / sum_k' (p_jk'^2 / f_k')` with `f_k = sum_j p_jk`.
pub fn target_distribution_q(p: &Tensor) -> Tensor {
    let (m, k) = (p.rows(), p.cols());
    let mut f = vec![0.0; k];
    for r in 0..m {
        f.iter_mut().zip(p.row(r)).for_each(|(fk, pk)| *fk += pk);
    }
    let mut q = p.clone();
    for row in q.data_mut().chunks_mut(k) {
        for (qk, fk) in row.iter_mut().zip(&f) {
            *qk = if *fk > 0.0 { *qk * *qk / fk } else { 0.0 };
        }
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    q
}

/// `(1/M) sum_j sum_k q_jk log(q_jk / p_jk)`, with `0 log 0 = 0`.
pub fn kl_loss(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.dims() != q.dims() {
        return Err(Error::shape("kl_loss", p.dims(), q.dims()));
    }
    let m = p.rows() as f64;
    let s: f64 = p
        .data()
        .iter()
        .zip(q.data())
        .filter(|(_, &qk)| qk > 0.0)
        .map(|(&pk, &qk)| qk * (qk / pk.max(P_FLOOR)).ln())
        .sum();
    Ok(s / m)
}

/// Gradient of [`kl_loss`] w.r.t. the softmax logits behind `p`, holding
/// `q` fixed: `(p - q) / M` (rows of `q` sum to one).
pub fn kl_loss_grad_logits(p: &Tensor, q: &Tensor) -> Result<Tensor> {
    if p.dims() != q.dims() {
        return Err(Error::shape("kl_loss", p.dims(), q.dims()));
    }
    let m = p.rows() as f64;
    let data = p.data().iter().zip(q.data()).map(|(pk, qk)| (pk - qk) / m).collect();
    Tensor::from_vec(p.dims(), data)
}

/// Clustering-plus-self-training losses on one batch of embeddings.
#[derive(Clone, Debug)]
pub struct ClusterTerms {
    pub l_c: f64,
    pub l_kl: f64,
    pub assignment: Assignment,
    /// Gradient of `weight * (l_c + l_kl)` w.r.t. the embeddings.
    pub grad_emb: Tensor,
}

/// Evaluates `l_c` and (optionally) `l_kl` with a per-batch target `q`,
/// accumulating `weight`-scaled center grads. `weight == 0` skips backward.
pub fn cluster_terms(bank: &mut ClusterBank, emb: &Tensor, use_kl: bool, weight: f64) -> Result<ClusterTerms> {
    let a = bank.assign(emb)?;
    let (l_c, mut g) = cluster_loss_from_probs(&a.probs);
    let mut l_kl = 0.0;
    if use_kl {
        let q = target_distribution_q(&a.probs);
        l_kl = kl_loss(&a.probs, &q)?;
        g.add_assign(&kl_loss_grad_logits(&a.probs, &q)?)?;
    }
    let grad_emb = if weight != 0.0 {
        g.scale(weight);
        bank.backward(emb, &a, &g)?
    } else {
        Tensor::zeros(&[emb.rows(), emb.cols()])
    };
    Ok(ClusterTerms {
        l_c,
        l_kl,
        assignment: a,
        grad_emb,
    })
}

/// `2 / (1 + exp(-10 delta)) - 1` with `delta` clamped to `[0, 1]`.
pub fn lambda_c_schedule(delta: f64) -> f64 {
    let d = delta.clamp(0.0, 1.0);
    2.0 / (1.0 + (-10.0 * d).exp()) - 1.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub l_sup_s: f64,
    pub l_sup_t: f64,
    pub l_adv: f64,
    pub l_disc: f64,
    pub l_c: f64,
    pub l_kl: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_sup_s: f64,
    pub l_sup_t: f64,
    pub l_adv: f64,
    pub l_disc: f64,
    pub l_c: f64,
    pub l_kl: f64,
    pub lambda_adv: f64,
    pub lambda_c: f64,
    pub total: f64,
}

/// Generator objective `l_sup + lambda_adv l_adv + lambda_c (l_c + l_kl)`.
/// The discriminator loss is reported alongside but is not part of it.
pub fn total_objective(c: LossComponents, lambda_adv: f64, lambda_c: f64) -> LossReport {
    LossReport {
        l_sup_s: c.l_sup_s,
        l_sup_t: c.l_sup_t,
        l_adv: c.l_adv,
        l_disc: c.l_disc,
        l_c: c.l_c,
        l_kl: c.l_kl,
        lambda_adv,
        lambda_c,
        total: c.l_sup_s + c.l_sup_t + lambda_adv * c.l_adv + lambda_c * (c.l_c + c.l_kl),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{numeric_gradient, relative_error};
    use crate::layers::softmax;
    use crate::rng::{normal, rng};
    use proptest::prelude::*;

    fn random(dims: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed, &[]);
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| normal(&mut r)).collect()).unwrap()
    }

    fn labels(dims: &[usize], c: u16, seed: u64) -> LabelTensor {
        let mut r = rng(seed, &[1]);
        let n = dims.iter().product();
        let data = (0..n)
            .map(|_| {
                let u = (normal(&mut r).abs() * 1000.0) as u16;
                if u.is_multiple_of(7) {
                    IGNORE
                } else {
                    u % c
                }
            })
            .collect();
        LabelTensor::from_vec(dims, data).unwrap()
    }

    #[test]
    fn sup_loss_uniform_is_ln_c() {
        let p = Tensor::filled(&[2, 4, 4, 4], 0.25);
        let l = labels(&[2, 4, 4], 4, 0);
        let (loss, _) = sup_loss(&p, &l).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sup_loss_near_perfect_is_near_zero() {
        let l = LabelTensor::from_vec(&[1, 1, 2], vec![0, 1]).unwrap();
        let p = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0 - 1e-12, 1e-12, 1e-12, 1.0 - 1e-12]).unwrap();
        assert!(sup_loss(&p, &l).unwrap().0 < 1e-11);
    }

    #[test]
    fn sup_loss_all_ignored_is_zero() {
        let l = LabelTensor::from_vec(&[1, 2, 2], vec![IGNORE; 4]).unwrap();
        let (loss, g) = sup_loss(&Tensor::filled(&[1, 2, 2, 3], 1.0 / 3.0), &l).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sup_loss_rejects_out_of_range_labels() {
        let l = LabelTensor::from_vec(&[1, 1, 1], vec![5]).unwrap();
        assert!(sup_loss(&Tensor::filled(&[1, 1, 1, 3], 1.0 / 3.0), &l).is_err());
    }

    #[test]
    fn sup_loss_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let logits = random(&[2, 3, 3, 4], seed);
            let l = labels(&[2, 3, 3], 4, seed);
            let (_, g) = sup_loss(&softmax(&logits), &l).unwrap();
            let f = |x: &[f64]| {
                let t = Tensor::from_vec(logits.dims(), x.to_vec()).unwrap();
                sup_loss(&softmax(&t), &l).unwrap().0
            };
            let num = numeric_gradient(f, logits.data(), 1e-6);
            // ignored pixels carry exactly zero gradient on both sides
            assert!(relative_error(&num, g.data()) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn adv_and_disc_values_from_scores() {
        let zeros = Tensor::zeros(&[3]);
        assert_eq!(adv_loss_from_scores(&zeros).0, 0.0);
        assert_eq!(adv_loss_from_scores(&Tensor::filled(&[3], 1.0)).0, 1.0);
    }

    #[test]
    fn disc_loss_analytic_values() {
        let mut r = rng(0, &[]);
        let mut d = Discriminator::new(2, &[2, 2, 2, 2], 16, 16, 0.2, &mut r);
        for l in d.layers.iter_mut().chain(std::iter::once(&mut d.head)) {
            l.weight.fill(0.0);
        }
        let p = Tensor::filled(&[2, 16, 16, 2], 0.5);
        d.head.bias.fill(0.5);
        assert!((disc_loss(&mut d, &p, &p).unwrap() - 0.5).abs() < 1e-15);
        // constant 0 on source and 1 on aux is the optimum
        let mut d0 = d.clone();
        d0.head.bias.fill(0.0);
        let mut d1 = d.clone();
        d1.head.bias.fill(1.0);
        let (s0, _) = d0.forward(&p).unwrap();
        let (s1, _) = d1.forward(&p).unwrap();
        let v = s0.data().iter().map(|s| s * s).sum::<f64>() / 2.0
            + s1.data().iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / 2.0;
        assert_eq!(v, 0.0);
    }

    #[test]
    fn cluster_loss_worked_example() {
        // v equal to mu_1, mu_2 orthogonal: p = softmax(1, 0)
        let bank = ClusterBank::from_centers(Tensor::from_rows(&[vec![1., 0.], vec![0., 1.]]).unwrap(), 1.0);
        let mut b = bank.clone();
        let emb = Tensor::from_rows(&[vec![2., 0.], vec![0., 3.]]).unwrap();
        let (loss, _) = cluster_loss(&mut b, &emb).unwrap();
        let want = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((loss - want).abs() < 1e-12);
        assert!((want - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn cluster_loss_identical_centers_is_ln_k() {
        let mut bank = ClusterBank::from_centers(Tensor::from_rows(&vec![vec![0.3, -1.0, 2.0]; 5]).unwrap(), 1.0);
        let emb = random(&[7, 3], 4);
        let (loss, _) = cluster_loss(&mut bank, &emb).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cluster_loss_rejects_zero_embedding() {
        let mut bank = ClusterBank::from_centers(random(&[3, 2], 1), 1.0);
        let emb = Tensor::from_rows(&[vec![0., 0.]]).unwrap();
        assert!(matches!(cluster_loss(&mut bank, &emb), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn cluster_terms_gradients_match_finite_differences() {
        for seed in 0..20 {
            for use_kl in [false, true] {
                let centers = random(&[4, 3], seed);
                let emb = random(&[6, 3], seed + 100);
                let mut bank = ClusterBank::from_centers(centers.clone(), 0.7);
                let terms = cluster_terms(&mut bank, &emb, use_kl, 1.0).unwrap();
                // q is a constant of the step: freeze it for the numeric side
                let q = target_distribution_q(&terms.assignment.probs);
                let loss = |c: &Tensor, e: &Tensor| {
                    let b = ClusterBank::from_centers(c.clone(), 0.7);
                    let a = b.assign(e).unwrap();
                    let (lc, _) = cluster_loss_from_probs(&a.probs);
                    lc + if use_kl { kl_loss(&a.probs, &q).unwrap() } else { 0.0 }
                };
                let f_mu = |x: &[f64]| loss(&Tensor::from_vec(&[4, 3], x.to_vec()).unwrap(), &emb);
                let num = numeric_gradient(f_mu, centers.data(), 1e-6);
                assert!(relative_error(&num, bank.grad.data()) < 1e-4, "seed {seed} kl {use_kl}");
                let f_v = |x: &[f64]| loss(&centers, &Tensor::from_vec(&[6, 3], x.to_vec()).unwrap());
                let num = numeric_gradient(f_v, emb.data(), 1e-6);
                assert!(
                    relative_error(&num, terms.grad_emb.data()) < 1e-4,
                    "seed {seed} kl {use_kl}"
                );
            }
        }
    }

    #[test]
    fn q_worked_example() {
        let p = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let q = target_distribution_q(&p);
        // f = [1.4, 0.6]
        let a = 0.81 / 1.4;
        let b = 0.01 / 0.6;
        assert!((q.row(0)[0] - a / (a + b)).abs() < 1e-15);
        assert!((q.row(0)[0] - 0.9720).abs() < 1e-4);
        assert!((q.row(0)[1] - 0.0280).abs() < 1e-4);
        // second row: (0.25/1.4) / (0.25/1.4 + 0.25/0.6) is exactly 0.3
        assert!((q.row(1)[0] - 0.3).abs() < 1e-12);
        assert!((q.row(1)[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn q_symmetric_cases() {
        let q = target_distribution_q(&Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap());
        assert_eq!(q.data(), &[0.5, 0.5]);
        let q = target_distribution_q(&Tensor::filled(&[5, 4], 0.25));
        assert!(q.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn kl_values() {
        let p = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!((kl_loss(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kl_loss(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lambda_c_schedule(0.0), 0.0);
        assert!((lambda_c_schedule(1.0) - (2.0 / (1.0 + (-10f64).exp()) - 1.0)).abs() < 1e-15);
        assert!((lambda_c_schedule(1.0) - 0.999909).abs() < 1e-6);
        assert!((lambda_c_schedule(0.1) - 0.5f64.tanh()).abs() < 1e-15);
        assert!((lambda_c_schedule(0.1) - 0.462117).abs() < 1e-6);
    }

    #[test]
    fn total_objective_composition() {
        let c = LossComponents {
            l_sup_s: 0.3,
            l_sup_t: 0.7,
            l_adv: 0.9,
            l_disc: 0.4,
            l_c: 2.0,
            l_kl: 0.5,
        };
        let r = total_objective(c, 0.001, 0.0);
        assert_eq!(r.total, 0.3 + 0.7 + 0.001 * 0.9);
        let r = total_objective(c, 0.001, 0.5);
        assert_eq!(r.total, 0.3 + 0.7 + 0.001 * 0.9 + 0.5 * 2.5);
        assert_eq!(total_objective(LossComponents::default(), 0.001, 1.0).total, 0.0);
    }

    fn simplex_rows(m: usize, k: usize, seed: u64) -> Tensor {
        softmax(&random(&[m, k], seed))
    }

    proptest! {
        #[test]
        fn q_rows_sum_to_one(m in 1usize..8, k in 1usize..8, seed in any::<u64>()) {
            let q = target_distribution_q(&simplex_rows(m, k, seed));
            for r in 0..m {
                prop_assert!((q.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn q_sharpens_single_point(k in 2usize..8, seed in any::<u64>()) {
            let p = simplex_rows(1, k, seed);
            let q = target_distribution_q(&p);
            let pmax = p.data().iter().copied().fold(0.0, f64::max);
            let qmax = q.data().iter().copied().fold(0.0, f64::max);
            prop_assert!(qmax >= pmax - 1e-15);
        }

        #[test]
        fn losses_are_nonnegative_and_bounded(m in 1usize..8, k in 1usize..8, seed in any::<u64>()) {
            let p = simplex_rows(m, k, seed);
            let (lc, _) = cluster_loss_from_probs(&p);
            prop_assert!(lc >= 0.0);
            prop_assert!(lc <= (k as f64).ln() + 1e-12);
            let q = target_distribution_q(&p);
            prop_assert!(kl_loss(&p, &q).unwrap() >= -1e-15);
        }

        #[test]
        fn schedule_is_monotone_and_bounded(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(lambda_c_schedule(lo) <= lambda_c_schedule(hi));
            prop_assert!((0.0..1.0).contains(&lambda_c_schedule(hi)));
        }
    }
}
