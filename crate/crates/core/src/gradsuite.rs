//! Finite-difference checks of every differentiable component and loss on
//! one seeded random instance. Used by the test suites and the CLI.

use crate::error::Result;
use crate::gradcheck::{assign_values, finite_diff_check, flatten_grads, flatten_values, GradCheckOptions};
use crate::layers::{softmax, Linear, Parameterized};
use crate::losses::{adv_loss, cluster_terms, disc_loss, kl_loss, sup_loss, target_distribution_q};
use crate::model::{ClusterBank, Decoder, Discriminator, Encoder, FeatureTransform};
use crate::rng::{normal, rng, SeededRng};
use crate::tensor::{LabelTensor, Tensor, IGNORE};

#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub coords: usize,
}

fn random(dims: &[usize], r: &mut SeededRng) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| normal(r)).collect()).expect("dims")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

struct Checker {
    opts: GradCheckOptions,
    out: Vec<GradEntry>,
}

impl Checker {
    fn params<M: Parameterized + Clone>(
        &mut self,
        name: &str,
        model: &M,
        analytic: impl Fn(&mut M) -> Result<()>,
        loss: impl Fn(&M) -> Result<f64>,
    ) -> Result<()> {
        let mut m = model.clone();
        m.zero_grad();
        analytic(&mut m)?;
        let ana = flatten_grads(&mut m);
        let vals = flatten_values(&mut m);
        let f = |x: &[f64]| {
            let mut c = model.clone();
            assign_values(&mut c, x);
            loss(&c).unwrap_or(f64::NAN)
        };
        let rep = finite_diff_check(f, &vals, &ana, &self.opts)?;
        self.push(format!("{name}/params"), rep.max_rel_error, rep.coords_checked);
        Ok(())
    }

    fn input(&mut self, name: &str, x: &Tensor, ana: &Tensor, loss: impl Fn(&Tensor) -> Result<f64>) -> Result<()> {
        let f = |v: &[f64]| {
            let t = Tensor::from_vec(x.dims(), v.to_vec()).expect("dims");
            loss(&t).unwrap_or(f64::NAN)
        };
        let rep = finite_diff_check(f, x.data(), ana.data(), &self.opts)?;
        self.push(format!("{name}/input"), rep.max_rel_error, rep.coords_checked);
        Ok(())
    }

    fn push(&mut self, name: String, max_rel_error: f64, coords: usize) {
        self.out.push(GradEntry {
            name,
            max_rel_error,
            coords,
        });
    }
}

/// Runs every check for `seed`. `max_coords` caps the probed coordinates
/// per check (`None` probes all).
pub fn run_gradient_suite(seed: u64, max_coords: Option<usize>) -> Result<Vec<GradEntry>> {
    let mut r = rng(seed, &[0x67726164]);
    let mut ck = Checker {
        opts: GradCheckOptions {
            eps: 1e-5,
            max_coords,
            seed,
        },
        out: Vec::new(),
    };
    // Instances are kept small so that per-coordinate gradients stay well
    // above the roundoff of the difference quotient.
    let (n, hw, s, slope) = (2, 8, 4, 0.2);
    let cells = hw / s;
    let dhw = 4;

    // linear
    let lin = Linear::new(5, 3, &mut r);
    let x = random(&[4, 5], &mut r);
    let proj = random(&[4, 3], &mut r);
    ck.params(
        "linear",
        &lin,
        |m| m.backward(&x, &proj).map(|_| ()),
        |m| Ok(dot(&m.forward(&x)?, &proj)),
    )?;
    ck.input("linear", &x, &lin.backward_input(&proj)?, |x| {
        Ok(dot(&lin.forward(x)?, &proj))
    })?;

    // encoder
    let enc = Encoder::new(s, 3, 12, 8, slope, &mut r);
    let img = random(&[n, hw, hw, 3], &mut r);
    let proj = random(&[n, cells, cells, 8], &mut r);
    let enc_loss = |e: &Encoder, x: &Tensor| Ok(dot(&e.forward(x)?.0, &proj));
    ck.params(
        "encoder",
        &enc,
        |m| {
            let (_, c) = m.forward(&img)?;
            m.backward(&c, &proj).map(|_| ())
        },
        |m| enc_loss(m, &img),
    )?;
    let g = {
        let mut e = enc.clone();
        let (_, c) = e.forward(&img)?;
        e.backward(&c, &proj)?
    };
    ck.input("encoder", &img, &g, |x| enc_loss(&enc, x))?;

    // decoder, from a gradient on probabilities
    let dec = Decoder::new(s, 8, 4, &mut r);
    let map = random(&[n, cells, cells, 8], &mut r);
    let proj = random(&[n, hw, hw, 4], &mut r);
    let dec_loss = |d: &Decoder, x: &Tensor| Ok(dot(&d.forward(x)?.0, &proj));
    ck.params(
        "decoder",
        &dec,
        |m| {
            let (_, c) = m.forward(&map)?;
            m.backward_probs(&c, &proj).map(|_| ())
        },
        |m| dec_loss(m, &map),
    )?;
    let g = {
        let mut d = dec.clone();
        let (_, c) = d.forward(&map)?;
        d.backward_probs(&c, &proj)?
    };
    ck.input("decoder", &map, &g, |x| dec_loss(&dec, x))?;

    // feature transform
    let ftn = FeatureTransform::new(8, 5, &mut r);
    let proj = random(&[n, cells, cells, 5], &mut r);
    let ftn_loss = |f: &FeatureTransform, x: &Tensor| Ok(dot(&f.forward(x)?.0, &proj));
    ck.params(
        "ftn",
        &ftn,
        |m| {
            let (_, c) = m.forward(&map)?;
            m.backward(&c, &proj).map(|_| ())
        },
        |m| ftn_loss(m, &map),
    )?;
    let g = {
        let mut f = ftn.clone();
        let (_, c) = f.forward(&map)?;
        f.backward(&c, &proj)?
    };
    ck.input("ftn", &map, &g, |x| ftn_loss(&ftn, x))?;

    // discriminator
    let disc = Discriminator::new(4, &[3, 4], dhw, dhw, slope, &mut r);
    let probs = softmax(&random(&[n, dhw, dhw, 4], &mut r));
    let proj = random(&[n], &mut r);
    let disc_out = |d: &Discriminator, x: &Tensor| Ok(dot(&d.forward(x)?.0, &proj));
    ck.params(
        "discriminator",
        &disc,
        |m| {
            let (_, c) = m.forward(&probs)?;
            m.backward(&c, &proj).map(|_| ())
        },
        |m| disc_out(m, &probs),
    )?;
    let (_, c) = disc.forward(&probs)?;
    ck.input("discriminator", &probs, &disc.backward_input(&c, &proj)?, |x| {
        disc_out(&disc, x)
    })?;

    // cluster assignment
    let bank = ClusterBank::random(4, 5, 0.8, &mut r);
    let emb = random(&[6, 5], &mut r);
    let proj = random(&[6, 4], &mut r);
    let bank_out = |b: &ClusterBank, e: &Tensor| Ok(dot(&b.assign(e)?.probs, &proj));
    let assign_grad = |b: &mut ClusterBank| -> Result<Tensor> {
        let a = b.assign(&emb)?;
        let gl = crate::layers::softmax_backward(&a.probs, &proj)?;
        b.backward(&emb, &a, &gl)
    };
    ck.params(
        "cluster_assign",
        &bank,
        |m| assign_grad(m).map(|_| ()),
        |m| bank_out(m, &emb),
    )?;
    ck.input("cluster_assign", &emb, &assign_grad(&mut bank.clone())?, |e| {
        bank_out(&bank, e)
    })?;

    // supervised loss through the decoder; a small image keeps the
    // per-pixel gradients well above the difference quotient's roundoff
    let sup_dec = Decoder::new(2, 8, 4, &mut r);
    let sup_map = random(&[2, 2, 2, 8], &mut r);
    let labels = {
        let data = (0..2 * 4 * 4)
            .map(|i| {
                if i % 9 == 4 {
                    IGNORE
                } else {
                    ((normal(&mut r).abs() * 1e3) as usize % 4) as u16
                }
            })
            .collect();
        LabelTensor::from_vec(&[2, 4, 4], data)?
    };
    let sup = |d: &Decoder, x: &Tensor| Ok(sup_loss(&d.forward(x)?.0, &labels)?.0);
    let sup_grad = |d: &mut Decoder| -> Result<Tensor> {
        let (p, c) = d.forward(&sup_map)?;
        let (_, g) = sup_loss(&p, &labels)?;
        d.backward_logits(&c, &g)
    };
    ck.params("sup_loss", &sup_dec, |m| sup_grad(m).map(|_| ()), |m| sup(m, &sup_map))?;
    ck.input("sup_loss", &sup_map, &sup_grad(&mut sup_dec.clone())?, |x| {
        sup(&sup_dec, x)
    })?;

    // adversarial loss through the source decoder, discriminator frozen
    let adv = |d: &Decoder, x: &Tensor| Ok(adv_loss(&disc, &d.forward(x)?.0)?.0);
    let adv_grad = |d: &mut Decoder| -> Result<Tensor> {
        let (p, c) = d.forward(&sup_map)?;
        let (_, g) = adv_loss(&disc, &p)?;
        d.backward_probs(&c, &g)
    };
    ck.params("adv_loss", &sup_dec, |m| adv_grad(m).map(|_| ()), |m| adv(m, &sup_map))?;
    ck.input("adv_loss", &sup_map, &adv_grad(&mut sup_dec.clone())?, |x| {
        adv(&sup_dec, x)
    })?;

    // discriminator loss
    let probs_aux = softmax(&random(&[n, dhw, dhw, 4], &mut r));
    ck.params(
        "disc_loss",
        &disc,
        |m| disc_loss(m, &probs, &probs_aux).map(|_| ()),
        |m| disc_loss(&mut m.clone(), &probs, &probs_aux),
    )?;

    // clustering and self-training losses, q held fixed
    for use_kl in [false, true] {
        let name = if use_kl { "cluster+kl_loss" } else { "cluster_loss" };
        let q = target_distribution_q(&bank.assign(&emb)?.probs);
        let loss = |b: &ClusterBank, e: &Tensor| -> Result<f64> {
            let a = b.assign(e)?;
            let (lc, _) = crate::losses::cluster_loss_from_probs(&a.probs);
            Ok(lc + if use_kl { kl_loss(&a.probs, &q)? } else { 0.0 })
        };
        ck.params(
            name,
            &bank,
            |m| cluster_terms(m, &emb, use_kl, 1.0).map(|_| ()),
            |m| loss(m, &emb),
        )?;
        let g = cluster_terms(&mut bank.clone(), &emb, use_kl, 1.0)?.grad_emb;
        ck.input(name, &emb, &g, |e| loss(&bank, e))?;
    }
    Ok(ck.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_one_seed() {
        let entries = run_gradient_suite(3, Some(64)).unwrap();
        assert!(entries.len() >= 20);
        for e in &entries {
            assert!(e.max_rel_error < 1e-4, "{} {}", e.name, e.max_rel_error);
        }
    }
}
