use approx::assert_abs_diff_eq;
use c2a_core::layers::Parameterized;
use c2a_core::losses::{adv_loss, disc_loss};
use c2a_core::model::{C2aModel, ClusterBank, Decoder, Discriminator, ModelConfig};
use c2a_core::rng::{normal, rng};
use c2a_core::{Error, Tensor};
use proptest::prelude::*;

fn random(dims: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed, &[7]);
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| normal(&mut r)).collect()).unwrap()
}

#[test]
fn zero_weight_decoder_is_uniform() {
    let mut d = Decoder::new(4, 8, 5, &mut rng(0, &[]));
    d.linear.weight.fill(0.0);
    let (p, _) = d.forward(&random(&[2, 4, 4, 8], 1)).unwrap();
    assert_eq!(p.dims(), &[2, 16, 16, 5]);
    assert!(p.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn default_encoder_map_is_4x4() {
    let m = C2aModel::new(ModelConfig::default(), 0).unwrap();
    let x = random(&[3, 16, 16, 3], 2);
    let (map, _) = m.encoder.forward(&x).unwrap();
    assert_eq!(map.dims(), &[3, 4, 4, 32]);
    let (p, _) = m.decoder_s.forward(&map).unwrap();
    assert_eq!(&p.dims()[..3], &x.dims()[..3]);
    for r in 0..p.rows() {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let (emb, _) = m.ftn.forward(&map).unwrap();
    assert_eq!(emb.dims(), &[3, 4, 4, 16]);
    let (s, _) = m.disc.forward(&p).unwrap();
    assert_eq!(s.dims(), &[3]);
}

#[test]
fn forward_is_bitwise_deterministic() {
    let a = C2aModel::new(ModelConfig::default(), 9).unwrap();
    let b = C2aModel::new(ModelConfig::default(), 9).unwrap();
    assert_eq!(a, b);
    let x = random(&[2, 16, 16, 3], 3);
    let pa = a.decoder_t.forward(&a.encoder.forward(&x).unwrap().0).unwrap().0;
    let pb = b.decoder_t.forward(&b.encoder.forward(&x).unwrap().0).unwrap().0;
    assert_eq!(pa.data(), pb.data());
}

#[test]
fn encoder_rejects_wrong_channels() {
    let m = C2aModel::new(ModelConfig::default(), 0).unwrap();
    assert!(matches!(
        m.encoder.forward(&random(&[1, 16, 16, 2], 0)),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn cluster_assign_opposite_centers() {
    let v = vec![0.3, -1.2, 0.5];
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let bank = ClusterBank::from_centers(Tensor::from_rows(&[v.clone(), neg]).unwrap(), 1.0);
    let p = bank.assign_one(&v).unwrap();
    let e = 1f64.exp();
    assert_abs_diff_eq!(p[0], e / (e + 1.0 / e), epsilon = 1e-15);
    assert_abs_diff_eq!(p[0], 0.8808, epsilon = 1e-4);
    assert_abs_diff_eq!(p[1], 0.1192, epsilon = 1e-4);
}

#[test]
fn cluster_assign_identical_centers_uniform() {
    let bank = ClusterBank::from_centers(Tensor::from_rows(&vec![vec![1.0, 2.0]; 4]).unwrap(), 1.0);
    let p = bank.assign_one(&[-3.0, 0.1]).unwrap();
    assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
}

#[test]
fn cluster_assign_zero_norm_errors() {
    let bank = ClusterBank::from_centers(random(&[3, 4], 0), 1.0);
    assert!(matches!(bank.assign_one(&[0.0; 4]), Err(Error::ZeroNorm(_))));
    let zero_center = ClusterBank::from_centers(Tensor::zeros(&[2, 4]), 1.0);
    assert!(matches!(zero_center.assign_one(&[1.0; 4]), Err(Error::ZeroNorm(_))));
}

#[test]
fn adv_loss_with_frozen_constant_discriminator() {
    let mut d = Discriminator::new(3, &[2, 2, 2, 2], 16, 16, 0.2, &mut rng(1, &[]));
    for l in d.layers.iter_mut().chain(std::iter::once(&mut d.head)) {
        l.weight.fill(0.0);
    }
    let p = Tensor::filled(&[2, 16, 16, 3], 1.0 / 3.0);
    assert_eq!(adv_loss(&d, &p).unwrap().0, 0.0);
    d.head.bias.fill(1.0);
    assert_eq!(adv_loss(&d, &p).unwrap().0, 1.0);
}

#[test]
fn adv_loss_leaves_discriminator_grads_untouched() {
    let mut m = C2aModel::new(ModelConfig::default(), 4).unwrap();
    let p = c2a_core::layers::softmax(&random(&[2, 16, 16, 4], 5));
    let _ = adv_loss(&m.disc, &p).unwrap();
    assert!(m.disc.params().iter().all(|q| q.grad.data().iter().all(|&g| g == 0.0)));
    // the discriminator loss touches nothing outside the discriminator
    let before = m.clone();
    disc_loss(&mut m.disc, &p, &p).unwrap();
    assert_eq!(before.encoder, m.encoder);
    assert_eq!(before.decoder_s, m.decoder_s);
    assert!(m.disc.params().iter().any(|q| q.grad.data().iter().any(|&g| g != 0.0)));
}

proptest! {
    #[test]
    fn cluster_assign_is_scale_invariant(seed in any::<u64>(), alpha in 0.01f64..100.0, beta in 0.01f64..100.0) {
        let centers = random(&[5, 4], seed);
        let v = random(&[4], seed ^ 1).into_data();
        let bank = ClusterBank::from_centers(centers.clone(), 1.0);
        let p = bank.assign_one(&v).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * alpha).collect();
        let mut c2 = centers.clone();
        c2.row_mut(2).iter_mut().for_each(|x| *x *= beta);
        let p2 = ClusterBank::from_centers(c2, 1.0).assign_one(&scaled).unwrap();
        for (a, b) in p.iter().zip(&p2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let am = |q: &[f64]| q.iter().enumerate().fold(0, |b, (i, &x)| if x > q[b] { i } else { b });
        prop_assert_eq!(am(&p), am(&bank.assign_one(&scaled).unwrap()));
    }
}
