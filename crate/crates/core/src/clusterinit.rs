//! Cluster-center initialization: supervised pretraining, feature
//! collection, PCA by power iteration, Lloyd's k-means, and installation
//! of the PCA map into the feature transform.

use rand::Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::layers::dot;
use crate::model::{C2aModel, Checkpoint};
use crate::rng::{rng, tag, SeededRng};
use crate::synth::{DomainDataset, World};
use crate::tensor::Tensor;
use crate::trainer;

pub const PCA_TOL: f64 = 1e-10;
pub const PCA_MAX_ITER: usize = 10_000;
pub const KMEANS_TOL: f64 = 1e-9;
pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_N_INIT: usize = 10;

/// Supervised-only training on source and labeled target data.
pub fn pretrain_supervised(world: &World, config: &TrainConfig) -> Result<C2aModel> {
    let model = C2aModel::new(config.model_config(world), config.seed)?;
    trainer::run_supervised(world, config, model, config.pretrain_iters, true, true)
}

/// Every encoder-map cell of every image in `data`, image-major then
/// row-major, as rows of an `M x f_d` tensor.
pub fn collect_features(model: &C2aModel, data: &DomainDataset) -> Result<Tensor> {
    let mut rows = Vec::new();
    for b in 0..data.len() {
        let (map, _) = model.encoder.forward(&data.images.select(&[b]))?;
        rows.extend_from_slice(map.data());
    }
    let f_d = model.encoder.f_d();
    Tensor::from_vec(&[rows.len() / f_d, f_d], rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// `f_e x f_d`, orthonormal rows.
    pub projection: Tensor,
    pub mean: Tensor,
    /// Variance captured by each row, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// `P (x - mean)` for every row of `x`.
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let (m, d) = (x.rows(), x.cols());
        if d != self.mean.len() {
            return Err(Error::shape("pca_transform", x.dims(), self.projection.dims()));
        }
        let f_e = self.projection.rows();
        let mut out = Vec::with_capacity(m * f_e);
        let mut c = vec![0.0; d];
        for r in 0..m {
            c.iter_mut()
                .zip(x.row(r).iter().zip(self.mean.data()))
                .for_each(|(ci, (xi, mi))| *ci = xi - mi);
            out.extend((0..f_e).map(|k| dot(self.projection.row(k), &c)));
        }
        Tensor::from_vec(&[m, f_e], out)
    }
}

fn covariance(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (m, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for r in 0..m {
        mean.iter_mut().zip(x.row(r)).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut cov = vec![0.0; d * d];
    let mut c = vec![0.0; d];
    for r in 0..m {
        c.iter_mut()
            .zip(x.row(r).iter().zip(&mean))
            .for_each(|(ci, (xi, mi))| *ci = xi - mi);
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / m as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    (mean, cov)
}

fn matvec(a: &[f64], v: &[f64]) -> Vec<f64> {
    a.chunks(v.len()).map(|row| dot(row, v)).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Top-`out_dim` principal directions of the rows of `x`, by power
/// iteration on the covariance with deflation. Each row's largest-magnitude
/// coordinate is made positive.
pub fn pca_fit(x: &Tensor, out_dim: usize) -> Result<Pca> {
    let (m, d) = (x.rows(), x.cols());
    if out_dim == 0 || out_dim > d || m < out_dim {
        return Err(Error::InvalidArgument(format!(
            "pca_fit needs 0 < out_dim <= f_d and M >= out_dim (M={m}, f_d={d}, out_dim={out_dim})"
        )));
    }
    let (mean, cov) = covariance(x);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let floor = trace.max(f64::MIN_POSITIVE) * 1e-12;
    let mut deflated = cov.clone();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(out_dim);
    let mut variances = Vec::with_capacity(out_dim);
    for k in 0..out_dim {
        // deterministic start, not orthogonal to any axis
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * ((i * 7 + k * 3) % 11) as f64).collect();
        orthogonalize(&mut v, &rows);
        normalize(&mut v);
        for _ in 0..PCA_MAX_ITER {
            let mut w = matvec(&deflated, &v);
            orthogonalize(&mut w, &rows);
            if normalize(&mut w) <= floor {
                break;
            }
            let diff = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            v = w;
            if diff < PCA_TOL {
                break;
            }
        }
        let lambda = dot(&v, &matvec(&cov, &v));
        if !(lambda > floor) {
            return Err(Error::RankDeficient {
                achieved: k,
                requested: out_dim,
            });
        }
        for i in 0..d {
            for j in 0..d {
                deflated[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        let big = v
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        rows.push(v);
        variances.push(lambda);
    }
    // power iteration finds the components in order; a near-tie can swap
    // two of them, so order explicitly
    let mut order: Vec<usize> = (0..out_dim).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]));
    let projection = Tensor::from_vec(&[out_dim, d], order.iter().flat_map(|&i| rows[i].clone()).collect())?;
    Ok(Pca {
        projection,
        mean: Tensor::from_vec(&[d], mean)?,
        explained_variance: order.iter().map(|&i| variances[i]).collect(),
    })
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centers: Tensor,
    pub assignments: Vec<usize>,
    pub objective: f64,
    /// Objective after every assignment step.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(x: &[f64], centers: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centers.rows() {
        let d = sq_dist(x, centers.row(k));
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// `KMEANS_N_INIT` independent runs of k-means++ seeding followed by Lloyd
/// iterations until the objective decreases by less than the tolerance.
/// The run with the lowest objective wins (the earliest on ties). An emptied
/// cluster is moved to the point farthest from its current center.
pub fn kmeans_lloyd(x: &Tensor, k: usize, seed: u64) -> Result<KMeans> {
    let (m, _) = (x.rows(), x.cols());
    if k == 0 || m < k {
        return Err(Error::InvalidArgument(format!(
            "kmeans needs 0 < K <= M (K={k}, M={m})"
        )));
    }
    let mut best: Option<KMeans> = None;
    for run in 0..KMEANS_N_INIT {
        let km = kmeans_single(x, k, &mut rng(seed, &[tag("kmeans++"), run as u64]))?;
        if best.as_ref().is_none_or(|b| km.objective < b.objective) {
            best = Some(km);
        }
    }
    Ok(best.expect("at least one run"))
}

fn kmeans_single(x: &Tensor, k: usize, r: &mut SeededRng) -> Result<KMeans> {
    let (m, d) = (x.rows(), x.cols());
    let mut centers = Vec::with_capacity(k * d);
    centers.extend_from_slice(x.row(r.random_range(0..m)));
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(x.row(i), &centers[..d])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut idx = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            r.random_range(0..m)
        };
        let start = centers.len();
        centers.extend_from_slice(x.row(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(x.row(i), &centers[start..]));
        }
    }
    let mut centers = Tensor::from_vec(&[k, d], centers)?;
    let mut history: Vec<f64> = Vec::new();
    let mut assign = vec![0usize; m];
    for _ in 0..KMEANS_MAX_ITER {
        let mut obj = 0.0;
        let mut dist = vec![0.0; m];
        for i in 0..m {
            let (c, dd) = nearest(x.row(i), &centers);
            assign[i] = c;
            dist[i] = dd;
            obj += dd;
        }
        if let Some(&prev) = history.last() {
            debug_assert!(obj <= prev + 1e-9 * prev.abs().max(1.0), "kmeans objective increased");
            history.push(obj);
            if prev - obj < KMEANS_TOL {
                break;
            }
        } else {
            history.push(obj);
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..m {
            counts[assign[i]] += 1;
            sums[assign[i] * d..(assign[i] + 1) * d]
                .iter_mut()
                .zip(x.row(i))
                .for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let row = centers.row_mut(c);
                row.iter_mut()
                    .zip(&sums[c * d..(c + 1) * d])
                    .for_each(|(a, s)| *a = s / counts[c] as f64);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..m).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
                centers.row_mut(c).copy_from_slice(x.row(far));
                dist[far] = 0.0;
            }
        }
    }
    for i in 0..m {
        assign[i] = nearest(x.row(i), &centers).0;
    }
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * d];
    for i in 0..m {
        counts[assign[i]] += 1;
        sums[assign[i] * d..(assign[i] + 1) * d]
            .iter_mut()
            .zip(x.row(i))
            .for_each(|(s, v)| *s += v);
    }
    for c in (0..k).filter(|&c| counts[c] > 0) {
        let row = centers.row_mut(c);
        row.iter_mut()
            .zip(&sums[c * d..(c + 1) * d])
            .for_each(|(a, s)| *a = s / counts[c] as f64);
    }
    let sse =
        |assign: &[usize], centers: &Tensor| -> f64 { (0..m).map(|i| sq_dist(x.row(i), centers.row(assign[i]))).sum() };
    let mut objective = sse(&assign, &centers);
    history.push(objective);
    hartigan_refine(x, &mut assign, &mut counts, &mut centers, &mut history, sse);
    objective = history.last().copied().unwrap_or(objective);
    Ok(KMeans {
        centers,
        assignments: assign,
        objective,
        history,
    })
}

/// Single-point moves: `x` leaves cluster `a` for `b` when
/// `n_b/(n_b+1) |x - mu_b|^2 < n_a/(n_a-1) |x - mu_a|^2`, which lowers the
/// objective by the difference. Escapes Lloyd fixed points that are not
/// locally optimal under such moves.
fn hartigan_refine(
    x: &Tensor,
    assign: &mut [usize],
    counts: &mut [usize],
    centers: &mut Tensor,
    history: &mut Vec<f64>,
    sse: impl Fn(&[usize], &Tensor) -> f64,
) {
    let (m, k, d) = (x.rows(), centers.rows(), x.cols());
    for _ in 0..KMEANS_MAX_ITER {
        let mut moved = false;
        for i in 0..m {
            let a = assign[i];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let remove = na / (na - 1.0) * sq_dist(x.row(i), centers.row(a));
            let mut best = (a, remove);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let add = nb / (nb + 1.0) * sq_dist(x.row(i), centers.row(b));
                if add < best.1 {
                    best = (b, add);
                }
            }
            let b = best.0;
            if b == a || remove - best.1 <= KMEANS_TOL {
                continue;
            }
            let nb = counts[b] as f64;
            for j in 0..d {
                let v = x.row(i)[j];
                let ca = &mut centers.row_mut(a)[j];
                *ca = (na * *ca - v) / (na - 1.0);
                let cb = &mut centers.row_mut(b)[j];
                *cb = (nb * *cb + v) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            assign[i] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        history.push(sse(assign, centers));
    }
}

/// Sets `F.weight = P`, `F.bias = -P mean` and the cluster centers, so the
/// feature transform reproduces the PCA coordinates the centers were fit on.
pub fn install_centers(model: &mut C2aModel, pca: &Pca, centers: &Tensor) -> Result<()> {
    let lin = &mut model.ftn.linear;
    if pca.projection.dims() != lin.weight.dims() {
        return Err(Error::shape(
            "install_centers",
            pca.projection.dims(),
            lin.weight.dims(),
        ));
    }
    if centers.dims() != model.clusters.centers.dims() {
        return Err(Error::shape(
            "install_centers",
            centers.dims(),
            model.clusters.centers.dims(),
        ));
    }
    lin.weight = pca.projection.clone();
    let bias: Vec<f64> = (0..pca.projection.rows())
        .map(|k| -dot(pca.projection.row(k), pca.mean.data()))
        .collect();
    lin.bias = Tensor::from_vec(&[bias.len()], bias)?;
    model.clusters.centers = centers.clone();
    model.clusters.check_centers()?;
    Ok(())
}

/// Full pipeline. The returned checkpoint stores the PCA map and mean as
/// extras (`pca.projection`, `pca.mean`).
pub fn init_clusters(world: &World, config: &TrainConfig) -> Result<Checkpoint> {
    let mut model = pretrain_supervised(world, config)?;
    let data = world
        .target_unlabeled
        .as_ref()
        .ok_or(Error::MissingBatch("target_unlabeled"))?;
    let feats = collect_features(&model, data)?;
    let pca = pca_fit(&feats, model.config.f_e)?;
    let km = kmeans_lloyd(&pca.transform(&feats)?, model.config.k, config.seed)?;
    install_centers(&mut model, &pca, &km.centers)?;
    let mut ckpt = Checkpoint::new(model, 0);
    ckpt.extras.insert("pca.projection".into(), pca.projection);
    ckpt.extras.insert("pca.mean".into(), pca.mean);
    ckpt.meta = serde_json::json!({
        "stage": "init",
        "seed": config.seed,
        "pretrain_iters": config.pretrain_iters,
        "kmeans_objective": km.objective,
        "explained_variance": pca.explained_variance,
    });
    Ok(ckpt)
}
