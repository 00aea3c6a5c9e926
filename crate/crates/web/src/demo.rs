use c2a_core::config::{Mode, TrainConfig};
use c2a_core::losses::{cluster_loss_from_probs, kl_loss, lambda_c_schedule, target_distribution_q};
use c2a_core::synth::{generate_world, DomainDataset, World, WorldSpec};
use c2a_core::trainer::run_training;
use c2a_core::{Error, Result, Tensor, IGNORE};
use serde::Serialize;

pub const MAX_PREVIEW: usize = 8;
pub const MAX_ITERS: u64 = 1000;

#[derive(Debug, Serialize)]
pub struct PreviewImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGBA, scaled to 0..255 over the whole preview.
    pub rgba: Vec<u8>,
    /// Row-major label ids; `-1` for ignored pixels.
    pub labels: Vec<i32>,
}

#[derive(Debug, Serialize)]
pub struct PreviewDomain {
    pub name: String,
    pub classes: Vec<String>,
    pub images: Vec<PreviewImage>,
}

#[derive(Debug, Serialize)]
pub struct Preview {
    pub seed: u64,
    pub domains: Vec<PreviewDomain>,
}

/// Small world with the default classes, sized for a browser tab.
pub fn small_world(seed: u64) -> Result<World> {
    let spec = WorldSpec {
        n_source: 40,
        n_bridge: 20,
        n_target: 25,
        n_val: 20,
        sigma: 0.2,
        ..WorldSpec::default()
    };
    generate_world(&spec, seed)
}

pub fn world_preview(seed: u64, per_domain: usize) -> Result<Preview> {
    let w = small_world(seed)?;
    let n = per_domain.clamp(1, MAX_PREVIEW);
    let domains: Vec<&DomainDataset> = [
        Some(&w.source),
        Some(&w.bridge),
        w.target_labeled.as_ref(),
        Some(&w.target_val),
    ]
    .into_iter()
    .flatten()
    .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for d in &domains {
        for &v in d.images.select(&(0..n.min(d.len())).collect::<Vec<_>>()).data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = (hi - lo).max(1e-12);
    let domains = domains
        .into_iter()
        .map(|d| {
            let &[_, h, wd, c] = d.images.dims() else {
                return Err(Error::InvalidArgument("images must be N x H x W x C".into()));
            };
            let images = (0..n.min(d.len()))
                .map(|i| {
                    let px = &d.images.data()[i * h * wd * c..(i + 1) * h * wd * c];
                    let mut rgba = Vec::with_capacity(h * wd * 4);
                    for p in px.chunks(c) {
                        for ch in 0..3 {
                            let v = p.get(ch).copied().unwrap_or(lo);
                            rgba.push(((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8);
                        }
                        rgba.push(255);
                    }
                    let labels = d.labels.data()[i * h * wd..(i + 1) * h * wd]
                        .iter()
                        .map(|&l| if l == IGNORE { -1 } else { l as i32 })
                        .collect();
                    PreviewImage {
                        width: wd,
                        height: h,
                        rgba,
                        labels,
                    }
                })
                .collect();
            Ok(PreviewDomain {
                name: d.tag.as_str().to_string(),
                classes: d.label_space.names(),
                images,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Preview { seed, domains })
}

#[derive(Debug, Serialize)]
pub struct QView {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    /// Soft cluster frequencies `f_k = sum_j p_jk`.
    pub f: Vec<f64>,
    pub kl: f64,
    pub cluster_loss: f64,
    /// `(delta, lambda_c)` on an even grid.
    pub schedule: Vec<(f64, f64)>,
}

pub fn explore_q(rows: &[Vec<f64>]) -> Result<QView> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::InvalidArgument("need at least one row with one entry".into()));
    }
    let p: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            if r.len() != rows[0].len() || r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument(
                    "rows must have equal length and non-negative entries".into(),
                ));
            }
            let s: f64 = r.iter().sum();
            if s <= 0.0 {
                return Err(Error::InvalidArgument("every row needs a positive entry".into()));
            }
            Ok(r.iter().map(|v| v / s).collect())
        })
        .collect::<Result<_>>()?;
    let pt = Tensor::from_rows(&p)?;
    let q = target_distribution_q(&pt);
    let kl = kl_loss(&pt, &q)?;
    let (cluster_loss, _) = cluster_loss_from_probs(&pt);
    let f = (0..pt.cols())
        .map(|k| (0..pt.rows()).map(|j| pt.row(j)[k]).sum())
        .collect();
    let schedule = (0..=20)
        .map(|i| i as f64 / 20.0)
        .map(|d| (d, lambda_c_schedule(d)))
        .collect();
    Ok(QView {
        q: (0..q.rows()).map(|j| q.row(j).to_vec()).collect(),
        p,
        f,
        kl,
        cluster_loss,
        schedule,
    })
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub mode: String,
    pub iters: Vec<u64>,
    pub miou: Vec<f64>,
    pub largest_cluster_frac: Vec<f64>,
}

pub fn short_training(seed: u64, iters: u64) -> Result<Vec<Curve>> {
    let w = small_world(seed)?;
    let iters = iters.clamp(1, MAX_ITERS);
    [Mode::TargetOnly, Mode::C2aFull]
        .into_iter()
        .map(|mode| {
            let cfg = TrainConfig {
                mode,
                seed,
                max_iter: iters,
                pretrain_iters: 100,
                eval_interval: (iters / 10).max(1),
                ..TrainConfig::default()
            };
            let out = run_training(&w, &cfg, None, None)?;
            Ok(Curve {
                mode: mode.as_str().to_string(),
                iters: out.records.iter().map(|r| r.iter).collect(),
                miou: out.records.iter().map(|r| r.miou).collect(),
                largest_cluster_frac: out.records.iter().map(|r| r.largest_cluster_frac).collect(),
            })
        })
        .collect()
}
