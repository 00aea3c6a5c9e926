//! Segmentation metrics and cluster-occupancy diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::C2aModel;
use crate::synth::{DomainDataset, DomainTag, World};
use crate::tensor::{LabelTensor, IGNORE};

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
    pub ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
            ignored: 0,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn update(&mut self, pred: &[u16], gt: &[u16]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape("confusion_update", &[pred.len()], &[gt.len()]));
        }
        let c = self.n_classes;
        if let Some(&bad) = pred
            .iter()
            .chain(gt.iter().filter(|&&g| g != IGNORE))
            .find(|&&l| l as usize >= c)
        {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == IGNORE {
                self.ignored += 1;
            } else {
                self.counts[g as usize * c + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::shape("confusion_merge", &[self.n_classes], &[other.n_classes]));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.ignored += other.ignored;
        Ok(())
    }

    /// `(intersection, union)` per class, in integers.
    pub fn iou_counts(&self) -> Vec<(u64, u64)> {
        let c = self.n_classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..c).map(|j| self.get(k, j)).sum();
                let col: u64 = (0..c).map(|j| self.get(j, k)).sum();
                (tp, row + col - tp)
            })
            .collect()
    }

    /// Per-class IoU and their mean. Classes that never occur in either
    /// ground truth or prediction score 0 and stay in the mean.
    pub fn miou(&self) -> (Vec<f64>, f64) {
        let per: Vec<f64> = self
            .iou_counts()
            .into_iter()
            .map(|(i, u)| if u == 0 { 0.0 } else { i as f64 / u as f64 })
            .collect();
        let mean = if per.is_empty() {
            0.0
        } else {
            per.iter().sum::<f64>() / per.len() as f64
        };
        (per, mean)
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.n_classes).map(|k| self.get(k, k)).sum();
        diag as f64 / total as f64
    }
}

/// Mean over images of each image's own mIoU (absent classes count as 0).
/// Exposed for comparison; the dataset-level number is canonical.
pub fn per_image_miou(pred: &[u16], gt: &LabelTensor, n_classes: usize) -> Result<f64> {
    let n = gt.dims()[0];
    let per = gt.len() / n.max(1);
    if pred.len() != gt.len() || n == 0 {
        return Err(Error::shape("per_image_miou", &[pred.len()], gt.dims()));
    }
    let mut sum = 0.0;
    for b in 0..n {
        let mut cm = ConfusionMatrix::new(n_classes);
        cm.update(&pred[b * per..(b + 1) * per], &gt.data()[b * per..(b + 1) * per])?;
        sum += cm.miou().1;
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub miou: f64,
    pub pixel_acc: f64,
    pub per_class_iou: Vec<f64>,
    pub per_image_miou: f64,
    pub confusion: ConfusionMatrix,
}

/// Predicted labels for every pixel of `data`, with the decoder matching
/// its label space (source decoder for source-space sets).
pub fn predict(model: &C2aModel, data: &DomainDataset) -> Result<Vec<u16>> {
    let dec = match data.tag {
        DomainTag::Source | DomainTag::Bridge => &model.decoder_s,
        _ => &model.decoder_t,
    };
    if dec.n_classes() != data.label_space.len() {
        return Err(Error::InvalidArgument(format!(
            "decoder has {} classes, dataset has {}",
            dec.n_classes(),
            data.label_space.len()
        )));
    }
    let mut out = Vec::with_capacity(data.labels.len());
    for chunk in chunks(data.len()) {
        let x = data.images.select(&chunk);
        let (map, _) = model.encoder.forward(&x)?;
        out.extend(dec.predict(&map)?);
    }
    Ok(out)
}

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    const CHUNK: usize = 64;
    (0..n.div_ceil(CHUNK)).map(move |c| (c * CHUNK..((c + 1) * CHUNK).min(n)).collect())
}

pub fn evaluate(model: &C2aModel, data: &DomainDataset) -> Result<EvalResult> {
    let pred = predict(model, data)?;
    let c = data.label_space.len();
    let mut cm = ConfusionMatrix::new(c);
    cm.update(&pred, data.labels.data())?;
    let (per_class_iou, miou) = cm.miou();
    Ok(EvalResult {
        miou,
        pixel_acc: cm.pixel_accuracy(),
        per_class_iou,
        per_image_miou: per_image_miou(&pred, &data.labels, c)?,
        confusion: cm,
    })
}

/// Cosine similarity of two histograms; 0 when either is empty.
pub fn co_occupancy(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Fraction of cells whose argmax cluster is the most common one.
pub fn largest_cluster_frac(assignments: &[usize], k: usize) -> f64 {
    if assignments.is_empty() {
        return 0.0;
    }
    let mut h = vec![0usize; k];
    assignments.iter().for_each(|&a| h[a] += 1);
    *h.iter().max().unwrap() as f64 / assignments.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    /// Cluster histograms (counts) of each source class, from bridge cells.
    pub source_hist: Vec<Vec<f64>>,
    /// Cluster histograms of each target class, from unlabeled target cells.
    pub target_hist: Vec<Vec<f64>>,
    /// `n_source x n_target` cosine similarities of the histograms.
    pub co_occupancy: Vec<Vec<f64>>,
    pub related_mean: f64,
    pub unrelated_mean: f64,
    pub purity: f64,
    pub largest_cluster_frac: f64,
}

/// Majority pixel label of every `s x s` cell; cells that are entirely
/// ignored get `IGNORE`. Ties go to the lowest class id.
pub fn cell_labels(labels: &LabelTensor, stride: usize, n_classes: usize) -> Vec<u16> {
    let &[n, h, w] = labels.dims() else {
        return Vec::new();
    };
    let (ch, cw) = (h / stride, w / stride);
    let mut out = Vec::with_capacity(n * ch * cw);
    let mut votes = vec![0usize; n_classes];
    for b in 0..n {
        for i in 0..ch {
            for j in 0..cw {
                votes.iter_mut().for_each(|v| *v = 0);
                for dy in 0..stride {
                    for dx in 0..stride {
                        let l = labels.data()[(b * h + i * stride + dy) * w + j * stride + dx];
                        if l != IGNORE {
                            votes[l as usize] += 1;
                        }
                    }
                }
                let best = (0..n_classes).fold(0, |m, c| if votes[c] > votes[m] { c } else { m });
                out.push(if votes[best] == 0 { IGNORE } else { best as u16 });
            }
        }
    }
    out
}

/// Argmax cluster of every embedding cell of `data`.
pub fn cell_clusters(model: &C2aModel, data: &DomainDataset) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for chunk in chunks(data.len()) {
        let (map, _) = model.encoder.forward(&data.images.select(&chunk))?;
        let (emb, _) = model.ftn.forward(&map)?;
        out.extend(model.clusters.assign(&emb)?.argmax());
    }
    Ok(out)
}

fn histograms(clusters: &[usize], labels: &[u16], n_classes: usize, k: usize) -> Vec<Vec<f64>> {
    let mut h = vec![vec![0.0; k]; n_classes];
    for (&c, &l) in clusters.iter().zip(labels) {
        if l != IGNORE {
            h[l as usize][c] += 1.0;
        }
    }
    h
}

/// Selective-alignment diagnostics from bridge (source classes) and
/// unlabeled target (target classes) cells. Labels here are diagnostic
/// only; no training loss reads them.
pub fn cluster_diagnostics(model: &C2aModel, world: &World) -> Result<ClusterDiagnostics> {
    let k = model.clusters.k();
    let stride = model.config.stride;
    let ns = world.source_space().len();
    let nt = world.target_space().len();
    let tu = world
        .target_unlabeled
        .as_ref()
        .ok_or(Error::MissingBatch("target_unlabeled"))?;
    let bc = cell_clusters(model, &world.bridge)?;
    let bl = cell_labels(&world.bridge.labels, stride, ns);
    let tc = cell_clusters(model, tu)?;
    let tl = cell_labels(&tu.labels, stride, nt);
    let source_hist = histograms(&bc, &bl, ns, k);
    let target_hist = histograms(&tc, &tl, nt, k);
    let co: Vec<Vec<f64>> = source_hist
        .iter()
        .map(|s| target_hist.iter().map(|t| co_occupancy(s, t)).collect())
        .collect();

    let related = world.spec.related_pairs();
    let (mut rel, mut unrel) = (Vec::new(), Vec::new());
    for (s, row) in co.iter().enumerate() {
        for (t, &v) in row.iter().enumerate() {
            if related.contains(&(s as u16, t as u16)) {
                rel.push(v);
            } else {
                unrel.push(v);
            }
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };

    // purity over the joint class set (source classes then target classes)
    let mut per_cluster = vec![vec![0.0; ns + nt]; k];
    for (c, &l) in bc.iter().zip(&bl).filter(|(_, &l)| l != IGNORE) {
        per_cluster[*c][l as usize] += 1.0;
    }
    for (c, &l) in tc.iter().zip(&tl).filter(|(_, &l)| l != IGNORE) {
        per_cluster[*c][ns + l as usize] += 1.0;
    }
    let fracs: Vec<f64> = per_cluster
        .iter()
        .filter_map(|h| {
            let total: f64 = h.iter().sum();
            (total > 0.0).then(|| h.iter().copied().fold(0.0, f64::max) / total)
        })
        .collect();

    let all: Vec<usize> = bc.iter().chain(&tc).copied().collect();
    Ok(ClusterDiagnostics {
        source_hist,
        target_hist,
        related_mean: mean(&rel),
        unrelated_mean: mean(&unrel),
        co_occupancy: co,
        purity: mean(&fracs),
        largest_cluster_frac: largest_cluster_frac(&all, k),
    })
}
