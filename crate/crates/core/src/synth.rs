//! Procedural multi-domain segmentation worlds.
//!
//! An image is an `H x W x 3` grid of feature vectors. Each image is cut
//! into axis-aligned rectangles by recursive guillotine cuts; every region
//! takes one class, and its pixels are the class prototype pushed through
//! the domain's affine appearance map plus i.i.d. Gaussian noise.
//!
//! Source and bridge share the source label space but differ in
//! appearance. Target data uses the bridge's appearance with its own
//! label space, where some classes sit within `epsilon` of a source
//! prototype ("related") and the rest sit far from all of them.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, normal, SeededRng};
use crate::tensor::{LabelTensor, Tensor, IGNORE};

pub const PIXEL_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Bridge,
    TargetLabeled,
    TargetUnlabeled,
    TargetVal,
}

impl DomainTag {
    pub const ALL: [DomainTag; 5] = [
        DomainTag::Source,
        DomainTag::Bridge,
        DomainTag::TargetLabeled,
        DomainTag::TargetUnlabeled,
        DomainTag::TargetVal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Bridge => "bridge",
            DomainTag::TargetLabeled => "target_labeled",
            DomainTag::TargetUnlabeled => "target_unlabeled",
            DomainTag::TargetVal => "target_val",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        DomainTag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    /// Index within the owning label space (decoder channel).
    pub id: u16,
    /// Identifier unique across all label spaces of a world.
    pub global_id: u16,
    pub name: String,
    pub prototype: [f64; PIXEL_DIM],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub name: String,
    pub classes: Vec<ClassInfo>,
}

impl LabelSpace {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceClassSpec {
    pub name: String,
    pub prototype: [f64; PIXEL_DIM],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetClassSpec {
    pub name: String,
    pub prototype: [f64; PIXEL_DIM],
    /// Source class this one corresponds to, if any.
    pub related_to: Option<u16>,
}

/// Affine appearance map `A p + b` followed by Gaussian pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub matrix: [[f64; PIXEL_DIM]; PIXEL_DIM],
    pub offset: [f64; PIXEL_DIM],
    pub noise_std: f64,
}

impl DomainShift {
    pub fn identity(noise_std: f64) -> Self {
        DomainShift {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            offset: [0.0; PIXEL_DIM],
            noise_std,
        }
    }

    pub fn apply(&self, p: &[f64; PIXEL_DIM]) -> [f64; PIXEL_DIM] {
        let mut out = self.offset;
        for (o, row) in out.iter_mut().zip(&self.matrix) {
            *o += row.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub height: usize,
    pub width: usize,
    pub n_source: usize,
    pub n_bridge: usize,
    /// Target training pool, split into labeled/unlabeled by `sigma`.
    pub n_target: usize,
    pub n_val: usize,
    pub sigma: f64,
    /// Cuts land on multiples of this many pixels; also the minimum region side.
    pub granularity: usize,
    pub max_depth: u32,
    pub split_prob: f64,
    /// Probability that a region is unlabeled background.
    pub ignore_prob: f64,
    pub epsilon: f64,
    pub source_classes: Vec<SourceClassSpec>,
    pub target_classes: Vec<TargetClassSpec>,
    pub source_shift: DomainShift,
    pub bridge_shift: DomainShift,
    pub target_shift: DomainShift,
}

impl Default for WorldSpec {
    fn default() -> Self {
        let a = 0.6;
        let source = [
            ("road", [a, a, a]),
            ("building", [a, -a, -a]),
            ("vegetation", [-a, a, -a]),
            ("sky", [-a, -a, a]),
        ];
        // appearance shared by the bridge and the target
        let real = DomainShift {
            matrix: [[0.8, 0.2, 0.0], [-0.1, 0.9, 0.1], [0.1, 0.0, 0.7]],
            offset: [0.3, -0.2, 0.1],
            noise_std: 1.2,
        };
        WorldSpec {
            height: 16,
            width: 16,
            n_source: 200,
            n_bridge: 100,
            n_target: 100,
            n_val: 100,
            sigma: 0.04,
            granularity: 4,
            max_depth: 4,
            split_prob: 0.85,
            ignore_prob: 0.0,
            epsilon: 0.15,
            source_classes: source
                .iter()
                .map(|(n, p)| SourceClassSpec {
                    name: (*n).into(),
                    prototype: *p,
                })
                .collect(),
            target_classes: vec![
                TargetClassSpec {
                    name: "floor".into(),
                    prototype: [a + 0.08, a - 0.06, a + 0.05],
                    related_to: Some(0),
                },
                TargetClassSpec {
                    name: "wall".into(),
                    prototype: [a - 0.07, -a + 0.05, -a - 0.08],
                    related_to: Some(1),
                },
                TargetClassSpec {
                    name: "chair".into(),
                    prototype: [1.4, 0.0, -1.3],
                    related_to: None,
                },
            ],
            source_shift: DomainShift::identity(1.2),
            bridge_shift: real.clone(),
            target_shift: real,
        }
    }
}

fn dist(a: &[f64; PIXEL_DIM], b: &[f64; PIXEL_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.source_classes.is_empty() || self.target_classes.is_empty() {
            return bad("degenerate world spec: zero classes".into());
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return bad(format!("sigma must lie in [0, 1], got {}", self.sigma));
        }
        if self.granularity < 2 {
            return bad("granularity must be at least 2".into());
        }
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(self.granularity)
            || !self.width.is_multiple_of(self.granularity)
        {
            return bad(format!(
                "{}x{} grid is not a positive multiple of granularity {}",
                self.height, self.width, self.granularity
            ));
        }
        if self.n_source == 0 || self.n_bridge == 0 || self.n_target == 0 || self.n_val == 0 {
            return bad("every domain needs at least one image".into());
        }
        if !(0.0..=1.0).contains(&self.split_prob) || !(0.0..1.0).contains(&self.ignore_prob) {
            return bad("split_prob must lie in [0, 1] and ignore_prob in [0, 1)".into());
        }
        if self.source_classes.len() + self.target_classes.len() >= IGNORE as usize {
            return bad("too many classes".into());
        }
        for t in &self.target_classes {
            match t.related_to {
                Some(s) => {
                    let src = self.source_classes.get(s as usize).ok_or_else(|| {
                        Error::InvalidArgument(format!("{} related to unknown source class {s}", t.name))
                    })?;
                    if dist(&t.prototype, &src.prototype) > self.epsilon {
                        return bad(format!(
                            "related class {} is farther than epsilon from {}",
                            t.name, src.name
                        ));
                    }
                }
                None => {
                    if let Some(s) = self
                        .source_classes
                        .iter()
                        .find(|s| dist(&t.prototype, &s.prototype) <= 5.0 * self.epsilon)
                    {
                        return bad(format!(
                            "unrelated class {} lies within 5*epsilon of {}",
                            t.name, s.name
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn source_space(&self) -> LabelSpace {
        LabelSpace {
            name: "source".into(),
            classes: self
                .source_classes
                .iter()
                .enumerate()
                .map(|(i, c)| ClassInfo {
                    id: i as u16,
                    global_id: i as u16,
                    name: c.name.clone(),
                    prototype: c.prototype,
                })
                .collect(),
        }
    }

    pub fn target_space(&self) -> LabelSpace {
        let offset = self.source_classes.len();
        LabelSpace {
            name: "target".into(),
            classes: self
                .target_classes
                .iter()
                .enumerate()
                .map(|(i, c)| ClassInfo {
                    id: i as u16,
                    global_id: (offset + i) as u16,
                    name: c.name.clone(),
                    prototype: c.prototype,
                })
                .collect(),
        }
    }

    /// `(source class, target class)` pairs marked related.
    pub fn related_pairs(&self) -> Vec<(u16, u16)> {
        self.target_classes
            .iter()
            .enumerate()
            .filter_map(|(t, c)| c.related_to.map(|s| (s, t as u16)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    pub tag: DomainTag,
    /// `N x H x W x 3`
    pub images: Tensor,
    /// `N x H x W`; class ids of `label_space` or [`IGNORE`].
    pub labels: LabelTensor,
    pub label_space: LabelSpace,
    pub seed: u64,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.images.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, tag: DomainTag, indices: &[usize]) -> Option<DomainDataset> {
        if indices.is_empty() {
            return None;
        }
        Some(DomainDataset {
            tag,
            images: self.images.select(indices),
            labels: self.labels.select(indices),
            label_space: self.label_space.clone(),
            seed: self.seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub seed: u64,
    pub source: DomainDataset,
    pub bridge: DomainDataset,
    pub target_labeled: Option<DomainDataset>,
    pub target_unlabeled: Option<DomainDataset>,
    pub target_val: DomainDataset,
}

impl World {
    pub fn source_space(&self) -> &LabelSpace {
        &self.source.label_space
    }

    pub fn target_space(&self) -> &LabelSpace {
        &self.target_val.label_space
    }

    pub fn domain(&self, tag: DomainTag) -> Option<&DomainDataset> {
        match tag {
            DomainTag::Source => Some(&self.source),
            DomainTag::Bridge => Some(&self.bridge),
            DomainTag::TargetLabeled => self.target_labeled.as_ref(),
            DomainTag::TargetUnlabeled => self.target_unlabeled.as_ref(),
            DomainTag::TargetVal => Some(&self.target_val),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

/// Recursive guillotine partition in granularity units.
fn partition(spec: &WorldSpec, rng: &mut SeededRng) -> Vec<Rect> {
    let g = spec.granularity;
    let mut leaves = Vec::new();
    let mut stack = vec![(
        Rect {
            top: 0,
            left: 0,
            height: spec.height / g,
            width: spec.width / g,
        },
        0u32,
    )];
    while let Some((r, depth)) = stack.pop() {
        let can_h = r.height >= 2;
        let can_w = r.width >= 2;
        let split = depth < spec.max_depth && (can_h || can_w) && rng.random::<f64>() < spec.split_prob;
        if !split {
            leaves.push(r);
            continue;
        }
        let horizontal = match (can_h, can_w) {
            (true, true) => rng.random::<bool>(),
            (h, _) => h,
        };
        if horizontal {
            let cut = rng.random_range(1..r.height);
            stack.push((Rect { height: cut, ..r }, depth + 1));
            stack.push((
                Rect {
                    top: r.top + cut,
                    height: r.height - cut,
                    ..r
                },
                depth + 1,
            ));
        } else {
            let cut = rng.random_range(1..r.width);
            stack.push((Rect { width: cut, ..r }, depth + 1));
            stack.push((
                Rect {
                    left: r.left + cut,
                    width: r.width - cut,
                    ..r
                },
                depth + 1,
            ));
        }
    }
    leaves
        .into_iter()
        .map(|r| Rect {
            top: r.top * g,
            left: r.left * g,
            height: r.height * g,
            width: r.width * g,
        })
        .collect()
}

fn generate_domain(
    spec: &WorldSpec,
    tag: DomainTag,
    count: usize,
    prototypes: &[[f64; PIXEL_DIM]],
    shift: &DomainShift,
    label_space: &LabelSpace,
    seed: u64,
) -> DomainDataset {
    let (h, w) = (spec.height, spec.width);
    let mut rng = rng::rng(seed, &[]);
    let shifted: Vec<[f64; PIXEL_DIM]> = prototypes.iter().map(|p| shift.apply(p)).collect();
    let background = shift.apply(&[0.0; PIXEL_DIM]);
    let mut images = vec![0.0; count * h * w * PIXEL_DIM];
    let mut labels = vec![IGNORE; count * h * w];
    for n in 0..count {
        for region in partition(spec, &mut rng) {
            let class = if rng.random::<f64>() < spec.ignore_prob {
                IGNORE
            } else {
                rng.random_range(0..prototypes.len()) as u16
            };
            let value = if class == IGNORE {
                background
            } else {
                shifted[class as usize]
            };
            for y in region.top..region.top + region.height {
                for x in region.left..region.left + region.width {
                    let px = (n * h + y) * w + x;
                    labels[px] = class;
                    images[px * PIXEL_DIM..(px + 1) * PIXEL_DIM].copy_from_slice(&value);
                }
            }
        }
    }
    if shift.noise_std > 0.0 {
        for v in images.iter_mut() {
            *v += shift.noise_std * normal(&mut rng);
        }
    }
    DomainDataset {
        tag,
        images: Tensor::from_vec(&[count, h, w, PIXEL_DIM], images).expect("image dims"),
        labels: LabelTensor::from_vec(&[count, h, w], labels).expect("label dims"),
        label_space: label_space.clone(),
        seed,
    }
}

/// Shuffled split of a dataset into `round(sigma * N)` labeled images and
/// the rest. Returns index lists into `dataset`.
pub fn split_indices(n: usize, sigma: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::InvalidArgument(format!("sigma must lie in [0, 1], got {sigma}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(seed, &[rng::tag("split")]));
    let n_labeled = (sigma * n as f64).round() as usize;
    let unlabeled = idx.split_off(n_labeled);
    Ok((idx, unlabeled))
}

pub fn split_target(
    dataset: &DomainDataset,
    sigma: f64,
    seed: u64,
) -> Result<(Option<DomainDataset>, Option<DomainDataset>)> {
    let (l, u) = split_indices(dataset.len(), sigma, seed)?;
    Ok((
        dataset.subset(DomainTag::TargetLabeled, &l),
        dataset.subset(DomainTag::TargetUnlabeled, &u),
    ))
}

pub fn generate_world(spec: &WorldSpec, seed: u64) -> Result<World> {
    spec.validate()?;
    let source_space = spec.source_space();
    let target_space = spec.target_space();
    let src_protos: Vec<_> = spec.source_classes.iter().map(|c| c.prototype).collect();
    let tgt_protos: Vec<_> = spec.target_classes.iter().map(|c| c.prototype).collect();
    let domain_seed = |name: &str| rng::derive_seed(seed, &[rng::tag(name)]);

    let source = generate_domain(
        spec,
        DomainTag::Source,
        spec.n_source,
        &src_protos,
        &spec.source_shift,
        &source_space,
        domain_seed("source"),
    );
    let bridge = generate_domain(
        spec,
        DomainTag::Bridge,
        spec.n_bridge,
        &src_protos,
        &spec.bridge_shift,
        &source_space,
        domain_seed("bridge"),
    );
    let pool = generate_domain(
        spec,
        DomainTag::TargetUnlabeled,
        spec.n_target,
        &tgt_protos,
        &spec.target_shift,
        &target_space,
        domain_seed("target"),
    );
    let target_val = generate_domain(
        spec,
        DomainTag::TargetVal,
        spec.n_val,
        &tgt_protos,
        &spec.target_shift,
        &target_space,
        domain_seed("target_val"),
    );
    let (target_labeled, target_unlabeled) = split_target(&pool, spec.sigma, domain_seed("split"))?;
    Ok(World {
        spec: spec.clone(),
        seed,
        source,
        bridge,
        target_labeled,
        target_unlabeled,
        target_val,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub images: String,
    pub labels: String,
    pub count: usize,
    pub seed: u64,
}

/// `world.json`: everything needed to reload a generated world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub spec: WorldSpec,
    pub source_space: LabelSpace,
    pub target_space: LabelSpace,
    pub domains: std::collections::BTreeMap<String, DomainEntry>,
}

pub const WORLD_MANIFEST: &str = "world.json";

pub fn write_world(world: &World, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut domains = std::collections::BTreeMap::new();
    for tag in DomainTag::ALL {
        let Some(d) = world.domain(tag) else { continue };
        let images = format!("{}.images.c2at", tag.as_str());
        let labels = format!("{}.labels.c2at", tag.as_str());
        io::write_tensor_file(dir.join(&images), &d.images)?;
        io::write_label_file(dir.join(&labels), &d.labels)?;
        domains.insert(
            tag.as_str().to_string(),
            DomainEntry {
                images,
                labels,
                count: d.len(),
                seed: d.seed,
            },
        );
    }
    let manifest = WorldManifest {
        format: "c2a-world".into(),
        version: 1,
        seed: world.seed,
        spec: world.spec.clone(),
        source_space: world.source_space().clone(),
        target_space: world.target_space().clone(),
        domains,
    };
    let path = dir.join(WORLD_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn read_world(dir: impl AsRef<Path>) -> Result<World> {
    let dir = dir.as_ref();
    let path = dir.join(WORLD_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: WorldManifest = serde_json::from_str(&text)?;
    if manifest.version != 1 {
        return Err(Error::VersionMismatch(manifest.version));
    }
    let load = |tag: DomainTag| -> Result<Option<DomainDataset>> {
        let Some(entry) = manifest.domains.get(tag.as_str()) else {
            return Ok(None);
        };
        let space = match tag {
            DomainTag::Source | DomainTag::Bridge => &manifest.source_space,
            _ => &manifest.target_space,
        };
        Ok(Some(DomainDataset {
            tag,
            images: io::read_tensor_file(dir.join(&entry.images))?,
            labels: io::read_label_file(dir.join(&entry.labels))?,
            label_space: space.clone(),
            seed: entry.seed,
        }))
    };
    let required = |tag: DomainTag| -> Result<DomainDataset> {
        load(tag)?.ok_or_else(|| Error::InvalidArgument(format!("world is missing domain {}", tag.as_str())))
    };
    Ok(World {
        spec: manifest.spec,
        seed: manifest.seed,
        source: required(DomainTag::Source)?,
        bridge: required(DomainTag::Bridge)?,
        target_labeled: load(DomainTag::TargetLabeled)?,
        target_unlabeled: load(DomainTag::TargetUnlabeled)?,
        target_val: required(DomainTag::TargetVal)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_spec() -> WorldSpec {
        WorldSpec {
            n_source: 6,
            n_bridge: 4,
            n_target: 10,
            n_val: 3,
            sigma: 0.3,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn default_spec_is_valid() {
        WorldSpec::default().validate().unwrap();
    }

    #[test]
    fn noiseless_identity_regions_equal_prototypes() {
        let mut spec = small_spec();
        spec.source_shift = DomainShift::identity(0.0);
        let w = generate_world(&spec, 3).unwrap();
        let protos = spec.source_classes.iter().map(|c| c.prototype).collect::<Vec<_>>();
        for (px, &l) in w.source.labels.data().iter().enumerate() {
            let v = &w.source.images.data()[px * 3..px * 3 + 3];
            assert_eq!(v, &protos[l as usize]);
        }
    }

    #[test]
    fn same_seed_is_identical_and_seeds_differ() {
        let a = generate_world(&small_spec(), 9).unwrap();
        let b = generate_world(&small_spec(), 9).unwrap();
        assert_eq!(a, b);
        let c = generate_world(&small_spec(), 10).unwrap();
        assert_ne!(a.source.images, c.source.images);
    }

    #[test]
    fn label_spaces_are_disjoint_and_contiguous() {
        let spec = WorldSpec::default();
        let s = spec.source_space();
        let t = spec.target_space();
        let gs: HashSet<u16> = s.classes.iter().map(|c| c.global_id).collect();
        let gt: HashSet<u16> = t.classes.iter().map(|c| c.global_id).collect();
        assert!(gs.is_disjoint(&gt));
        for space in [&s, &t] {
            for (i, c) in space.classes.iter().enumerate() {
                assert_eq!(c.id as usize, i);
            }
        }
    }

    #[test]
    fn prototype_geometry() {
        let spec = WorldSpec::default();
        for t in &spec.target_classes {
            match t.related_to {
                Some(s) => assert!(dist(&t.prototype, &spec.source_classes[s as usize].prototype) <= spec.epsilon),
                None => assert!(spec
                    .source_classes
                    .iter()
                    .all(|s| dist(&t.prototype, &s.prototype) > 5.0 * spec.epsilon)),
            }
        }
        let mut bad = spec.clone();
        bad.target_classes[2].prototype = [0.6, 0.6, 0.3];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn validation_errors() {
        let mut s = small_spec();
        s.sigma = 1.5;
        assert!(generate_world(&s, 0).is_err());
        let mut s = small_spec();
        s.target_classes.clear();
        assert!(generate_world(&s, 0).is_err());
        let mut s = small_spec();
        s.height = 18;
        assert!(generate_world(&s, 0).is_err());
    }

    #[test]
    fn labels_stay_in_label_space() {
        let mut spec = small_spec();
        spec.ignore_prob = 0.2;
        let w = generate_world(&spec, 4).unwrap();
        for tag in DomainTag::ALL {
            let Some(d) = w.domain(tag) else { continue };
            let c = d.label_space.len() as u16;
            assert!(d.labels.data().iter().all(|&l| l < c || l == IGNORE));
        }
        assert!(w.source.labels.data().contains(&IGNORE));
    }

    #[test]
    fn regions_are_granular_rectangles() {
        let spec = small_spec();
        let mut r = rng::rng(5, &[]);
        for _ in 0..50 {
            let rects = partition(&spec, &mut r);
            let area: usize = rects.iter().map(|r| r.height * r.width).sum();
            assert_eq!(area, spec.height * spec.width);
            for q in rects {
                assert!(q.height >= 2 && q.width >= 2);
                assert_eq!(q.top % spec.granularity, 0);
                assert_eq!(q.left % spec.granularity, 0);
            }
        }
    }

    #[test]
    fn split_counts() {
        let (l, u) = split_indices(100, 0.0, 1).unwrap();
        assert!(l.is_empty() && u.len() == 100);
        let (l, u) = split_indices(100, 1.0, 1).unwrap();
        assert!(l.len() == 100 && u.is_empty());
        let (l, u) = split_indices(100, 0.04, 1).unwrap();
        assert_eq!(l.len(), 4);
        let mut all: Vec<usize> = l.iter().chain(&u).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(split_indices(10, -0.1, 1).is_err());
    }

    #[test]
    fn world_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_world(&small_spec(), 12).unwrap();
        write_world(&w, dir.path()).unwrap();
        let back = read_world(dir.path()).unwrap();
        assert_eq!(back, w);
    }
}
