//! The alternating optimization loop, its baselines, metrics stream and
//! checkpointing.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::layers::Parameterized;
use crate::losses::{self, LossComponents, LossReport};
use crate::metrics::{self, largest_cluster_frac};
use crate::model::{write_checkpoint, C2aModel, Checkpoint};
use crate::optim::SgdState;
use crate::rng::{rng, tag};
use crate::synth::{DomainDataset, World};
use crate::tensor::{LabelTensor, Tensor};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint";

#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub images: Tensor,
    pub labels: LabelTensor,
}

/// One step's inputs. Bridge and unlabeled target batches carry images
/// only, so no loss can read their labels.
#[derive(Clone, Debug, Default)]
pub struct Batches {
    pub source: Option<LabeledBatch>,
    pub target_labeled: Option<LabeledBatch>,
    pub bridge: Option<Tensor>,
    pub target_unlabeled: Option<Tensor>,
}

/// What a step optimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepKind {
    /// Pixel cross-entropy on the chosen labeled sets only.
    Supervised { source: bool, target: bool },
    /// The full objective; `clustering` false pins its weight to zero.
    Adapt { clustering: bool },
}

impl StepKind {
    pub fn for_mode(mode: Mode) -> StepKind {
        match mode {
            Mode::C2aFull => StepKind::Adapt { clustering: true },
            Mode::LambdaCZero => StepKind::Adapt { clustering: false },
            Mode::TargetOnly | Mode::Finetune => StepKind::Supervised {
                source: false,
                target: true,
            },
        }
    }
}

/// Learning-rate schedules of the three parameter groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub generator: SgdState,
    pub centers: SgdState,
    pub disc: SgdState,
}

impl Optimizers {
    pub fn new(config: &TrainConfig, max_iter: u64, start_iter: u64) -> Self {
        let mk = |lr| {
            let mut s = SgdState::new(lr, config.lr_power, max_iter);
            s.iter = start_iter;
            s
        };
        Optimizers {
            generator: mk(config.lr_backbone),
            centers: mk(config.lr_centers()),
            disc: mk(config.lr_disc),
        }
    }
}

fn pick(data: &DomainDataset, n: usize, seed: u64, iter: u64) -> Vec<usize> {
    let mut r = rng(seed, &[tag("batch"), iter, tag(data.tag.as_str())]);
    (0..n).map(|_| r.random_range(0..data.len())).collect()
}

fn labeled(data: &DomainDataset, n: usize, seed: u64, iter: u64) -> LabeledBatch {
    let idx = pick(data, n, seed, iter);
    LabeledBatch {
        images: data.images.select(&idx),
        labels: data.labels.select(&idx),
    }
}

fn nonempty<'a>(d: &'a Option<DomainDataset>, name: &'static str) -> Result<&'a DomainDataset> {
    d.as_ref().filter(|d| !d.is_empty()).ok_or(Error::MissingBatch(name))
}

/// Draws the batches a step of `kind` needs, with replacement. Sampling is
/// a pure function of `(seed, iter)`, so resuming needs no sampler state.
pub fn sample_batches(world: &World, config: &TrainConfig, kind: StepKind, iter: u64) -> Result<Batches> {
    let (seed, b) = (config.seed, &config.batch);
    let mut out = Batches::default();
    let (src, tgt) = match kind {
        StepKind::Supervised { source, target } => (source, target),
        StepKind::Adapt { .. } => (true, true),
    };
    if src {
        if world.source.is_empty() {
            return Err(Error::MissingBatch("source"));
        }
        out.source = Some(labeled(&world.source, b.source, seed, iter));
    }
    if tgt {
        let tl = nonempty(&world.target_labeled, "target_labeled")?;
        out.target_labeled = Some(labeled(tl, b.target_labeled, seed, iter));
    }
    if let StepKind::Adapt { .. } = kind {
        if world.bridge.is_empty() {
            return Err(Error::MissingBatch("bridge"));
        }
        out.bridge = Some(world.bridge.images.select(&pick(&world.bridge, b.bridge, seed, iter)));
        let tu = nonempty(&world.target_unlabeled, "target_unlabeled")?;
        out.target_unlabeled = Some(tu.images.select(&pick(tu, b.target_unlabeled, seed, iter)));
    }
    Ok(out)
}

fn req<'a, T>(v: &'a Option<T>, name: &'static str) -> Result<&'a T> {
    v.as_ref().ok_or(Error::MissingBatch(name))
}

fn sup_branch(model: &mut C2aModel, batch: &LabeledBatch, source: bool) -> Result<f64> {
    let (map, enc_cache) = model.encoder.forward(&batch.images)?;
    let dec = if source {
        &mut model.decoder_s
    } else {
        &mut model.decoder_t
    };
    let (probs, dec_cache) = dec.forward(&map)?;
    let (loss, g) = losses::sup_loss(&probs, &batch.labels)?;
    let g_map = dec.backward_logits(&dec_cache, &g)?;
    model.encoder.backward(&enc_cache, &g_map)?;
    Ok(loss)
}

/// One iteration: a generator step on the combined objective, then (when
/// adapting) a discriminator step on freshly recomputed probability maps.
pub fn train_step(
    model: &mut C2aModel,
    opt: &mut Optimizers,
    batches: &Batches,
    config: &TrainConfig,
    kind: StepKind,
    iter: u64,
    max_iter: u64,
) -> Result<LossReport> {
    model.zero_grad();
    let mut c = LossComponents::default();
    let (mut lambda_adv, mut lambda_c) = (0.0, 0.0);
    match kind {
        StepKind::Supervised { source, target } => {
            if source {
                c.l_sup_s = sup_branch(model, req(&batches.source, "source")?, true)?;
            }
            if target {
                c.l_sup_t = sup_branch(model, req(&batches.target_labeled, "target_labeled")?, false)?;
            }
            opt.generator.step(model.generator_params());
            opt.centers.iter += 1;
            opt.disc.iter += 1;
        }
        StepKind::Adapt { clustering } => {
            let src = req(&batches.source, "source")?;
            let bridge = req(&batches.bridge, "bridge")?;
            let tu = req(&batches.target_unlabeled, "target_unlabeled")?;
            c.l_sup_s = sup_branch(model, src, true)?;
            c.l_sup_t = sup_branch(model, req(&batches.target_labeled, "target_labeled")?, false)?;
            lambda_adv = config.lambda_adv;
            if clustering {
                lambda_c = losses::lambda_c_schedule(iter as f64 / max_iter.max(1) as f64);
            }

            // bridge: adversarial term through the source decoder
            let (map_a, enc_a) = model.encoder.forward(bridge)?;
            let (probs_a, dec_a) = model.decoder_s.forward(&map_a)?;
            let (l_adv, mut g_probs) = losses::adv_loss(&model.disc, &probs_a)?;
            c.l_adv = l_adv;
            g_probs.scale(lambda_adv);
            let mut g_map_a = model.decoder_s.backward_probs(&dec_a, &g_probs)?;

            // clustering on bridge and unlabeled target cells together
            let (map_u, enc_u) = model.encoder.forward(tu)?;
            let (emb_a, ftn_a) = model.ftn.forward(&map_a)?;
            let (emb_u, ftn_u) = model.ftn.forward(&map_u)?;
            let rows_a = emb_a.len() / emb_a.cols();
            let emb = Tensor::concat(&[
                &emb_a.clone().reshape(&[rows_a, emb_a.cols()])?,
                &emb_u.clone().reshape(&[emb_u.len() / emb_u.cols(), emb_u.cols()])?,
            ])?;
            let terms = losses::cluster_terms(&mut model.clusters, &emb, config.kl_enabled, lambda_c)?;
            c.l_c = terms.l_c;
            c.l_kl = terms.l_kl;
            if lambda_c != 0.0 {
                let (g_a, g_u) = terms.grad_emb.split_at(rows_a);
                g_map_a.add_assign(&model.ftn.backward(&ftn_a, &g_a)?)?;
                let g_map_u = model.ftn.backward(&ftn_u, &g_u)?;
                model.encoder.backward(&enc_u, &g_map_u)?;
            }
            model.encoder.backward(&enc_a, &g_map_a)?;
            opt.generator.step(model.generator_params());
            opt.centers.step(model.cluster_params());

            // discriminator on maps from the updated generator, as constants
            let probs_s = model.decoder_s.forward(&model.encoder.forward(&src.images)?.0)?.0;
            let probs_a = model.decoder_s.forward(&model.encoder.forward(bridge)?.0)?.0;
            model.disc.zero_grad();
            c.l_disc = losses::disc_loss(&mut model.disc, &probs_s, &probs_a)?;
            opt.disc.step(model.disc_params());
        }
    }
    let report = losses::total_objective(c, lambda_adv, lambda_c);
    if !report.total.is_finite() || !report.l_disc.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    Ok(report)
}

/// Supervised-only run of `iters` steps from `model` (pretraining and the
/// source stage of fine-tuning).
pub fn run_supervised(
    world: &World,
    config: &TrainConfig,
    mut model: C2aModel,
    iters: u64,
    source: bool,
    target: bool,
) -> Result<C2aModel> {
    let kind = StepKind::Supervised { source, target };
    let mut opt = Optimizers::new(config, iters, 0);
    // distinct batch stream from the main run
    let mut cfg = config.clone();
    cfg.seed = crate::rng::derive_seed(config.seed, &[tag("supervised"), source as u64, target as u64]);
    for iter in 0..iters {
        let b = sample_batches(world, &cfg, kind, iter)?;
        train_step(&mut model, &mut opt, &b, &cfg, kind, iter, iters)?;
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: u64,
    pub mode: Mode,
    pub seed: u64,
    /// Losses of the step that produced this iterate; absent at iter 0.
    pub losses: Option<LossReport>,
    pub miou: f64,
    pub pixel_acc: f64,
    pub per_class_iou: Vec<f64>,
    pub largest_cluster_frac: f64,
}

/// Target-validation metrics plus cluster occupancy of the current model.
pub fn evaluate_record(
    model: &C2aModel,
    world: &World,
    config: &TrainConfig,
    iter: u64,
    losses: Option<LossReport>,
) -> Result<MetricsRecord> {
    let ev = metrics::evaluate(model, &world.target_val)?;
    let mut cells = metrics::cell_clusters(model, &world.bridge)?;
    if let Some(tu) = &world.target_unlabeled {
        cells.extend(metrics::cell_clusters(model, tu)?);
    }
    Ok(MetricsRecord {
        iter,
        mode: config.mode,
        seed: config.seed,
        losses,
        miou: ev.miou,
        pixel_acc: ev.pixel_acc,
        per_class_iou: ev.per_class_iou,
        largest_cluster_frac: largest_cluster_frac(&cells, model.clusters.k()),
    })
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub checkpoint: Checkpoint,
    pub records: Vec<MetricsRecord>,
    /// Cluster centers when the adaptation stage began.
    pub initial_centers: Tensor,
}

fn train_meta(config: &TrainConfig) -> serde_json::Value {
    serde_json::json!({
        "stage": "train",
        "mode": config.mode,
        "seed": config.seed,
        "config": config,
    })
}

fn is_train_checkpoint(c: &Checkpoint) -> bool {
    c.meta.get("stage").and_then(|s| s.as_str()) == Some("train")
}

/// Initial model and step for a run: resumes a training checkpoint,
/// starts from a given initialization, or builds one for the mode.
fn starting_point(world: &World, config: &TrainConfig, init: Option<Checkpoint>) -> Result<(C2aModel, u64)> {
    if let Some(c) = init {
        if is_train_checkpoint(&c) {
            let mode = c.meta.get("mode").and_then(|m| m.as_str()).unwrap_or("");
            if mode != config.mode.as_str() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint was trained with mode {mode}, not {}",
                    config.mode
                )));
            }
            if c.iter > config.max_iter {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint iter {} is past max_iter {}",
                    c.iter, config.max_iter
                )));
            }
            return Ok((c.model, c.iter));
        }
        return Ok((c.model, 0));
    }
    let model = match config.mode {
        Mode::C2aFull | Mode::LambdaCZero => crate::clusterinit::init_clusters(world, config)?.model,
        Mode::TargetOnly => C2aModel::new(config.model_config(world), config.seed)?,
        Mode::Finetune => {
            let fresh = C2aModel::new(config.model_config(world), config.seed)?;
            run_supervised(world, config, fresh, config.max_iter, true, false)?
        }
    };
    Ok((model, 0))
}

/// Runs (or resumes) training for `config.mode`. When `out_dir` is given,
/// writes the JSONL metrics stream, periodic checkpoints and the final
/// checkpoint there.
pub fn run_training(
    world: &World,
    config: &TrainConfig,
    init: Option<Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<RunOutput> {
    config.validate()?;
    let (mut model, start) = starting_point(world, config, init)?;
    let expected = config.model_config(world);
    if model.config != expected {
        return Err(Error::InvalidArgument(
            "initial model does not match the world and config".into(),
        ));
    }
    let initial_centers = model.clusters.centers.clone();
    let kind = StepKind::for_mode(config.mode);
    let max_iter = config.max_iter;
    let mut opt = Optimizers::new(config, max_iter, start);
    let mut records = Vec::new();
    let mut sink = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            Some((fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let mut emit = |rec: MetricsRecord, records: &mut Vec<MetricsRecord>| -> Result<()> {
        if let Some((f, path)) = sink.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&*path, e))?;
        }
        records.push(rec);
        Ok(())
    };
    if start == 0 {
        emit(evaluate_record(&model, world, config, 0, None)?, &mut records)?;
    }
    for iter in start..max_iter {
        let b = sample_batches(world, config, kind, iter)?;
        let report = train_step(&mut model, &mut opt, &b, config, kind, iter, max_iter)?;
        let done = iter + 1;
        if done % config.eval_interval == 0 || done == max_iter {
            emit(
                evaluate_record(&model, world, config, done, Some(report))?,
                &mut records,
            )?;
        }
        if let Some(dir) = out_dir {
            if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 && done < max_iter {
                let mut c = Checkpoint::new(model.clone(), done);
                c.meta = train_meta(config);
                write_checkpoint(&c, dir.join(format!("checkpoint-{done:06}")))?;
            }
        }
    }
    let mut checkpoint = Checkpoint::new(model, max_iter.max(start));
    checkpoint.meta = train_meta(config);
    if let Some(dir) = out_dir {
        write_checkpoint(&checkpoint, dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(RunOutput {
        checkpoint,
        records,
        initial_centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_world, WorldSpec};

    fn tiny_world() -> World {
        let mut spec = WorldSpec::default();
        spec.n_source = 12;
        spec.n_bridge = 8;
        spec.n_target = 10;
        spec.n_val = 6;
        spec.sigma = 0.3;
        generate_world(&spec, 1).unwrap()
    }

    fn tiny_config(mode: Mode) -> TrainConfig {
        let mut c = TrainConfig::default();
        c.mode = mode;
        c.max_iter = 6;
        c.pretrain_iters = 4;
        c.eval_interval = 3;
        c
    }

    #[test]
    fn lambda_c_zero_mode_reports_zero_weight() {
        let w = tiny_world();
        let out = run_training(&w, &tiny_config(Mode::LambdaCZero), None, None).unwrap();
        assert!(out.records.iter().filter_map(|r| r.losses).all(|l| l.lambda_c == 0.0));
        assert_eq!(out.checkpoint.model.clusters.centers, out.initial_centers);
    }

    #[test]
    fn zero_learning_rates_leave_parameters_unchanged() {
        let w = tiny_world();
        let mut cfg = tiny_config(Mode::C2aFull);
        cfg.lr_backbone = 0.0;
        cfg.lr_centers = Some(0.0);
        cfg.lr_disc = 0.0;
        let mut model = C2aModel::new(cfg.model_config(&w), 3).unwrap();
        let before = model.clone();
        let mut opt = Optimizers::new(&cfg, 10, 0);
        let kind = StepKind::for_mode(cfg.mode);
        let b = sample_batches(&w, &cfg, kind, 5).unwrap();
        let r = train_step(&mut model, &mut opt, &b, &cfg, kind, 5, 10).unwrap();
        assert!(r.total.is_finite() && r.l_disc.is_finite());
        let mut m = model.clone();
        let mut bm = before.clone();
        assert_eq!(
            crate::gradcheck::flatten_values(&mut m),
            crate::gradcheck::flatten_values(&mut bm)
        );
    }

    #[test]
    fn max_iter_zero_emits_only_initial_record() {
        let w = tiny_world();
        let mut cfg = tiny_config(Mode::TargetOnly);
        cfg.max_iter = 0;
        let out = run_training(&w, &cfg, None, None).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].iter, 0);
        assert!(out.records[0].losses.is_none());
    }

    #[test]
    fn missing_batches_are_reported() {
        let mut w = tiny_world();
        w.target_labeled = None;
        let cfg = tiny_config(Mode::TargetOnly);
        let err = run_training(&w, &cfg, None, None).unwrap_err();
        assert!(matches!(err, Error::MissingBatch("target_labeled")));
    }
}
