use std::fs;
use std::path::{Path, PathBuf};

use c2a_core::clusterinit::init_clusters as run_init;
use c2a_core::config::{parse_over_defaults, Mode, TrainConfig};
use c2a_core::metrics::evaluate;
use c2a_core::model::{read_checkpoint, write_checkpoint};
use c2a_core::synth::{generate_world, read_world, write_world, DomainTag, WorldSpec};
use c2a_core::trainer::run_training;

/// A failure reported as `error: code=<code> msg=<msg>`.
pub struct CliError {
    pub code: String,
    pub msg: String,
}

impl From<c2a_core::Error> for CliError {
    fn from(e: c2a_core::Error) -> Self {
        CliError {
            code: e.code().into(),
            msg: e.to_string(),
        }
    }
}

impl CliError {
    pub fn new(code: &str, msg: impl Into<String>) -> Self {
        CliError {
            code: code.into(),
            msg: msg.into(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn load_spec(path: Option<&Path>) -> CliResult<WorldSpec> {
    let spec = match path {
        None => WorldSpec::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
            parse_over_defaults(&WorldSpec::default(), &text)?
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    Ok(match path {
        None => TrainConfig::default(),
        Some(p) => TrainConfig::from_file(p)?,
    })
}

pub fn gen_data(spec: Option<&Path>, out: Option<&Path>, seed: u64, print_spec: bool) -> CliResult {
    if print_spec {
        print!(
            "{}",
            serde_json::to_string_pretty(&WorldSpec::default()).expect("spec serializes") + "\n"
        );
        return Ok(());
    }
    let spec = load_spec(spec)?;
    let out = out.expect("clap requires --out");
    let world = generate_world(&spec, seed)?;
    write_world(&world, out)?;
    println!(
        "wrote world seed={seed} to {} (source={} bridge={} target_labeled={} target_unlabeled={} target_val={})",
        out.display(),
        world.source.len(),
        world.bridge.len(),
        world.target_labeled.as_ref().map_or(0, |d| d.len()),
        world.target_unlabeled.as_ref().map_or(0, |d| d.len()),
        world.target_val.len()
    );
    Ok(())
}

pub fn init_clusters(
    world: &Path,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    pretrain_iters: Option<u64>,
) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = pretrain_iters {
        cfg.pretrain_iters = p;
    }
    cfg.validate()?;
    let world = read_world(world)?;
    let ckpt = run_init(&world, &cfg)?;
    write_checkpoint(&ckpt, out)?;
    println!("wrote initialization checkpoint to {}", out.display());
    Ok(())
}

pub struct TrainArgs {
    pub world: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub mode: Option<String>,
    pub init: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_iter: Option<u64>,
    pub print_defaults: bool,
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = &a.mode {
        cfg.mode = Mode::parse(m)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    cfg.validate()?;
    if a.print_defaults {
        print!("{}", cfg.to_pretty_json());
        return Ok(());
    }
    let world = read_world(a.world.as_deref().expect("clap requires --world"))?;
    let out = a.out.as_deref().expect("clap requires --out");
    let init = a.init.as_deref().map(read_checkpoint).transpose()?;
    fs::create_dir_all(out).map_err(|e| CliError::new("io", format!("{}: {e}", out.display())))?;
    fs::write(out.join("config.json"), cfg.to_pretty_json())
        .map_err(|e| CliError::new("io", format!("{}: {e}", out.display())))?;
    let run = run_training(&world, &cfg, init, Some(out))?;
    if let Some(last) = run.records.last() {
        println!(
            "mode={} seed={} iter={} miou={:.4} pixel_acc={:.4} largest_cluster_frac={:.3}",
            cfg.mode, cfg.seed, last.iter, last.miou, last.pixel_acc, last.largest_cluster_frac
        );
    }
    Ok(())
}

pub fn eval(world: &Path, ckpt: &Path, split: &str, out: Option<&Path>) -> CliResult {
    let tag =
        DomainTag::parse(split).ok_or_else(|| CliError::new("invalid_argument", format!("unknown split {split:?}")))?;
    let world = read_world(world)?;
    let data = world
        .domain(tag)
        .ok_or_else(|| CliError::new("invalid_argument", format!("split {split} is empty in this world")))?;
    let ckpt = read_checkpoint(ckpt)?;
    let r = evaluate(&ckpt.model, data)?;
    let names = data.label_space.names();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
    println!("{:>3}  {:<width$}  {:>7}", "id", "class", "IoU");
    for (i, (n, v)) in names.iter().zip(&r.per_class_iou).enumerate() {
        println!("{i:>3}  {n:<width$}  {v:>7.4}");
    }
    println!(
        "mIoU {:.4}  pixel_acc {:.4}  per_image_mIoU {:.4}",
        r.miou, r.pixel_acc, r.per_image_miou
    );
    let json = serde_json::json!({
        "split": split,
        "classes": names,
        "per_class_iou": r.per_class_iou,
        "miou": r.miou,
        "pixel_acc": r.pixel_acc,
        "per_image_miou": r.per_image_miou,
        "confusion": r.confusion,
    });
    let text = serde_json::to_string_pretty(&json).expect("json") + "\n";
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}
