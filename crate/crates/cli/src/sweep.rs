//! The mode x seed grid with a mean / sd / standard-error summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use c2a_core::clusterinit::init_clusters;
use c2a_core::config::Mode;
use c2a_core::metrics::cluster_diagnostics;
use c2a_core::model::write_checkpoint;
use c2a_core::synth::{generate_world, read_world, World};
use c2a_core::trainer::run_training;
use serde::{Deserialize, Serialize};

use crate::commands::{load_config, load_spec, CliError, CliResult};

pub struct SweepArgs {
    pub config: Option<PathBuf>,
    pub seeds: String,
    pub modes: String,
    pub world: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub out: PathBuf,
    pub max_iter: Option<u64>,
    pub jobs: usize,
    pub expect_ordering: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cell {
    pub mode: Mode,
    pub seed: u64,
    pub final_miou: f64,
    pub final_pixel_acc: f64,
    pub final_largest_cluster_frac: f64,
    pub max_largest_cluster_frac: f64,
    pub related_co_occupancy: f64,
    pub unrelated_co_occupancy: f64,
    pub purity: f64,
    /// `|mu(end) - mu(0)|` and `|mu(0)|` over the whole center matrix.
    pub center_drift: f64,
    pub center_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

/// Paired difference `higher - lower` over seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Gap {
    pub higher: Mode,
    pub lower: Mode,
    pub mean: f64,
    pub se: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub max_iter: u64,
    pub cells: Vec<Cell>,
    pub per_mode: Vec<ModeSummary>,
    pub gaps: Vec<Gap>,
    pub ordering_holds: bool,
}

pub fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::new("invalid_argument", format!("cannot parse seeds {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

fn io_err(p: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", p.display()))
}

fn run_seed(a: &SweepArgs, modes: &[Mode], seed: u64, shared: Option<&World>) -> CliResult<Vec<Cell>> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.seed = seed;
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    let generated;
    let world = match shared {
        Some(w) => w,
        None => {
            generated = generate_world(&load_spec(a.spec.as_deref())?, seed)?;
            &generated
        }
    };
    let seed_dir = a.out.join(format!("seed-{seed}"));
    let init = if modes.iter().any(|m| m.uses_clusters()) {
        let c = init_clusters(world, &cfg)?;
        write_checkpoint(&c, seed_dir.join("init"))?;
        Some(c)
    } else {
        None
    };
    let mut cells = Vec::new();
    for &mode in modes {
        let mut c = cfg.clone();
        c.mode = mode;
        let dir = seed_dir.join(mode.as_str());
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        fs::write(dir.join("config.json"), c.to_pretty_json()).map_err(|e| io_err(&dir, e))?;
        let start = if mode.uses_clusters() { init.clone() } else { None };
        let run = run_training(world, &c, start, Some(&dir))?;
        let last = run.records.last().expect("at least the initial record");
        let d = cluster_diagnostics(&run.checkpoint.model, world)?;
        let mut drift = run.checkpoint.model.clusters.centers.clone();
        drift.scale(-1.0);
        drift.add_assign(&run.initial_centers)?;
        cells.push(Cell {
            mode,
            seed,
            final_miou: last.miou,
            final_pixel_acc: last.pixel_acc,
            final_largest_cluster_frac: last.largest_cluster_frac,
            max_largest_cluster_frac: run.records.iter().map(|r| r.largest_cluster_frac).fold(0.0, f64::max),
            related_co_occupancy: d.related_mean,
            unrelated_co_occupancy: d.unrelated_mean,
            purity: d.purity,
            center_drift: drift.norm(),
            center_norm: run.initial_centers.norm(),
        });
        eprintln!("seed {seed} {mode}: final mIoU {:.4}", last.miou);
    }
    Ok(cells)
}

pub fn run(a: SweepArgs) -> CliResult {
    let seeds = parse_seeds(&a.seeds)?;
    let modes: Vec<Mode> = a
        .modes
        .split(',')
        .map(|m| Mode::parse(m.trim()))
        .collect::<Result<_, _>>()?;
    let base = load_config(a.config.as_deref())?;
    let max_iter = a.max_iter.unwrap_or(base.max_iter);
    let shared = a.world.as_deref().map(read_world).transpose()?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;

    let results: Mutex<Vec<(u64, CliResult<Vec<Cell>>)>> = Mutex::new(Vec::new());
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..a.jobs.clamp(1, seeds.len().max(1)) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    *n += 1;
                    *n - 1
                };
                let Some(&seed) = seeds.get(i) else { break };
                let r = run_seed(&a, &modes, seed, shared.as_ref());
                results.lock().unwrap().push((seed, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(s, _)| *s);
    let mut cells = Vec::new();
    for (_, r) in results {
        cells.extend(r?);
    }

    let finals = |m: Mode| -> Vec<f64> { cells.iter().filter(|c| c.mode == m).map(|c| c.final_miou).collect() };
    let per_mode: Vec<ModeSummary> = modes
        .iter()
        .map(|&m| {
            let v = finals(m);
            let (mean, sd) = mean_sd(&v);
            ModeSummary {
                mode: m,
                n: v.len(),
                mean,
                sd,
                se: sd / (v.len() as f64).sqrt(),
            }
        })
        .collect();
    let gaps: Vec<Gap> = modes
        .windows(2)
        .map(|w| {
            let d: Vec<f64> = finals(w[1]).iter().zip(finals(w[0])).map(|(h, l)| h - l).collect();
            let (mean, sd) = mean_sd(&d);
            let se = sd / (d.len() as f64).sqrt();
            Gap {
                higher: w[1],
                lower: w[0],
                mean,
                se,
                holds: mean > 0.0 && mean > se,
            }
        })
        .collect();
    let ordering_holds = gaps.iter().all(|g| g.holds);
    let summary = Summary {
        seeds,
        modes: modes.clone(),
        max_iter,
        cells,
        per_mode,
        gaps,
        ordering_holds,
    };
    let path = a.out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("json") + "\n").map_err(|e| io_err(&path, e))?;

    println!("{:<14} {:>3} {:>8} {:>8} {:>8}", "mode", "n", "mean", "sd", "se");
    for m in &summary.per_mode {
        println!(
            "{:<14} {:>3} {:>8.4} {:>8.4} {:>8.4}",
            m.mode.as_str(),
            m.n,
            m.mean,
            m.sd,
            m.se
        );
    }
    for g in &summary.gaps {
        println!(
            "gap {} - {}: {:+.4} (paired se {:.4}) {}",
            g.higher,
            g.lower,
            g.mean,
            g.se,
            if g.holds { "holds" } else { "VIOLATED" }
        );
    }
    println!("ordering {}", if ordering_holds { "holds" } else { "violated" });
    if a.expect_ordering && !ordering_holds {
        return Err(CliError::new("ordering", "mode means are not ordered as listed"));
    }
    Ok(())
}
