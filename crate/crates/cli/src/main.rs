//! `c2a`: data generation, cluster initialization, training, evaluation,
//! multi-seed sweeps and plotting.

mod commands;
mod plot;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "c2a",
    version,
    about = "Few-shot domain adaptation across disjoint label spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world (five domains) into a directory.
    GenData {
        /// World spec JSON (partial documents are merged over the defaults).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory.
        #[arg(long, required_unless_present = "print_spec")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the default world spec and exit.
        #[arg(long)]
        print_spec: bool,
    },
    /// Pretrain, fit PCA and k-means, and write the initialization checkpoint.
    InitClusters {
        #[arg(long)]
        world: PathBuf,
        /// Training config JSON (partial documents allowed).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's pretrain_iters.
        #[arg(long)]
        pretrain_iters: Option<u64>,
    },
    /// Train one model; writes metrics.jsonl and the final checkpoint.
    Train {
        #[arg(long, required_unless_present = "print_defaults")]
        world: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// c2a_full, lambda_c_zero, target_only or finetune (overrides the config).
        #[arg(long)]
        mode: Option<String>,
        /// Initialization or resume checkpoint directory.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_defaults")]
        out: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's max_iter.
        #[arg(long)]
        max_iter: Option<u64>,
        /// Print the effective default config and exit.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Evaluate a checkpoint on one split; prints a per-class IoU table.
    Eval {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// source, bridge, target_labeled, target_unlabeled or target_val.
        #[arg(long, default_value = "target_val")]
        split: String,
        /// Also write the result as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the mode x seed grid and summarize final target-val mIoU.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds, or a range like 0..5.
        #[arg(long, default_value = "0..5")]
        seeds: String,
        /// Comma-separated modes.
        #[arg(long, default_value = "target_only,lambda_c_zero,c2a_full")]
        modes: String,
        /// Use this world for every seed instead of generating one per seed.
        #[arg(long)]
        world: Option<PathBuf>,
        /// World spec for per-seed generation.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's max_iter.
        #[arg(long)]
        max_iter: Option<u64>,
        /// Worker threads; cells are independent.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Fail unless the listed modes' means are strictly decreasing in the
        /// reverse of the given order, each gap above one standard error.
        #[arg(long)]
        expect_ordering: bool,
    },
    /// Draw mIoU and loss curves of one or more runs as a standalone SVG.
    Plot {
        /// Run directories containing metrics.jsonl.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
            eprintln!(
                "error: code=usage msg={}",
                one_line(first.trim_start_matches("error: "))
            );
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenData {
            spec,
            out,
            seed,
            print_spec,
        } => commands::gen_data(spec.as_deref(), out.as_deref(), seed, print_spec),
        Command::InitClusters {
            world,
            config,
            out,
            seed,
            pretrain_iters,
        } => commands::init_clusters(&world, config.as_deref(), &out, seed, pretrain_iters),
        Command::Train {
            world,
            config,
            mode,
            init,
            out,
            seed,
            max_iter,
            print_defaults,
        } => commands::train(commands::TrainArgs {
            world,
            config,
            mode,
            init,
            out,
            seed,
            max_iter,
            print_defaults,
        }),
        Command::Eval {
            world,
            ckpt,
            split,
            out,
        } => commands::eval(&world, &ckpt, &split, out.as_deref()),
        Command::Sweep {
            config,
            seeds,
            modes,
            world,
            spec,
            out,
            max_iter,
            jobs,
            expect_ordering,
        } => sweep::run(sweep::SweepArgs {
            config,
            seeds,
            modes,
            world,
            spec,
            out,
            max_iter,
            jobs,
            expect_ordering,
        }),
        Command::Plot { runs, out } => plot::run(&runs, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: code={} msg={}", e.code, one_line(&e.msg));
            ExitCode::FAILURE
        }
    }
}
