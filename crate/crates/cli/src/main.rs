//! tsgcl: train and inspect tri-modal conversation emotion classifiers.
//!
//! Settings merge in precedence order: built-in defaults, the `TSGCL_SEED`
//! environment variable (seed only), `--config` file, command-line flags.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::ConfigMap;
use error::CliResult;

#[derive(Parser)]
#[command(name = "tsgcl", version, about = "Tri-modal conversation emotion classifier")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports and the resolved configuration [default: out].
    #[arg(long, global = true)]
    out: Option<String>,
    /// Random seed for data generation, splits, and initialization [default: 7].
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write train/val/test files.
    GenData {
        /// Number of dialogues before splitting [default: 60].
        #[arg(long)]
        dialogues: Option<usize>,
        /// Utterances per dialogue [default: 10].
        #[arg(long, alias = "utts")]
        utterances: Option<usize>,
        /// Number of emotion classes [default: 6].
        #[arg(long)]
        classes: Option<usize>,
        /// Number of speakers per dialogue [default: 2].
        #[arg(long)]
        speakers: Option<usize>,
        /// Distance between class feature centers [default: 1].
        #[arg(long)]
        separation: Option<f64>,
        /// Feature noise standard deviation [default: 0.5].
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train a model and report metrics on the held-out split.
    Train {
        /// Training data file; omit to train on generated data.
        #[arg(long)]
        data: Option<String>,
        /// Validation data file.
        #[arg(long)]
        val: Option<String>,
        /// Test data file.
        #[arg(long)]
        test: Option<String>,
        /// Label scheme: iemocap, meld, cycling, or custom [default: iemocap].
        #[arg(long)]
        scheme: Option<String>,
        /// Model variant: full, no-gcl, or no-ts [default: full].
        #[arg(long)]
        variant: Option<String>,
        /// Training epochs [default: 200].
        #[arg(long)]
        epochs: Option<usize>,
        /// Adam learning rate [default: 0.001].
        #[arg(long)]
        lr: Option<f64>,
        /// Early-stopping patience in epochs [default: 10].
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Score a predictions file against gold labels.
    Eval {
        /// Gold data file.
        #[arg(long)]
        data: Option<String>,
        /// Predictions file (dialogue, turn, label per line).
        #[arg(long)]
        pred: Option<String>,
        /// Label scheme: iemocap, meld, cycling, or custom [default: iemocap].
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Train every model variant over several seeds and compare.
    Ablate {
        /// Data file; omit to use generated data.
        #[arg(long)]
        data: Option<String>,
        /// Label scheme: iemocap, meld, cycling, or custom [default: iemocap].
        #[arg(long)]
        scheme: Option<String>,
        /// Comma-separated seeds, one run per variant per seed [default: 1,2,3,4,5].
        #[arg(long)]
        seeds: Option<String>,
        /// Training epochs per run [default: 200].
        #[arg(long)]
        epochs: Option<usize>,
        /// Worker threads for the run grid [default: 1].
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print per-dialogue graph statistics.
    GraphStats {
        /// Data file; omit to use generated data.
        #[arg(long)]
        data: Option<String>,
        /// Label scheme: iemocap, meld, cycling, or custom [default: iemocap].
        #[arg(long)]
        scheme: Option<String>,
        /// Cross-modal edge weight factor in (0, 1] [default: 0.5].
        #[arg(long)]
        omega: Option<f64>,
    },
}

/// Copy a present flag into its configuration key.
fn set_opt<T: ToString>(cfg: &mut ConfigMap, key: &str, flag: &Option<T>) {
    if let Some(v) = flag {
        cfg.set(key, v.to_string());
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = ConfigMap::new();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    set_opt(&mut cfg, "out", &cli.out);
    set_opt(&mut cfg, "seed", &cli.seed);
    match &cli.command {
        Command::GenData { dialogues, utterances, classes, speakers, separation, noise } => {
            set_opt(&mut cfg, "synth.dialogues", dialogues);
            set_opt(&mut cfg, "synth.utterances", utterances);
            set_opt(&mut cfg, "synth.classes", classes);
            set_opt(&mut cfg, "synth.speakers", speakers);
            set_opt(&mut cfg, "synth.separation", separation);
            set_opt(&mut cfg, "synth.noise", noise);
        }
        Command::Train { data, val, test, scheme, variant, epochs, lr, patience } => {
            set_opt(&mut cfg, "data.train", data);
            set_opt(&mut cfg, "data.val", val);
            set_opt(&mut cfg, "data.test", test);
            set_opt(&mut cfg, "scheme", scheme);
            set_opt(&mut cfg, "model.variant", variant);
            set_opt(&mut cfg, "train.epochs", epochs);
            set_opt(&mut cfg, "train.lr", lr);
            set_opt(&mut cfg, "train.patience", patience);
        }
        Command::Eval { data, pred, scheme } => {
            set_opt(&mut cfg, "data.test", data);
            set_opt(&mut cfg, "eval.pred", pred);
            set_opt(&mut cfg, "scheme", scheme);
        }
        Command::Ablate { data, scheme, seeds, epochs, jobs } => {
            set_opt(&mut cfg, "data.train", data);
            set_opt(&mut cfg, "scheme", scheme);
            set_opt(&mut cfg, "ablate.seeds", seeds);
            set_opt(&mut cfg, "train.epochs", epochs);
            set_opt(&mut cfg, "jobs", jobs);
        }
        Command::GraphStats { data, scheme, omega } => {
            set_opt(&mut cfg, "data.train", data);
            set_opt(&mut cfg, "scheme", scheme);
            set_opt(&mut cfg, "model.omega", omega);
        }
    }

    let out_dir = commands::prepare_out_dir(&cfg)?;
    match &cli.command {
        Command::GenData { .. } => commands::gen_data(&cfg, &out_dir),
        Command::Train { .. } => commands::train_cmd(&cfg, &out_dir),
        Command::Eval { .. } => commands::eval_cmd(&cfg, &out_dir),
        Command::Ablate { .. } => commands::ablate_cmd(&cfg, &out_dir),
        Command::GraphStats { .. } => commands::graph_stats(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
