use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod flags;

use flags::ConfigFlags;

/// Gaussian metric-learning recommender with adaptive margins.
#[derive(Parser)]
#[command(name = "pmlam", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ingest ratings, filter, and write the dataset cache and folds.
    Prepare {
        /// Ratings file: user, item, rating[, timestamp] per line.
        #[arg(long, required_unless_present = "planted", conflicts_with = "planted")]
        ratings: Option<PathBuf>,
        /// Generate a planted-cluster dataset instead:
        /// USERS,ITEMS,CLUSTERS,PER_USER,CROSS (seeded by --seed).
        #[arg(long, value_name = "SPEC")]
        planted: Option<String>,
        /// Item labels, `<item id>\t<label>|<label>` per line.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Train one fold and write a checkpoint and loss trace.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Evaluate a checkpoint on its fold's held-out interactions.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cutoffs, comma separated (default: the checkpoint's).
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// CSV destination; printed only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-K unseen items for one user.
    Recommend {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// External user id.
        #[arg(long)]
        user: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Train and evaluate ablation variants across seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
        variants: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Reported cutoff.
        #[arg(long, default_value_t = 10)]
        at: usize,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Generated margins for same-label versus different-label negatives.
    CaseStudy {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `labels.tsv` in the dataset directory.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Users to sample (0 = all).
        #[arg(long, default_value_t = 0)]
        users: usize,
        #[arg(long, default_value_t = 5)]
        per_user: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<pmlam::Error>() {
        Some(pmlam::Error::NonFinite { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Prepare {
            ratings,
            planted,
            labels,
            out,
            config,
        } => commands::prepare(ratings.as_deref(), planted.as_deref(), labels.as_deref(), &out, &config),
        Cmd::Train { data, out, config } => commands::train(&data, &out, &config),
        Cmd::Evaluate {
            data,
            checkpoint,
            ks,
            out,
        } => commands::evaluate(&data, &checkpoint, ks, out.as_deref()),
        Cmd::Recommend {
            data,
            checkpoint,
            user,
            k,
        } => commands::recommend(&data, &checkpoint, &user, k),
        Cmd::Ablate {
            data,
            out,
            variants,
            seeds,
            at,
            config,
        } => commands::ablate(&data, &out, &variants, &seeds, at, &config),
        Cmd::CaseStudy {
            data,
            checkpoint,
            labels,
            out,
            users,
            per_user,
            seed,
        } => commands::case_study(&data, &checkpoint, labels.as_deref(), out.as_deref(), users, per_user, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
