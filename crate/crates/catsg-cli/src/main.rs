//! `catsg`: reproducible pipeline runs over synthetic surgical scene graph
//! datasets — generation, relation-model training/evaluation, and
//! phase/technique recognition.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
//! 4 checkpoint/ontology fingerprint mismatch.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catsg_core::relnet::Variant;

#[derive(Parser)]
#[command(name = "catsg", version, about = "Surgical scene graph pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset directory (defaults to $CATSG_DATA_DIR).
    #[arg(long, env = "CATSG_DATA_DIR")]
    data: PathBuf,
    /// Ontology config file; the shipped default when omitted.
    #[arg(long)]
    ontology: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: JSONL videos, stats, config snapshot.
    Generate {
        /// Output directory for the dataset.
        #[arg(long)]
        out: PathBuf,
        /// Simulator config file (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of videos; overrides the config file.
        #[arg(long)]
        videos: Option<usize>,
        /// Ontology config file; the shipped default when omitted.
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
    /// Print dataset statistics.
    Stats {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train the semantic relation heads.
    TrainRel {
        #[command(flatten)]
        data: DataArgs,
        /// Run directory root; a config-hash-named subdirectory is created.
        #[arg(long)]
        out: PathBuf,
        /// catsgg or catsgg+ (chunk max-pooling).
        #[arg(long, value_parser = parse_variant, default_value = "catsgg")]
        variant: Variant,
        /// Training config file (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Query noise override (defaults to the dataset's sigma).
        #[arg(long)]
        noise: Option<f64>,
        /// Video split to train on.
        #[arg(long, value_parser = ["train", "all"], default_value = "train")]
        split: String,
    },
    /// Evaluate relation prediction against ground truth.
    EvalRel {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Relation head checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_variant, default_value = "catsgg")]
        variant: Variant,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, value_parser = ["test", "train", "all"], default_value = "test")]
        split: String,
    },
    /// Train phase or technique recognition on dynamic scene graphs.
    TrainTask {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = ["phase", "technique"])]
        task: String,
        /// Window preset: single, w30s90, 10s@5fps, 50s@1fps.
        #[arg(long, default_value = "w30s90")]
        window: String,
        /// Drop grounding features (class one-hot only).
        #[arg(long)]
        no_spatial: bool,
        /// Read input graphs from this directory instead of --data
        /// (e.g. predicted graphs).
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
    },
    /// Evaluate a trained task classifier.
    EvalTask {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["phase", "technique"])]
        task: String,
        #[arg(long, default_value = "w30s90")]
        window: String,
        #[arg(long)]
        no_spatial: bool,
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long, value_parser = ["test", "train", "all"], default_value = "test")]
        split: String,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s {
        "catsgg" => Ok(Variant::CatSgg),
        "catsgg+" => Ok(Variant::CatSggPlus),
        other => Err(format!("unknown variant {other:?} (catsgg|catsgg+)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            out,
            config,
            seed,
            videos,
            ontology,
        } => commands::generate(out, config, seed, videos, ontology),
        Command::Stats { data } => commands::stats(data.data, data.ontology),
        Command::TrainRel {
            data,
            out,
            variant,
            config,
            seed,
            epochs,
            noise,
            split,
        } => commands::train_rel(
            data.data,
            data.ontology,
            out,
            variant,
            config,
            seed,
            epochs,
            noise,
            &split,
        ),
        Command::EvalRel {
            data,
            out,
            checkpoint,
            variant,
            noise,
            split,
        } => commands::eval_rel(
            data.data,
            data.ontology,
            out,
            checkpoint,
            variant,
            noise,
            &split,
        ),
        Command::TrainTask {
            data,
            out,
            task,
            window,
            no_spatial,
            graphs,
            seed,
            epochs,
            hidden,
            heads,
        } => commands::train_task_cmd(
            data.data,
            data.ontology,
            out,
            &task,
            &window,
            no_spatial,
            graphs,
            seed,
            epochs,
            hidden,
            heads,
        ),
        Command::EvalTask {
            data,
            out,
            checkpoint,
            task,
            window,
            no_spatial,
            graphs,
            split,
        } => commands::eval_task_cmd(
            data.data,
            data.ontology,
            out,
            checkpoint,
            &task,
            &window,
            no_spatial,
            graphs,
            &split,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
