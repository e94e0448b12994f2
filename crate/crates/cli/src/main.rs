//! `saint`: generate data, train, evaluate, predict and export attention.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use saint::data::{
    generate_synthetic, parse_log_file, read_records, write_log_file, Dataset, Split, SyntheticConfig, UserHistory,
};
use saint::evaluation::{evaluate, export_attention};
use saint::interaction::Interaction;
use saint::model::Checkpoint;
use saint::training::{train, TrainConfig};
use saint::{Error, Result};

#[derive(Parser)]
#[command(name = "saint", version, about = "Encoder-decoder attention models for knowledge tracing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic response log, its hidden truth and a manifest.
    GenData {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        exercises: usize,
        #[arg(long, default_value_t = 10)]
        categories: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write the best-validation checkpoint and the log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Replaces the seed given in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print AUC and accuracy of a checkpoint on one split as JSON.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print the probability that the next response is correct.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One user's past interactions, in the log CSV format.
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        exercise: String,
        #[arg(long)]
        category: String,
    },
    /// Dump every attention matrix of one forward pass as CSV.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequence in the log CSV format; the last row is the target.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const DATA_FILE: &str = "data.csv";
const TRUTH_FILE: &str = "truth.json";
const MANIFEST_FILE: &str = "manifest.json";
const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const LAST_GOOD_FILE: &str = "last_good.ckpt";
const LOG_FILE: &str = "train_log.jsonl";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn gen_data(config: SyntheticConfig, out: &Path) -> Result<()> {
    let syn = generate_synthetic(config)?;
    let dataset = syn.dataset()?;
    create_dir(out)?;
    write_log_file(&dataset, out.join(DATA_FILE))?;
    syn.truth.save(out.join(TRUTH_FILE))?;
    let manifest = dataset.manifest()?;
    manifest.save(out.join(MANIFEST_FILE))?;
    println!("{}", manifest.to_json()?);
    Ok(())
}

fn run_train(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut config = TrainConfig::load(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    let (dataset, manifest) = parse_log_file(data)?;
    let splits = config.split(&dataset)?;
    create_dir(out)?;
    let log_path = out.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(|e| io_error(&log_path, e))?;
    let mut write_error = None;
    let result = train(&config, &dataset, &splits, &manifest.content_hash, |line| {
        let json = line.to_json();
        println!("{json}");
        if let Err(e) = writeln!(log, "{json}") {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(io_error(&log_path, e));
    }
    match result {
        Ok(report) => {
            let path = out.join(CHECKPOINT_FILE);
            let hash = report.best.save(&path)?;
            eprintln!(
                "best epoch {} (val AUC {:.4}) after {} steps; checkpoint {} sha256 {hash}",
                report.best.epoch,
                report.best.val_auc.unwrap_or(f64::NAN),
                report.steps,
                path.display()
            );
            Ok(())
        }
        Err(Error::Diverged {
            step,
            detail,
            last_good,
        }) => {
            if let Some(ck) = &last_good {
                let path = out.join(LAST_GOOD_FILE);
                ck.save(&path)?;
                eprintln!("last good checkpoint (epoch {}) saved to {}", ck.epoch, path.display());
            }
            Err(Error::Diverged {
                step,
                detail,
                last_good,
            })
        }
        Err(e) => Err(e),
    }
}

/// Reads a single user's interactions, densified with the checkpoint's
/// vocabulary. An empty file (or a bare header) is an empty history.
fn read_history(path: &Path, checkpoint: &Checkpoint) -> Result<Vec<Interaction>> {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    let records = read_records(file)?;
    let dataset = Dataset::from_records_with(records, checkpoint.vocabulary.clone())?;
    match dataset.users.as_slice() {
        [] => Ok(Vec::new()),
        [UserHistory { interactions, .. }] => Ok(interactions.clone()),
        users => Err(Error::Validation(format!(
            "{} holds {} users, expected one",
            path.display(),
            users.len()
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            users,
            exercises,
            categories,
            seed,
            out,
        } => gen_data(SyntheticConfig::new(users, exercises, categories, seed), &out),
        Command::Train {
            config,
            data,
            out,
            seed,
        } => run_train(&config, &data, &out, seed),
        Command::Evaluate {
            checkpoint,
            data,
            split,
        } => {
            let split: Split = split.parse()?;
            let ck = Checkpoint::load(&checkpoint)?;
            let (dataset, _) = parse_log_file(&data)?;
            println!("{}", evaluate(&ck, &dataset, split)?.to_json());
            Ok(())
        }
        Command::Predict {
            checkpoint,
            history,
            exercise,
            category,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let past = read_history(&history, &ck)?;
            let target = ck.vocabulary.exercise_info(&exercise, &category);
            println!("{}", ck.model.predict_next(&past, &target)?);
            Ok(())
        }
        Command::ExportAttention { checkpoint, input, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let sequence = read_history(&input, &ck)?;
            if sequence.is_empty() {
                return Err(Error::Validation(format!("{} holds no interactions", input.display())));
            }
            let dumps = export_attention(&ck, &sequence, &out)?;
            eprintln!("wrote {} matrices to {}", dumps.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
