//! `eval`: sample transcripts, assemble rater test sets, aggregate questionnaire ratings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anthro_core::conversation::Message;
use anthro_eval::{
    aggregate_ratings, build_sets, export_plot_data, questionnaire, read_ratings_csv, sample_windows, EvalError, Sample,
};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "eval", about = "Evaluation harness for recorded conversations")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Cut transcripts into sliding windows of messages.
    Sample {
        /// Transcript JSON-lines file; repeat to pool several conversations.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 20)]
        width: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw random test sets from a sample pool.
    Sets {
        /// Samples JSON-lines file produced by `sample`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        per_set: usize,
        #[arg(long, default_value_t = 30)]
        n_sets: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate questionnaire ratings per statement.
    Aggregate {
        /// CSV with columns evaluator_id,set_id,statement,score.
        #[arg(long)]
        ratings: PathBuf,
        /// Write plot data (statement,score,count) here.
        #[arg(long)]
        plot_csv: Option<PathBuf>,
    },
    /// Print the rater questionnaire.
    Statements,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|source| CliError::File {
            path: p.clone(),
            source,
        })?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_jsonl<T: serde::Serialize>(items: &[T], out: &Option<PathBuf>) -> Result<(), CliError> {
    let mut w = output(out)?;
    for item in items {
        writeln!(w, "{}", serde_json::to_string(item).expect("serializable"))?;
    }
    w.flush()?;
    Ok(())
}

fn run(args: Args) -> Result<(), CliError> {
    match args.cmd {
        Cmd::Sample {
            inputs,
            width,
            stride,
            out,
        } => {
            let mut pool = Vec::new();
            for path in &inputs {
                let messages = read(path)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(serde_json::from_str::<Message>)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Parse {
                        path: path.clone(),
                        msg: e.to_string(),
                    })?;
                let source = match messages.first() {
                    Some(m) => m.session_id.clone(),
                    None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                };
                pool.extend(sample_windows(&messages, &source, width, stride)?);
            }
            eprintln!("{} samples from {} transcripts", pool.len(), inputs.len());
            write_jsonl(&pool, &out)
        }
        Cmd::Sets {
            input,
            per_set,
            n_sets,
            seed,
            out,
        } => {
            let samples = read(&input)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str::<Sample>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Parse {
                    path: input.clone(),
                    msg: e.to_string(),
                })?;
            write_jsonl(&build_sets(&samples, per_set, n_sets, seed)?, &out)
        }
        Cmd::Aggregate { ratings, plot_csv } => {
            let file = File::open(&ratings).map_err(|source| CliError::File {
                path: ratings.clone(),
                source,
            })?;
            let stats = aggregate_ratings(&read_ratings_csv(file)?);
            let mut stdout = std::io::stdout().lock();
            for (statement, s) in &stats {
                let line = serde_json::json!({"statement": statement, "mean": s.mean, "count": s.count, "histogram": s.histogram});
                writeln!(stdout, "{line}")?;
            }
            if let Some(path) = &plot_csv {
                export_plot_data(&stats, output(&plot_csv)?)?;
                eprintln!("plot data written to {}", path.display());
            }
            Ok(())
        }
        Cmd::Statements => {
            let q = questionnaire();
            for s in &q.statements {
                println!("{}. [{}] {}", s.index, s.dimension, s.text);
            }
            println!("Open question: {}", q.open_question);
            println!("Scale: {} ({}) to {} ({})", q.scale.min, q.scale.min_label, q.scale.max, q.scale.max_label);
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Args::parse()) {
        eprintln!("eval: {e}");
        std::process::exit(1);
    }
}
