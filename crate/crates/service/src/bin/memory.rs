//! `memory`: inspect or consolidate a session's persisted memory store.

use std::path::PathBuf;

use anthro_core::memory::MemoryStore;
use anthro_core::persist::DataDir;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "memory", about = "Inspect or consolidate persisted memory")]
struct Args {
    #[arg(long, default_value = "./data", global = true)]
    data_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Print memory pieces as JSON lines.
    Inspect {
        session: String,
        /// Include superseded pieces.
        #[arg(long)]
        all: bool,
    },
    /// Merge duplicates and resolve conflicts, then rewrite the store.
    Consolidate { session: String },
}

fn open(data: &DataDir, session: &str) -> Result<MemoryStore, String> {
    let path = data.memory_file(session);
    if !path.exists() {
        return Err(format!("no memory store for session {session} under {}", data.root().display()));
    }
    MemoryStore::open(path).map_err(|e| e.to_string())
}

fn run(args: Args) -> Result<(), String> {
    let data = DataDir::new(&args.data_dir);
    match args.cmd {
        Cmd::Inspect { session, all } => {
            let store = open(&data, &session)?;
            let pieces: Vec<_> = if all { store.pieces().collect() } else { store.live().collect() };
            for p in pieces {
                println!("{}", serde_json::to_string(p).map_err(|e| e.to_string())?);
            }
        }
        Cmd::Consolidate { session } => {
            let mut store = open(&data, &session)?;
            let report = store.consolidate().map_err(|e| e.to_string())?;
            store.persist().map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string(&report).map_err(|e| e.to_string())?);
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Args::parse()) {
        eprintln!("memory: {e}");
        std::process::exit(1);
    }
}
