//! `memaudit`: run memorization audits, contamination benchmarks and the
//! synthetic corpus generator from the command line.
//!
//! Exit codes: 0 on success, 1 on runtime or I/O failure, 2 on invalid
//! input or configuration.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "memaudit", version, about = "Per-sample memorization audit for generated images")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct GlobalArgs {
    /// Seed for every random choice (bootstrap splits, contamination,
    /// augmentation, synthetic generation).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Worker threads; 0 picks the number of cores.
    #[arg(long, global = true, env = "MEMAUDIT_THREADS", default_value_t = 0)]
    threads: usize,

    /// Default output directory for commands run without `--out`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed images with the reference embedder and write one MATF matrix
    /// per layer plus a feature manifest.
    Embed(commands::EmbedArgs),
    /// Score a test set against a train set and write the per-sample report.
    Audit(commands::AuditArgs),
    /// Replace a fraction of test images with (augmented) train images.
    Inject(commands::InjectArgs),
    /// Run the duplication-level × augmentation sweep.
    Benchmark(commands::BenchmarkArgs),
    /// Generate a procedural train/test image corpus.
    GenSynthetic(commands::GenSyntheticArgs),
    /// Print a summary of an audit report JSON.
    Report(commands::ReportArgs),
}

/// Bad flags or inputs detected by the CLI itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<memaudit::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()?;
    let g = &cli.global;
    match cli.command {
        Command::Embed(a) => commands::embed(g, a),
        Command::Audit(a) => commands::audit(g, a),
        Command::Inject(a) => commands::inject(g, a),
        Command::Benchmark(a) => commands::benchmark(g, a),
        Command::GenSynthetic(a) => commands::gen_synthetic(g, a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
