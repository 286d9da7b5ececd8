use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "foovb",
    about = "Online variational Bayes optimizer with fixed-point updates: experiment runner, verification suites, and benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a key = value config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
    },
    /// Run the verification suites (all of them, or one by name).
    Verify {
        /// Suite name filter, e.g. `solver-pd`.
        filter: Option<String>,
    },
    /// Benchmark seconds/iteration against the Monte-Carlo sample count.
    Bench {
        /// Comma-separated sample counts, e.g. `2,4,8,16`.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        /// Measured iterations per sample count (after 10 warmup iterations).
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// Output directory for bench.csv.
        #[arg(long, default_value = "runs/bench")]
        out: PathBuf,
    },
    /// Export the sigma histogram of a diagonal posterior checkpoint.
    #[command(name = "export-hist")]
    ExportHist {
        /// Path to a posterior checkpoint.
        checkpoint: PathBuf,
        /// Number of histogram bins.
        #[arg(long)]
        bins: usize,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => foovb::cli::cmd_run(&config),
        Command::Verify { filter } => foovb::cli::cmd_verify(filter.as_deref()),
        Command::Bench { k, iters, out } => foovb::cli::cmd_bench(&k, iters, &out),
        Command::ExportHist {
            checkpoint,
            bins,
            out,
        } => foovb::cli::cmd_export_hist(&checkpoint, bins, out.as_deref()),
    };
    std::process::exit(code);
}
