//! Command-line harness: synthetic generation, single completions on tensor
//! files, deterministic trial sweeps, and CSV aggregation.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use run::SweepConfig;

#[derive(Parser)]
#[command(name = "deli", version, about = "Low CP-rank tensor completion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Adaptive,
    Nonadaptive,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic low-rank tensor and write it to a text file.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output tensor file (text format).
        #[arg(long)]
        out: PathBuf,
        /// Optional directory for the ground-truth factor CSVs.
        #[arg(long)]
        factors_dir: Option<PathBuf>,
    },
    /// Complete a dense tensor file and write the recovered factors.
    Complete {
        /// Input tensor file (text format, `dims:` header).
        tensor: PathBuf,
        #[arg(long)]
        rank: usize,
        /// Coherence estimate for the sampling probabilities.
        #[arg(long)]
        mu0: f64,
        #[arg(long, value_enum, default_value_t = VariantArg::Adaptive)]
        variant: VariantArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Slice-combination count per diagonalization round.
        #[arg(long)]
        s: Option<usize>,
        /// Retry rounds per recovery stage.
        #[arg(long)]
        m: Option<usize>,
        /// Per-slice sample budget as a fraction of slice size.
        #[arg(long)]
        gamma: Option<f64>,
        /// Oversampling multiple capping the sparse-region probability.
        #[arg(long)]
        delta_oversample: Option<f64>,
        /// Additive Gaussian noise level for the oracle, in dB.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Refinement sweeps after the direct pipeline (0 disables).
        #[arg(long, default_value_t = 0)]
        als_iters: usize,
        /// Output directory for report.json and factor CSVs.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a sweep of trials described by a JSON config; emit one CSV row per trial.
    Sweep {
        /// JSON config file; see README for the schema.
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate per-trial CSVs into one summary row per configuration.
    Report {
        /// Input CSV files produced by `sweep`.
        inputs: Vec<PathBuf>,
        /// Output summary CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successful exits; bad flags are usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate { n, d, r, alpha, seed, out, factors_dir } => {
            run::generate(n, d, r, alpha, seed, &out, factors_dir.as_deref())
        }
        Command::Complete {
            tensor,
            rank,
            mu0,
            variant,
            seed,
            s,
            m,
            gamma,
            delta_oversample,
            snr_db,
            als_iters,
            out_dir,
        } => run::complete_file(
            &tensor,
            run::CompleteArgs {
                rank,
                mu0,
                nonadaptive: matches!(variant, VariantArg::Nonadaptive),
                seed,
                s,
                m,
                gamma,
                delta_oversample,
                snr_db,
                als_iters,
            },
            &out_dir,
        ),
        Command::Sweep { config, out } => {
            SweepConfig::load(&config).and_then(|cfg| run::sweep(&cfg, &out))
        }
        Command::Report { inputs, out } => run::report(&inputs, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
