//! `harmfilt`: probabilistic harmonic analysis and C-type filter placement
//! for transmission networks.

mod commands;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "harmfilt", version, about = "Probabilistic harmonic analysis and C-type filter placement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Network in IEEE common data format.
    #[arg(long)]
    pub case: PathBuf,
    /// Study configuration (.toml or .json); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fundamental power flow plus analytical distortion statistics for one scenario.
    Analyze {
        #[command(flatten)]
        study: StudyArgs,
        /// Scenario or solution JSON; the unfiltered network when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Also write power flow, impedance diagonal and injection basis CSVs.
        #[arg(long)]
        dump: bool,
    },
    /// Search for filter locations, quality factors and capacities.
    Place {
        #[command(flatten)]
        study: StudyArgs,
        /// Quantile fractions d⁰, d¹, …; the last repeats.
        #[arg(long, value_delimiter = ',')]
        d_quantile: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        q_grid: Option<Vec<f64>>,
        /// Capacities in MVAR tried when the cap violates constraints.
        #[arg(long, value_delimiter = ',')]
        capacity_grid: Option<Vec<f64>>,
        #[arg(long)]
        max_filters: Option<usize>,
        /// Comma-separated bus ids, or `kv:<base kV>`.
        #[arg(long)]
        candidates: Option<String>,
    },
    /// Monte Carlo simulation of one scenario, optionally paired with the base case.
    Mcs {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = harmfilt_core::mcs::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Buses whose per-sample values are kept (for percentiles, fits and the dump):
        /// `all`, `none` or a comma-separated list.
        #[arg(long, default_value = "all")]
        track: String,
        /// Run the base case with the same random numbers and write the risk curves.
        #[arg(long)]
        compare_base: bool,
        /// Fit gamma and log-normal models to the tracked samples.
        #[arg(long)]
        fit: bool,
        /// Raw per-sample binary dump (little-endian f64 rows).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Resonance mode analysis over a frequency sweep.
    Modal {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 120.0)]
        f_min: f64,
        #[arg(long, default_value_t = 480.0)]
        f_max: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
    /// Element values and impedance sweep of a single C-type filter.
    FilterDesign {
        /// Rated voltage, kV.
        #[arg(long)]
        kv: f64,
        /// Reactive capacity, MVAR.
        #[arg(long)]
        mvar: f64,
        /// Tuning order.
        #[arg(long, default_value_t = 3.0)]
        ht: f64,
        /// Quality factor.
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 50.0)]
        f0: f64,
        #[arg(long, default_value_t = 50.0)]
        h_max: f64,
        #[arg(long, default_value_t = 0.1)]
        h_step: f64,
    },
    /// Before/after p95 comparison from two `analyze` stats files.
    Report {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        treated: PathBuf,
        /// Case table from `place`, turned into an (N_F, E[S_THD]) series.
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let threads = match std::env::var("HARMFILT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                eprintln!("error: HARMFILT_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        },
        Err(_) => None,
    };
    if let Some(n) = threads {
        harmfilt_core::exec::configure_threads(n);
    }
    let result = match cli.command {
        Command::Analyze { study, scenario, dump } => commands::analyze(&study, scenario.as_deref(), dump, threads),
        Command::Place {
            study,
            d_quantile,
            q_grid,
            capacity_grid,
            max_filters,
            candidates,
        } => commands::place(
            &study,
            commands::SearchOverrides {
                d_quantile,
                q_grid,
                capacity_grid,
                max_filters,
                candidates,
            },
            threads,
        ),
        Command::Mcs {
            study,
            scenario,
            samples,
            seed,
            track,
            compare_base,
            fit,
            dump,
        } => commands::mcs(
            &study,
            commands::McsArgs {
                scenario,
                samples,
                seed,
                track,
                compare_base,
                fit,
                dump,
            },
            threads,
        ),
        Command::Modal {
            study,
            scenario,
            f_min,
            f_max,
            step,
        } => commands::modal(&study, scenario.as_deref(), (f_min, f_max, step), threads),
        Command::FilterDesign {
            kv,
            mvar,
            ht,
            q,
            f0,
            h_max,
            h_step,
        } => commands::filter_design(kv, mvar, ht, q, f0, h_max, h_step),
        Command::Report { base, treated, cases, out } => commands::report(&base, &treated, cases.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
