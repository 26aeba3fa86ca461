//! `gmeasure`: tables of g-measure quantities on the circle.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::CommonArgs;

#[derive(Debug, Parser)]
#[command(name = "gmeasure", version, about = "g-measures of the doubling map: densities, masses, spectra and scaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Riesz-product densities g_n sampled on a dyadic grid
    Density(CommonArgs),
    /// Masses of the level-k dyadic intervals
    Mass(CommonArgs),
    /// Distribution function F(x) = μ([0, x]) on the level-k grid
    Cdf(CommonArgs),
    /// Fourier–Stieltjes coefficients of the measure
    Fourier(CommonArgs),
    /// Exact autocorrelation of the Thue–Morse sequence
    AutocorrTm(CommonArgs),
    /// Uniqueness conditions and spectral type
    Classify(CommonArgs),
    /// Super-polynomial bounds on F near 0 and the asymptotic slope
    Scaling(CommonArgs),
    /// Property checks for a g-function; exit code 1 on failure
    Validate(CommonArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Density(a) => commands::density(a),
        Command::Mass(a) => commands::mass(a),
        Command::Cdf(a) => commands::cdf(a),
        Command::Fourier(a) => commands::fourier(a),
        Command::AutocorrTm(a) => commands::autocorr_tm(a),
        Command::Classify(a) => commands::classify(a),
        Command::Scaling(a) => commands::scaling(a),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
