use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Must agree with `designlog::features::BUILTIN_MAPPING_VERSION`.
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (mapping builtin-1)");

#[derive(Parser)]
#[command(name = "designlog", version = VERSION, about = "Predict design success from CAD action logs")]
struct Cli {
    /// Seed for every random choice; each subcommand has its own default.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Do not echo the resolved configuration to stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    /// JSON file with keyword-to-category rules replacing the built-in ones.
    #[arg(long, global = true, value_name = "FILE")]
    mapping: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repair malformed session files and copy the usable ones to --out.
    Clean(CleanArgs),
    /// Turn a directory of sessions into a feature table.
    Encode(EncodeArgs),
    /// Fit a model on a feature table.
    Train(TrainArgs),
    /// Run one of the evaluation sweeps on a cohort directory.
    Experiment(ExperimentArgs),
    /// Generate a synthetic cohort with planted labels.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CleanArgs {
    /// Directory of raw `.json` session files.
    input: PathBuf,
    /// Directory that receives the repaired files.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the per-file repair report.
    #[arg(long, value_name = "CSV")]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Tally,
    Sequence,
}

impl From<KindArg> for designlog::FeatureKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Tally => designlog::FeatureKind::Tally,
            KindArg::Sequence => designlog::FeatureKind::Sequence,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Linear,
    Logistic,
}

impl From<FamilyArg> for designlog::Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Linear => designlog::Family::Linear,
            FamilyArg::Logistic => designlog::Family::Logistic,
        }
    }
}

#[derive(Args)]
struct EncodeArgs {
    /// Directory of clean session files.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "tally")]
    kind: KindArg,
    /// Keep only this leading fraction of each sequence.
    #[arg(long, default_value_t = 1.0, value_parser = fraction)]
    prefix: f64,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_name = "CSV")]
    features: PathBuf,
    /// Success band in kWh for labeling.
    #[arg(long, default_value_t = 10_000.0, value_parser = positive)]
    band: f64,
    #[arg(long, value_enum, default_value = "logistic")]
    family: FamilyArg,
    #[arg(long, default_value_t = 0.2, value_parser = open_fraction)]
    test_fraction: f64,
    /// Keep class proportions equal in train and test.
    #[arg(long)]
    stratify: bool,
    /// Fit on raw features instead of z-scores.
    #[arg(long)]
    no_standardize: bool,
    /// Model file to write.
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
    #[arg(long, value_name = "CSV")]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Hist,
    Linear,
    Band,
    Stability,
    Prefix,
    Baseline,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    which: ExperimentKind,
    /// Directory of session files.
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, default_value_t = 10_000.0, value_parser = positive)]
    band: f64,
    /// Bands for the band sweep, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    bands: Option<Vec<f64>>,
    /// Fractions for the prefix sweep, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = fraction)]
    fractions: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 5_000.0, value_parser = positive)]
    bin_width: f64,
    /// Feature kind for the stability run.
    #[arg(long, value_enum, default_value = "tally")]
    kind: KindArg,
    #[arg(long, default_value_t = 0.2, value_parser = open_fraction)]
    test_fraction: f64,
    #[arg(long)]
    stratify: bool,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    #[arg(long, value_name = "SVG")]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 128)]
    n: usize,
    #[arg(long, default_value_t = 0.7, value_parser = open_fraction)]
    success_rate: f64,
    #[arg(long, default_value_t = 0.9, value_parser = unit)]
    signal: f64,
    #[arg(long, default_value_t = 0.5, value_parser = unit)]
    early_signal: f64,
    /// Probability that a file gets one injected fault.
    #[arg(long, default_value_t = 0.0, value_parser = unit)]
    corrupt: f64,
    #[arg(long, default_value_t = 40)]
    min_len: usize,
    #[arg(long, default_value_t = 300)]
    max_len: usize,
    /// Directory for the generated session files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_name = "CSV")]
    manifest: Option<PathBuf>,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let x: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let x = parse_f64(s)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("{x} must be positive"))
    }
}

/// In `(0, 1]`.
fn fraction(s: &str) -> Result<f64, String> {
    let x = parse_f64(s)?;
    if x > 0.0 && x <= 1.0 {
        Ok(x)
    } else {
        Err(format!("{x} must be in (0, 1]"))
    }
}

/// In `(0, 1)`.
fn open_fraction(s: &str) -> Result<f64, String> {
    let x = parse_f64(s)?;
    if x > 0.0 && x < 1.0 {
        Ok(x)
    } else {
        Err(format!("{x} must be in (0, 1)"))
    }
}

/// In `[0, 1]`.
fn unit(s: &str) -> Result<f64, String> {
    let x = parse_f64(s)?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} must be in [0, 1]"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commands::Failure;
    use clap::CommandFactory;

    #[test]
    fn version_names_builtin_mapping() {
        assert!(VERSION.ends_with(&format!("(mapping {})", designlog::features::BUILTIN_MAPPING_VERSION)));
    }

    #[test]
    fn arguments_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn value_parsers() {
        assert_eq!(fraction("1"), Ok(1.0));
        assert!(fraction("0").is_err());
        assert!(open_fraction("1").is_err());
        assert!(positive("-5").is_err());
        assert!(unit("nan").is_err());
        assert_eq!(unit("0"), Ok(0.0));
    }

    #[test]
    fn failure_exit_codes() {
        assert_eq!(Failure::Data("x".into()).exit_code(), 2);
        assert_eq!(Failure::Usage("x".into()).exit_code(), 1);
    }
}
