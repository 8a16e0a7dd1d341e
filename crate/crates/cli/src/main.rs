//! `ris-inr`: simulate RIS-aided CSI, train INR reconstructions, run
//! baselines and desk-scale experiments.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "ris-inr", version, about = "RIS-aided wireless imaging with implicit neural representations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Master seed (overrides the config's `seed`; default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Single-threaded with timings zeroed, so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize measurements, phase book, operator and ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train an INR on simulated measurements.
    Train(TrainArgs),
    /// Render a trained model at arbitrary resolutions.
    Render {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Resolution as ROWSxCOLS; repeatable.
        #[arg(long = "res", value_parser = parse_res, num_args = 1.., required = true)]
        res: Vec<(usize, usize)>,
    },
    /// Reconstruct with a model-based baseline.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, value_enum)]
        algo: Algo,
    },
    /// Run a desk-scale experiment preset.
    Experiment(ExperimentArgs),
    /// Compare two PGM images.
    Metrics {
        estimate: PathBuf,
        truth: PathBuf,
        /// Peak scattering value; read from the truth's sidecar when absent.
        #[arg(long)]
        sigma_max: Option<f64>,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory written by `simulate`.
    #[arg(long)]
    pub measurements: PathBuf,
    /// Extra renders as ROWSxCOLS.
    #[arg(long = "render-res", value_parser = parse_res, num_args = 1..)]
    pub render_res: Vec<(usize, usize)>,
    /// Continue from `state.rist` in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Epochs between checkpoints (0 saves only at the end).
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Fista,
    #[value(name = "matched_filter")]
    MatchedFilter,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Ablation,
    Comparison,
    Sweep,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Replaces the preset's base setup.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of seeds, counting up from the master seed.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Ablation variants (default: all six).
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    /// Comparison methods (default: inr, fista, matched_filter).
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Sweep distances in wavelengths.
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 20.0, 40.0, 80.0, 160.0])]
    pub distances: Vec<f64>,
    /// Sweep configuration counts K.
    #[arg(long, value_delimiter = ',', default_values_t = [12usize])]
    pub ks: Vec<usize>,
    /// Override the training epoch budget.
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn parse_res(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected ROWSxCOLS, got `{s}`"))?;
    let r: usize = r.trim().parse().map_err(|_| format!("bad row count in `{s}`"))?;
    let c: usize = c.trim().parse().map_err(|_| format!("bad column count in `{s}`"))?;
    if r == 0 || c == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((r, c))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_parsing() {
        assert_eq!(parse_res("64x32"), Ok((64, 32)));
        assert_eq!(parse_res("8X8"), Ok((8, 8)));
        assert!(parse_res("64").is_err());
        assert!(parse_res("0x4").is_err());
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
