use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};
use sure_ir_core::SolverConfig;

#[derive(Debug, Parser)]
#[command(name = "sure-ir", version, about = "Off-grid line spectral estimation by iterative reweighted least squares")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Seed for every random draw.
    #[arg(long, global = true, env = "SURE_IR_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Report frequencies in radians instead of cycles per sample.
    #[arg(long, global = true)]
    pub radians: bool,

    /// Print the resolved solver configuration to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate frequencies and amplitudes from a single-snapshot signal CSV.
    Estimate(EstimateArgs),
    /// Estimate a shared frequency support from a multi-snapshot CSV.
    EstimateMmv(EstimateMmvArgs),
    /// Generate a random test instance with its ground truth.
    Synth(SynthArgs),
    /// Run the independent verification suites.
    Verify(VerifyArgs),
    /// Run a Monte Carlo sweep over one parameter.
    Sweep(SweepArgs),
    /// Reconstruct a segmented AM signal at several sampling ratios.
    DemoAm(DemoAmArgs),
    /// Print the solver configuration.
    Config(ConfigArgs),
}

/// Solver overrides; each flag beats the `--config` file, which beats the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// Solver configuration JSON; unknown fields are rejected.
    #[arg(long, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Initial regularization weight.
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Scaling factor of the adaptive regularization rule.
    #[arg(long)]
    pub d: Option<f64>,
    /// Relative pruning threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Starting smoothing constant.
    #[arg(long)]
    pub eps_init: Option<f64>,
    /// Floor of the smoothing schedule.
    #[arg(long)]
    pub eps_min: Option<f64>,
    /// Iterations with frozen regularization and no pruning.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Cap on outer iterations.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stopping tolerance on the change of the coefficient vector.
    #[arg(long)]
    pub conv_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Signal CSV with header `index,re,im` and 1-based indices.
    pub input: PathBuf,
    /// Where to write the estimate JSON.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EstimateMmvArgs {
    /// Matrix CSV with header `index,snapshot,re,im`.
    pub input: PathBuf,
    /// Full signal length; defaults to the largest sample index.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 64)]
    pub t: usize,
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    /// Peak signal-to-noise ratio in dB; omit for a noiseless instance.
    #[arg(long)]
    pub psnr: Option<f64>,
    /// Signal CSV to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Ground-truth JSON; defaults to the signal path with a `.json` extension.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Run only this suite.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(sure_ir_core::oracle::SUITES))]
    pub suite: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep definition JSON; replaces `--variable`, `--values` and the instance flags.
    #[arg(long, value_name = "JSON", conflicts_with_all = ["variable", "values"])]
    pub spec: Option<PathBuf>,
    /// Swept parameter: m, k, psnr_db (psnr) or spacing_mu (mu).
    #[arg(long, required_unless_present = "spec")]
    pub variable: Option<String>,
    /// `a,b,c`, `a..b:step` or `a..b`.
    #[arg(long, required_unless_present = "spec", allow_hyphen_values = true)]
    pub values: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 64)]
    pub t: usize,
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    /// Peak signal-to-noise ratio in dB; `inf` for noiseless trials.
    #[arg(long, default_value_t = 25.0)]
    pub psnr: f64,
    /// Frequency spacing coefficient of a two-tone pair.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Trials per sweep value.
    #[arg(long, default_value_t = sure_ir_core::bench::DEFAULT_TRIALS, conflicts_with = "full")]
    pub trials: usize,
    /// Run the full-size protocol.
    #[arg(long)]
    pub full: bool,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Aggregate CSV; defaults to stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Per-trial JSON-lines log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct DemoAmArgs {
    /// Sampling ratios to reconstruct at.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2")]
    pub ratios: Vec<f64>,
    /// Text whose bytes drive the message tones.
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Result CSV; defaults to stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Ignore `--config` and overrides and print the built-in defaults.
    #[arg(long)]
    pub default: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

const SOLVER_SUBCOMMANDS: [&str; 5] = ["estimate", "estimate-mmv", "sweep", "demo-am", "config"];

/// The clap command with solver defaults appended to the help text, taken from
/// [`SolverConfig::default`] so the two cannot drift apart.
pub fn command() -> clap::Command {
    let d = SolverConfig::default();
    let defaults = [
        ("lambda0", d.lambda0.to_string()),
        ("d", d.d.to_string()),
        ("tau", d.tau.to_string()),
        ("eps_init", d.eps_init.to_string()),
        ("eps_min", d.eps_min.to_string()),
        ("warmup", d.warmup_iters.to_string()),
        ("max_iters", d.max_outer_iters.to_string()),
        ("conv_tol", d.conv_tol.to_string()),
    ];
    let mut cmd = Cli::command();
    for sub in SOLVER_SUBCOMMANDS {
        cmd = cmd.mut_subcommand(sub, |mut s| {
            for (id, value) in &defaults {
                s = s.mut_arg(*id, |a| {
                    let help = a.get_help().map(|h| h.to_string()).unwrap_or_default();
                    a.help(format!("{help} [default: {value}]"))
                });
            }
            s
        });
    }
    cmd
}
