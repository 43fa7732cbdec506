//! The `attrib` command-line tool.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{parse_config, RunConfig, RunFlags};

/// Exit code for domain errors (bad data, failed generation, I/O).
pub const EXIT_DOMAIN: i32 = 1;
/// Exit code for usage errors (bad flags or config).
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Domain(_) => EXIT_DOMAIN,
        }
    }
}

macro_rules! domain_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        })*
    };
}

domain_errors!(
    attrib_core::attribution::AttribError,
    attrib_core::eval::EvalError,
    attrib_core::gateway::GatewayError,
    attrib_core::gateway::CacheError,
    attrib_core::imagecore::ImageError,
    attrib_core::similarity::SimilarityError,
    attrib_core::spectral::SpectralError,
    attrib_core::synth::SynthError,
    std::io::Error
);

#[derive(Debug, Parser)]
#[command(
    name = "attrib",
    version,
    about = "Attribute generated images to the model that produced them"
)]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attribute one image to one of the candidate models.
    Attribute(AttributeArgs),
    /// Evaluate attribution on a labeled dataset, optionally sweeping γ or attacks.
    Eval(EvalArgs),
    /// Emit per-model RAPS tables and averaged spectrum heatmaps.
    Spectra(SpectraArgs),
    /// Apply a blur, JPEG or resize transform to every image under a directory.
    Attack(AttackArgs),
    /// Generate extra images for every dataset item from its own model.
    Augment(AugmentArgs),
    /// Synthetic model family tools.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Result JSON path, or `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL manifest with `path`, `label` and optional `prompt` per line.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Report JSON path, or `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Also write a CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Run once per γ, e.g. `10,20,50`.
    #[arg(long, value_name = "G1,G2,...")]
    pub sweep_gamma: Option<String>,
    /// Run once per attack on the test images, e.g. `blur:1.0,jpeg:95,resize:0.5`.
    #[arg(long, value_name = "OP:PARAM,...")]
    pub attacks: Option<String>,
    /// Re-rank the same run under every ranking scheme.
    #[arg(long)]
    pub ablate_schemes: bool,
    /// Leave failed items out of the metrics instead of counting them as misses.
    #[arg(long)]
    pub skip_errors: bool,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct SpectraArgs {
    /// Group images by the labels in this manifest.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub dataset: Option<PathBuf>,
    /// Treat every image under this directory as one group.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Images per group.
    #[arg(long, default_value_t = 1000)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// blur, jpeg or resize.
    #[arg(long)]
    pub op: String,
    /// σ for blur, quality for jpeg, scale for resize.
    #[arg(long)]
    pub param: f64,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n_per_image: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Generate a labeled dataset and prompt registry from the synthetic family.
    Gen(SynthGenArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long, default_value_t = config::DEFAULT_FAMILY_SEED)]
    pub family_seed: u64,
    /// Number of models.
    #[arg(long, default_value_t = config::DEFAULT_FAMILY_SIZE)]
    pub k: usize,
    /// Prompt file, one prompt per line.
    #[arg(long, conflicts_with = "n_prompts", required_unless_present = "n_prompts")]
    pub prompts: Option<PathBuf>,
    /// Use this many built-in prompts instead of a file.
    #[arg(long)]
    pub n_prompts: Option<usize>,
    /// Images per prompt per model.
    #[arg(long, default_value_t = 1)]
    pub per_prompt: usize,
    /// Seed for the dataset images.
    #[arg(long, default_value_t = config::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "usage error",
                CliError::Domain(_) => "error",
            };
            eprintln!("attrib: {kind}: {e}");
            e.exit_code()
        }
    }
}
