//! Command-line front end: synthetic data generation, training, evaluation,
//! gradient checking and exports, driven by a TOML run configuration.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use skelreid::synthgait::{PopulationOptions, WalkerSpec};

use commands::{GenerateOptions, GradcheckSettings};
use config::{ConfigArgs, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] skelreid::Error),
    #[error("gradient check failed for {0}")]
    GradCheckFailed(String),
}

impl CliError {
    /// 1 for usage and configuration errors, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "skelreid",
    version,
    about = "Unsupervised skeleton-based person re-identification"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic walker dataset split into train, gallery and probe.
    Generate(GenerateArgs),
    /// Train an encoder by alternating clustering and prototype contrastive updates.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the probe and gallery sets.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full loss.
    Gradcheck(GradcheckArgs),
    /// Write sequence embeddings as CSV.
    ExportEmbeddings(ExportArgs),
    /// Write frame-averaged collaborative relation matrices as CSV.
    ExportRelations(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub identities: usize,
    #[arg(long, default_value_t = 20)]
    pub per_identity: usize,
    /// Frames per recording.
    #[arg(long, default_value_t = 24)]
    pub frames: usize,
    #[arg(long, default_value_t = 6.0)]
    pub frame_rate: f64,
    /// Per-coordinate Gaussian noise (meters).
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.2)]
    pub length_spread: f64,
    #[arg(long, default_value_t = 0.3)]
    pub frequency_spread: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Recordings per identity for train, gallery and probe.
    #[arg(long, value_delimiter = ',', default_value = "10,5,5")]
    pub split: Vec<usize>,
    /// JSON list of walker specs to use instead of a random population.
    #[arg(long)]
    pub walkers: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Coordinates sampled per parameter.
    #[arg(long, default_value_t = 32)]
    pub coords: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Corrupt the analytic gradient of this parameter (negative control).
    #[arg(long, hide = true)]
    pub corrupt_gradient: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to export instead of the configured ones.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

impl GenerateArgs {
    fn options(&self) -> Result<GenerateOptions, CliError> {
        let split: [usize; 3] = self
            .split
            .as_slice()
            .try_into()
            .map_err(|_| CliError::Usage("--split takes three counts, e.g. 10,5,5".into()))?;
        Ok(GenerateOptions {
            identities: self.identities,
            per_identity: self.per_identity,
            frames: self.frames,
            frame_rate: self.frame_rate,
            population: PopulationOptions {
                length_spread: self.length_spread,
                frequency_spread: self.frequency_spread,
                noise_sigma: self.noise,
            },
            seed: self.seed,
            split,
        })
    }
}

fn read_walkers(path: &std::path::Path) -> Result<Vec<WalkerSpec>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| skelreid::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let walkers: Vec<WalkerSpec> =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    for w in &walkers {
        w.validate()
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(walkers)
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // fails only if a pool already exists, e.g. on a second call in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Generate(args) => {
            let walkers = args.walkers.as_deref().map(read_walkers).transpose()?;
            commands::cmd_generate(&args.out, &args.options()?, walkers)?;
        }
        Command::Train(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let summary = commands::cmd_train(&cfg)?;
            if let (Some(first), Some(last)) = (summary.log.first(), summary.log.last()) {
                println!(
                    "trained {} epochs: clusters {} -> {}, loss {} -> {}",
                    summary.log.len(),
                    first.z,
                    last.z,
                    fmt_loss(first.mean_loss),
                    fmt_loss(last.mean_loss)
                );
            }
            println!("checkpoint: {}", summary.checkpoint.display());
        }
        Command::Eval(args) => {
            let cfg = RunConfig::resolve(&args.config)?;
            let report = commands::cmd_eval(&cfg, &args.checkpoint)?;
            print!("{report}");
        }
        Command::Gradcheck(args) => {
            let cfg = RunConfig::resolve(&args.config)?;
            let settings = GradcheckSettings {
                coords_per_param: args.coords,
                step: args.step,
                tolerance: args.tolerance,
            };
            let report = commands::cmd_gradcheck(&cfg, &settings, args.corrupt_gradient.as_deref())?;
            let coords: usize = report.params.iter().map(|p| p.coordinates).sum();
            let straddled: usize = report.params.iter().map(|p| p.straddled).sum();
            if report.passed() {
                println!(
                    "PASS  max rel. error {:.3e} (tolerance {:.0e}) over {coords} coordinates of {} parameters, \
                     {straddled} skipped at activation kinks",
                    report.max_rel_error(),
                    report.tolerance,
                    report.params.len()
                );
            } else {
                let failed: Vec<&str> = report.failures().map(|p| p.name.as_str()).collect();
                for p in report.failures() {
                    println!(
                        "FAIL  {}: max rel. error {:.3e} at coordinate {}",
                        p.name, p.max_rel_error, p.worst_coordinate
                    );
                }
                return Err(CliError::GradCheckFailed(failed.join(", ")));
            }
        }
        Command::ExportEmbeddings(args) => {
            let cfg = RunConfig::resolve(&args.config)?;
            for p in commands::cmd_export_embeddings(&cfg, &args.checkpoint, args.input.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::ExportRelations(args) => {
            let cfg = RunConfig::resolve(&args.config)?;
            for p in commands::cmd_export_relations(&cfg, &args.checkpoint, args.input.as_deref())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn fmt_loss(loss: Option<f64>) -> String {
    loss.map_or("-".into(), |l| format!("{l:.6}"))
}
