use clap::{Parser, Subcommand};
use deis_cli::{
    cmd_coeffs, cmd_converge, cmd_curves, cmd_profile, cmd_sample, load_context, CliError,
    SampleFlags,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "deis",
    version,
    about = "Exponential-integrator diffusion sampling experiments on analytic oracles"
)]
struct Cli {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect the score-magnitude profile and write profile.csv
    Profile {
        /// Output path (default: <output.dir>/profile.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the extrapolation-coefficient table as CSV
    Coeffs {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run one sampler and write the terminal batch as CSV
    Sample {
        #[command(flatten)]
        flags: RunFlags,
        /// Batch size (default: sampling.batch)
        #[arg(long)]
        batch: Option<usize>,
        /// Evaluation seed (default: sampling.seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the configured error-vs-NFE sweep; writes report.csv and report.json
    Converge {
        /// Load the score-magnitude profile from CSV instead of collecting it
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Write the (t, s_bar, sigma, product) diagnostic curves as CSV
    Curves {
        /// Load the score-magnitude profile from CSV instead of collecting it
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Output path (default: <output.dir>/curves.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunFlags {
    /// Sampler: deis | euler | ddim
    #[arg(long)]
    sampler: Option<String>,
    /// Polynomial order of the exponential integrator
    #[arg(long)]
    order: Option<usize>,
    /// Reparameterisation: identity | sigma | score-norm
    #[arg(long)]
    reparam: Option<String>,
    /// Score-magnitude profile CSV (required context for score-norm)
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Number of score evaluations (grid steps)
    #[arg(long)]
    nfe: Option<usize>,
    /// Time grid: quadratic | linear
    #[arg(long)]
    grid: Option<String>,
    /// Output path
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn into_sample_flags(self) -> SampleFlags {
        SampleFlags {
            sampler: self.sampler,
            order: self.order,
            reparam: self.reparam,
            profile: self.profile,
            nfe: self.nfe,
            grid: self.grid,
            batch: None,
            seed: None,
            out: self.out,
        }
    }
}

fn dispatch(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let ctx = load_context(&cli.config)?;
    match cli.command {
        Command::Profile { out } => Ok(vec![cmd_profile(&ctx, out)?]),
        Command::Coeffs { flags } => Ok(vec![cmd_coeffs(&ctx, &flags.into_sample_flags())?]),
        Command::Sample { flags, batch, seed } => {
            let mut flags = flags.into_sample_flags();
            flags.batch = batch;
            flags.seed = seed;
            Ok(vec![cmd_sample(&ctx, &flags)?])
        }
        Command::Converge { profile } => {
            let (csv, json) = cmd_converge(&ctx, profile.as_deref())?;
            Ok(vec![csv, json])
        }
        Command::Curves { profile, out } => Ok(vec![cmd_curves(&ctx, profile.as_deref(), out)?]),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
