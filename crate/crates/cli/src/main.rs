//! `tcur`: tensor CUR decomposition and tCURLoRA experiments from the shell.
//!
//! Exit codes: 0 success, 1 invalid arguments, 2 I/O or checkpoint failure,
//! 3 verification failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tcur_core::{Dims, TcurError};

#[derive(Parser, Debug)]
#[command(name = "tcur", version, about = "Tensor CUR decomposition and tCURLoRA adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded random tensor checkpoint.
    Generate(GenerateArgs),
    /// Decompose a raw tensor checkpoint into CUR factors.
    Decompose(DecomposeArgs),
    /// Rebuild a tensor from a CUR factor checkpoint.
    Reconstruct(ReconstructArgs),
    /// Run the oracle and invariant suite; exits 3 on any failure.
    Verify(VerifyArgs),
    /// Fine-tune an adapter core on a synthetic task.
    Finetune(FinetuneArgs),
    /// Compare full, matrix CUR and tensor CUR fine-tuning on a synthetic task.
    Report(ReportArgs),
    /// Learnable parameter counts for a transformer stacking configuration.
    Params(ParamsArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct OutputArgs {
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Tensor shape as n1,n2,n3.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Dims,
    /// Build an exact tubal-rank tensor as a product of random factors.
    #[arg(long)]
    pub tubal_rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// Raw tensor checkpoint.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    /// Factor checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Singular value cutoff factor for the pseudoinverse.
    #[arg(long, default_value_t = tcur_core::DEFAULT_SV_TOL)]
    pub tol: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Factor checkpoint.
    #[arg(long)]
    pub input: PathBuf,
    /// Raw tensor checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Raw tensor to report the relative error against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = tcur_core::DEFAULT_SV_TOL)]
    pub tol: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Deliberately break one invariant (tprod_oracle, zero_core, gradient,
    /// checksum) to exercise the failure path.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Gd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlantModeArg {
    InSpan,
    OutOfSpan,
}

impl From<PlantModeArg> for tcur_core::PlantMode {
    fn from(p: PlantModeArg) -> Self {
        match p {
            PlantModeArg::InSpan => tcur_core::PlantMode::InSpan,
            PlantModeArg::OutOfSpan => tcur_core::PlantMode::OutOfSpan,
        }
    }
}

#[derive(Args, Debug)]
pub struct TaskArgs {
    /// Tensor shape as n1,n2,n3.
    #[arg(long, value_parser = parse_dims, default_value = "16,16,8")]
    pub dims: Dims,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long, value_enum, default_value_t = PlantModeArg::InSpan)]
    pub plant_mode: PlantModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Step size; defaults to 1/L from power iteration for gd and 1e-2 for adam.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Gd)]
    pub optimizer: OptimizerArg,
    /// Stop once loss <= tol * initial loss.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Adapter checkpoint to write after training.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Report wall time as 0 so equal seeds give identical output.
    #[arg(long)]
    pub omit_timing: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[arg(long, default_value_t = 768)]
    pub d: usize,
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    #[arg(long, default_value_t = 12)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
    /// Rank of the per-matrix CUR baseline.
    #[arg(long, default_value_t = 2)]
    pub baseline_rank: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn parse_dims(s: &str) -> Result<Dims, String> {
    let parts: Vec<usize> = s
        .split([',', 'x'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if a > 0 && b > 0 && c > 0 => Ok((a, b, c)),
        _ => Err(format!("expected three positive sizes n1,n2,n3, got {s:?}")),
    }
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Verification(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Verification(m) => m,
        }
    }
}

impl From<TcurError> for CliError {
    fn from(e: TcurError) -> Self {
        match e {
            TcurError::Io(_) | TcurError::CorruptCheckpoint(_) | TcurError::UnsupportedVersion(_) => {
                CliError::Io(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Verify(a) => commands::verify(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Report(a) => commands::report(a),
        Command::Params(a) => commands::params(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("16,16,8"), Ok((16, 16, 8)));
        assert_eq!(parse_dims("4x3x2"), Ok((4, 3, 2)));
        assert!(parse_dims("4,3").is_err());
        assert!(parse_dims("4,0,2").is_err());
        assert!(parse_dims("a,b,c").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
