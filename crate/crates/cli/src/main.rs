//! `blockshadow`: acquire block-shadow datasets and turn them into estimates, plans and scans.

mod commands;
mod error;
mod report;
mod spec;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "blockshadow", version, about = "Block-structured randomized measurement toolkit")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "SHADOW_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a shadow dataset.
    Acquire(AcquireArgs),
    /// Pauli expectations from a dataset.
    Estimate(EstimateArgs),
    /// Purity from a multi-shot dataset.
    Purity(PurityArgs),
    /// Fidelity with a pure target state.
    Fidelity(FidelityArgs),
    /// Pauli expectations with a known bias state subtracted.
    Crm(CrmArgs),
    /// Spectral form factor by the echo protocol.
    Sff(SffArgs),
    /// Amplification factors from a dataset of a known state.
    Calibrate(CalibrateArgs),
    /// Calibrated Pauli expectations.
    Mitigate(MitigateArgs),
    /// Greedy deterministic measurement plan for a list of Paulis.
    Derandomize(DerandomizeArgs),
    /// Kernel-PCA scan across the SSH transition.
    PhaseScan(PhaseScanArgs),
    /// Enumeration self-test of the Clifford machinery.
    Verify,
}

#[derive(Args)]
pub struct AcquireArgs {
    /// zero | plus | ghz | bell | random-circuit(depth[,seed]) | ssh(v,w) | ground(file) | file(state.json)
    #[arg(long)]
    pub state: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    /// clifford_full | mub | stabilizer_basis | haar_dense | identity
    #[arg(long, default_value = "clifford_full")]
    pub ensemble: String,
    /// Number of unitaries.
    #[arg(long)]
    pub nu: usize,
    /// Shots per unitary.
    #[arg(long, default_value_t = 1)]
    pub ns: usize,
    #[arg(long)]
    pub seed: u64,
    /// Seed of the shot stream; defaults to `--seed`.
    #[arg(long)]
    pub shot_seed: Option<u64>,
    /// Noise model JSON.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum StderrKind {
    Analytic,
    Bootstrap,
}

#[derive(Args)]
pub struct EstimatorArgs {
    #[arg(long, value_enum, default_value = "bootstrap")]
    pub stderr: StderrKind,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub bootstrap_seed: u64,
    /// Median of means over this many record groups instead of the plain mean.
    #[arg(long)]
    pub median_of_means: Option<usize>,
}

#[derive(Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pauli list, JSON string array or observable JSON.
    #[arg(long)]
    pub targets: PathBuf,
    /// State the data came from; adds exact values, predicted variances and z-scores.
    #[arg(long)]
    pub state: Option<String>,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PurityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub state: Option<String>,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FidelityArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pure target state.
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub state: Option<String>,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CrmArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Bias state known exactly.
    #[arg(long)]
    pub sigma: String,
    #[arg(long)]
    pub targets: PathBuf,
    /// Measured dataset of the bias state under the same unitaries; otherwise the bias
    /// snapshot is computed classically.
    #[arg(long)]
    pub sigma_data: Option<PathBuf>,
    #[arg(long)]
    pub state: Option<String>,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SffArgs {
    /// Hamiltonian as observable JSON.
    #[arg(long)]
    pub hamiltonian: PathBuf,
    #[arg(long)]
    pub time: f64,
    #[arg(long)]
    pub k: usize,
    /// Number of random unitaries.
    #[arg(long)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// State the calibration data came from.
    #[arg(long, default_value = "zero")]
    pub sigma: String,
    /// Block-support labels such as `110` to calibrate directly instead of per block.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MitigateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Report written by `calibrate`.
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    /// Scale factors above 1.5 down by 0.8.
    #[arg(long)]
    pub clamp: bool,
    /// Bias state; switches to the mitigated bias-subtracted estimator.
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long)]
    pub state: Option<String>,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DerandomizeArgs {
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub eps: f64,
    /// Fixed number of bases.
    #[arg(long, conflicts_with = "min_cover")]
    pub bases: Option<usize>,
    /// Add bases until every target is covered this often.
    #[arg(long)]
    pub min_cover: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub max_bases: usize,
    /// mub | stabilizer_basis
    #[arg(long, default_value = "mub")]
    pub candidates: String,
    /// Drop the factor for bases not chosen yet.
    #[arg(long)]
    pub no_future_factor: bool,
    #[arg(long, default_value_t = 1)]
    pub shots_per_basis: usize,
    /// Plan JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-target coverage CSV.
    #[arg(long)]
    pub coverage: Option<PathBuf>,
    /// Also plan with each of these block sizes and write a basis-count table.
    #[arg(long, value_delimiter = ',')]
    pub compare_k: Vec<usize>,
    #[arg(long)]
    pub compare_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PhaseScanArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    /// Records per grid point.
    #[arg(long, default_value_t = 30)]
    pub records: usize,
    #[arg(long, default_value_t = 80)]
    pub shots: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, default_value_t = 0.2)]
    pub w_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub w_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub w_step: f64,
    #[arg(long, default_value = "clifford_full")]
    pub ensemble: String,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub calibration_records: usize,
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    /// Draw fresh unitaries at every grid point.
    #[arg(long)]
    pub independent_unitaries: bool,
    /// Scan CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit report JSON.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Acquire(a) => commands::acquire(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::Purity(a) => commands::purity(&a),
        Command::Fidelity(a) => commands::fidelity(&a),
        Command::Crm(a) => commands::crm(&a),
        Command::Sff(a) => commands::sff(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Mitigate(a) => commands::mitigate(&a),
        Command::Derandomize(a) => commands::derandomize(&a),
        Command::PhaseScan(a) => commands::phase_scan(&a),
        Command::Verify => {
            if verify::run()? {
                Ok(())
            } else {
                Err(CliError::Runtime("verification failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
