use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "affine-hilbert", version, about = "Affine diffusions on the canonical cone: checks, Riccati flows, simulation, Monte Carlo verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the static checkers on a parameter file.
    Validate(ValidateArgs),
    /// Solve the Riccati system for one exponent.
    Riccati(RiccatiArgs),
    /// Simulate an ensemble of paths.
    Simulate(SimulateArgs),
    /// Monte Carlo verification suites.
    Verify(VerifyArgs),
    /// Write or list the shipped family descriptions.
    Families(FamiliesArgs),
    /// Rerun a simulate or verify manifest into a new directory.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    All,
    Admissibility,
    Inward,
    Parallel,
    Existence,
    Uniqueness,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub params: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "all", value_delimiter = ',')]
    pub checks: Vec<Check>,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FreeBlockArg {
    Closed,
    Integrate,
}

#[derive(Debug, Args)]
pub struct RiccatiArgs {
    pub params: PathBuf,
    /// Comma-separated complex exponent, e.g. `-1,0.5i`; one value is repeated.
    #[arg(long, allow_hyphen_values = true)]
    pub u: String,
    #[arg(long)]
    pub t_end: f64,
    /// Fixed-step RK4 with this step.
    #[arg(long, conflicts_with = "atol")]
    pub dt: Option<f64>,
    /// Adaptive Dormand-Prince with this absolute tolerance.
    #[arg(long)]
    pub atol: Option<f64>,
    /// Relative tolerance (defaults to `atol`).
    #[arg(long, requires = "atol")]
    pub rtol: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long, value_enum, default_value = "closed")]
    pub free_block: FreeBlockArg,
    /// Solution CSV; without it only the final row is printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    FullTruncation,
    Absorbed,
    Unclamped,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub params: PathBuf,
    /// Comma-separated initial state; one value is repeated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long)]
    pub paths: u64,
    #[arg(long)]
    pub dt: f64,
    #[arg(long)]
    pub t_end: f64,
    /// Master seed; drawn from entropy and recorded when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "full-truncation")]
    pub scheme: SchemeArg,
    /// Store every k-th step (0 stores the terminal state only).
    #[arg(long, default_value_t = 0)]
    pub store_every: usize,
    #[arg(long, default_value_t = 1)]
    pub substeps: u32,
    #[arg(long, default_value_t = 1)]
    pub freeze_root: u32,
    /// Exact Gaussian sampler (no cone coordinates only).
    #[arg(long)]
    pub exact: bool,
    /// Worker threads; falls back to AFFINE_HILBERT_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    Affine,
    Martingale,
    Joint,
    Uniqueness,
    Cone,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub params: PathBuf,
    #[arg(long, value_enum, default_value = "all", value_delimiter = ',')]
    pub suite: Vec<Suite>,
    /// Initial state; defaults to 0.5 on cone coordinates and 0 elsewhere.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 100_000)]
    pub paths: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 4.0)]
    pub z_crit: f64,
    #[arg(long, value_enum, default_value = "full-truncation")]
    pub scheme: SchemeArg,
    /// Skip the coupled `2 dt` run; the bias allowance becomes 0.
    #[arg(long)]
    pub no_richardson: bool,
    /// Real parts on the cone coordinates of the default exponent batch.
    #[arg(long, default_value_t = 5)]
    pub u_real: usize,
    /// Imaginary grid size on the free coordinates.
    #[arg(long, default_value_t = 3)]
    pub u_imag: usize,
    /// Start perturbation of the uniqueness suite.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Paths per run in the uniqueness suite, which runs `n + 1` ensembles.
    #[arg(long, default_value_t = 1000)]
    pub uniqueness_paths: u64,
    #[arg(long, default_value_t = 1000)]
    pub min_paths: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FamiliesArgs {
    /// Directory for `<name>.json`; without it the names are listed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write explicit parameter files instead of family descriptions.
    #[arg(long)]
    pub expand: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

fn scheme_name(s: SchemeArg) -> &'static str {
    match s {
        SchemeArg::FullTruncation => "full-truncation",
        SchemeArg::Absorbed => "absorbed",
        SchemeArg::Unclamped => "unclamped",
    }
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::All => "all",
        Suite::Affine => "affine",
        Suite::Martingale => "martingale",
        Suite::Joint => "joint",
        Suite::Uniqueness => "uniqueness",
        Suite::Cone => "cone",
    }
}

fn float(x: f64) -> String {
    crate::output::float(x)
}

impl SimulateArgs {
    /// Arguments that reproduce this run, with the seed fixed.
    pub fn resolved(&self, params: &std::path::Path, seed: u64) -> Vec<String> {
        let mut a = vec![
            "simulate".to_string(),
            params.display().to_string(),
            format!("--x0={}", self.x0),
            format!("--paths={}", self.paths),
            format!("--dt={}", float(self.dt)),
            format!("--t-end={}", float(self.t_end)),
            format!("--seed={seed}"),
            format!("--scheme={}", scheme_name(self.scheme)),
            format!("--store-every={}", self.store_every),
            format!("--substeps={}", self.substeps),
            format!("--freeze-root={}", self.freeze_root),
        ];
        if self.exact {
            a.push("--exact".into());
        }
        a
    }
}

impl VerifyArgs {
    pub fn resolved(&self, params: &std::path::Path, seed: u64) -> Vec<String> {
        let suites: Vec<&str> = self.suite.iter().map(|s| suite_name(*s)).collect();
        let mut a = vec![
            "verify".to_string(),
            params.display().to_string(),
            format!("--suite={}", suites.join(",")),
            format!("--t-end={}", float(self.t_end)),
            format!("--paths={}", self.paths),
            format!("--dt={}", float(self.dt)),
            format!("--seed={seed}"),
            format!("--z-crit={}", float(self.z_crit)),
            format!("--scheme={}", scheme_name(self.scheme)),
            format!("--u-real={}", self.u_real),
            format!("--u-imag={}", self.u_imag),
            format!("--eps={}", float(self.eps)),
            format!("--uniqueness-paths={}", self.uniqueness_paths),
            format!("--min-paths={}", self.min_paths),
        ];
        if let Some(x0) = &self.x0 {
            a.push(format!("--x0={x0}"));
        }
        if self.no_richardson {
            a.push("--no-richardson".into());
        }
        a
    }
}
