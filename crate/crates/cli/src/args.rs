use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Clone, Parser)]
#[command(name = "satint", version, about = "Saturating-integrator controller toolkit")]
pub struct Cli {
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Cmd {
    /// Estimate the stability and gain constants of a plant.
    Certify(CertifyArgs),
    /// Simulate the closed loop and write its trajectory.
    Simulate(SimulateArgs),
    /// Sample the set X_T on a grid and select an empirical gain.
    Roa(RoaArgs),
    /// Run a lemma harness on random instances.
    LemmaCheck(LemmaArgs),
    /// Compare the saturating integrator with a clamped-output integrator under a sensor fault.
    CompareWindup(WindupArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PlantArgs {
    /// Built-in plant name (linear1d, osc_cubic, scalar_cubic) or path to a JSON plant config.
    #[arg(long)]
    pub plant: String,
    /// Override the lower input bound.
    #[arg(long, allow_negative_numbers = true)]
    pub umin: Option<f64>,
    /// Override the upper input bound.
    #[arg(long, allow_negative_numbers = true)]
    pub umax: Option<f64>,
    /// Nodes of the equilibrium map.
    #[arg(long, default_value_t = 201)]
    pub map_grid: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Directory for certificate.json, constants.json, map.csv and evidence.csv.
    #[arg(long, default_value = "certify_out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n_dirs: usize,
    /// Largest probe radius; radii run geometrically from 1% of it.
    #[arg(long, default_value_t = 1.0)]
    pub radius_scale: f64,
    #[arg(long, default_value_t = 4000)]
    pub lipschitz_samples: usize,
    #[arg(long, default_value_t = 500)]
    pub fresh_probes: usize,
    /// Also select an empirical gain for this reference.
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub k_start: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    #[arg(long)]
    pub k: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub r: f64,
    /// Initial state as comma-separated values (default: the equilibrium of u0).
    #[arg(long, allow_negative_numbers = true)]
    pub x0: Option<String>,
    /// Initial integrator state (default: the midpoint of the input box).
    #[arg(long, allow_negative_numbers = true)]
    pub u0: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 100.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long, default_value = "traj.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RoaArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Horizon of the constant-input membership test.
    #[arg(long = "T")]
    pub t_roa: f64,
    /// Grid "x1:lo:hi:n,...,xn:lo:hi:n,u:lo:hi:n".
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    #[arg(long, default_value_t = 1.0)]
    pub k_start: f64,
    /// Reference for the convergence test; without it only membership is computed.
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    /// Use this ε₀ instead of the certified one.
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value = "roa.csv")]
    pub out: PathBuf,
    /// Optional JSON summary (nesting report, gains).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LemmaArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// slow-input, tube, sample-hold or gain.
    #[arg(long)]
    pub lemma: String,
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    /// Closed-loop gain for the gain lemma (default: half the certified bound).
    #[arg(long)]
    pub k: Option<f64>,
    /// Multiplies the certified κ (values above 1 break the hypothesis on purpose).
    #[arg(long, default_value_t = 1.0)]
    pub kappa_scale: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value = "lemma_report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct WindupArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    #[arg(long)]
    pub k: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub r: f64,
    /// Initial state (default: the equilibrium of u0).
    #[arg(long, allow_negative_numbers = true)]
    pub x0: Option<String>,
    /// Initial integrator state (default: the steady-state input for r).
    #[arg(long, allow_negative_numbers = true)]
    pub u0: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub t_on: f64,
    #[arg(long, default_value_t = 20.0)]
    pub duration: f64,
    /// Added to the measured output during the fault.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub offset: f64,
    /// Simulated time after the fault ends.
    #[arg(long, default_value_t = 200.0)]
    pub tail: f64,
    /// Recovery band on |y - r|.
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 100)]
    pub record_every: usize,
    #[arg(long, default_value = "windup.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
