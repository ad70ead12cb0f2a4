//! Command-line grammar. Every struct here is echoed into the run manifest.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "morseland", version, about = "Gradient landscapes: critical points, connection graphs, bifurcations and noise")]
pub struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "MORSELAND_THREADS")]
    pub threads: Option<usize>,

    /// Directory receiving reports, data files and manifest.json.
    #[arg(long, global = true, default_value = "morseland-out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Critical points, connection DAG, Morse and index checks, boundary transversality.
    Analyze(AnalyzeArgs),
    /// Connection DAG as JSON and Graphviz.
    Dag(DagArgs),
    /// One-parameter sweep with event location, or a two-parameter scan.
    Sweep(SweepArgs),
    /// Gibbs density on a grid, optionally with zero-noise limit weights.
    Gibbs(GibbsArgs),
    /// Long Euler-Maruyama run compared with the Gibbs measure.
    Langevin(LangevinArgs),
    /// Freidlin-Wentzell action of simulated paths.
    Action(ActionArgs),
    /// Classic continuous Hopfield networks.
    #[command(subcommand)]
    Hopfield(HopfieldCmd),
    /// Modern (softmax) Hopfield networks.
    #[command(subcommand)]
    Mhn(MhnCmd),
    /// Gaussian-mixture diffusion models.
    #[command(subcommand)]
    Diffusion(DiffusionCmd),
}

/// Landscape selection: a builtin by name or a JSON spec (inline or file).
#[derive(Debug, Clone, Args, Serialize)]
pub struct LandscapeArgs {
    /// dual-well, dual-cusp, saddle-node-family or flip-family.
    #[arg(long, conflicts_with = "landscape")]
    pub builtin: Option<String>,

    /// Family parameters of the builtin, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub params: Vec<f64>,

    /// Landscape JSON, inline or as a file path.
    #[arg(long)]
    pub landscape: Option<String>,

    /// Linear tilt added to the potential, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub tilt: Vec<f64>,

    /// Override of the domain radius.
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub land: LandscapeArgs,
    /// Seed lattice points per axis for the critical-point search.
    #[arg(long, default_value_t = 24)]
    pub grid_density: usize,
    #[arg(long, default_value_t = 256)]
    pub boundary_samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct DagArgs {
    #[command(flatten)]
    pub land: LandscapeArgs,
    #[arg(long, default_value_t = 24)]
    pub grid_density: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Schedule {
    #[value(name = "VP")]
    Vp,
    #[value(name = "subVP")]
    SubVp,
    #[value(name = "VE")]
    Ve,
}

/// Gaussian-mixture data and noise schedule.
#[derive(Debug, Clone, Args, Serialize)]
pub struct GmmArgs {
    /// Mixture preset: four-centroids or four-centroids-symmetric.
    #[arg(long, default_value = "four-centroids")]
    pub gmm: String,
    #[arg(long, value_enum, default_value = "VP")]
    pub schedule: Schedule,
    #[arg(long, default_value_t = 0.1)]
    pub beta_min: f64,
    #[arg(long, default_value_t = 20.0)]
    pub beta_max: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Family name: saddle-node, flip, dual-well-tilt, dual-cusp-tilt,
    /// saddle-node-tilt, cusp, fold, constant, constant2 or diffusion-cascade.
    #[arg(long)]
    pub family: String,
    /// Parameter range (applied to every axis).
    #[arg(long, num_args = 2, allow_negative_numbers = true, value_names = ["LO", "HI"])]
    pub range: Option<Vec<f64>>,
    /// Grid values per axis.
    #[arg(long, default_value_t = 41)]
    pub grid: usize,
    /// Skip connection DAGs (and hence flip detection).
    #[arg(long)]
    pub no_dag: bool,
    #[command(flatten)]
    pub gmm: GmmArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GibbsArgs {
    #[command(flatten)]
    pub land: LandscapeArgs,
    #[arg(long)]
    pub eps: f64,
    /// Quadrature cells per axis.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    /// Decreasing noise levels for a zero-noise weight report.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Vec<f64>,
    /// Ball radius around attractors for the zero-noise report.
    #[arg(long, default_value_t = 0.5)]
    pub ball_radius: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct LangevinArgs {
    #[command(flatten)]
    pub land: LandscapeArgs,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 2_000_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
    #[arg(long, default_value_t = 10_000)]
    pub burn_in: usize,
    /// Histogram cells per axis.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    #[arg(long)]
    pub seed: u64,
    /// Verdict threshold on the total-variation distance to Gibbs.
    #[arg(long, default_value_t = 0.1)]
    pub tv_threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ActionArgs {
    #[command(flatten)]
    pub land: LandscapeArgs,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Start point, comma separated (default: 0.3 of the radius along each axis).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Vec<f64>,
    /// Required when eps > 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Paths simulated, with seeds seed, seed + 1, ...
    #[arg(long, default_value_t = 1)]
    pub paths: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum ActivationArg {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum HopfieldCmd {
    /// Projected-gradient Hebbian learning; writes W.csv.
    Train {
        /// Patterns CSV, one pattern per row.
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        rate: f64,
        /// Frobenius-norm bound on W.
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        /// Seed of the random initial W.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evolves the feature dynamics from v0 to a fixed point.
    Recall {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        rinv: f64,
        #[arg(long, value_enum, default_value = "tanh")]
        activation: ActivationArg,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        v0: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
        #[arg(long, default_value_t = 1e4)]
        t_max: f64,
    },
    /// Structural-stability verdict; exit 2 when not structurally stable.
    /// The diagonal of W is accepted as given.
    Check {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        rinv: f64,
        #[arg(long, value_enum, default_value = "tanh")]
        activation: ActivationArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum CensusModeArg {
    FixedPoint,
    GradientFlow,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum MhnCmd {
    /// Attractor count per inverse temperature.
    Census {
        /// Patterns CSV, one pattern per row.
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        beta: Vec<f64>,
        #[arg(long, value_enum, default_value = "fixed-point")]
        mode: CensusModeArg,
        /// Seed lattice points per axis over the pattern disc.
        #[arg(long, default_value_t = 15)]
        seeds_per_axis: usize,
    },
    /// Rank conditions; exit 2 when the necessary condition fails.
    Check {
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long)]
        beta: f64,
    },
    /// Energy, gradient and update at a point.
    Energy {
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        v: Vec<f64>,
    },
}

#[derive(Debug, Subcommand, Serialize)]
pub enum DiffusionCmd {
    /// Reverse-SDE samples (samples.csv) with a cluster report.
    Generate {
        #[command(flatten)]
        gmm: GmmArgs,
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Backward-time bifurcation sweep of the time-varying potential.
    Cascade {
        #[command(flatten)]
        gmm: GmmArgs,
        /// Backward-time grid values.
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
}
