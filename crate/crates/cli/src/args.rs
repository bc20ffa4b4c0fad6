use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use geoshift::metrics::MetricKind;
use geoshift::optimize::Method;
use geoshift::raster::AggregationKind;
use geoshift::synthetic::TerrainKind;

#[derive(Debug, Parser)]
#[command(name = "geoshift", version, about = "Horizontal geolocation correction of LiDAR footprints by terrain matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, group and correct a footprint table against a DEM.
    Correct(CommonArgs),
    /// Recompute accuracy statistics from a corrected table.
    Evaluate(EvaluateArgs),
    /// Write a synthetic terrain, planted footprint tracks and their ground truth.
    Simulate(SimulateArgs),
    /// Time every method and metric combination on a dataset.
    Bench(CommonArgs),
}

/// Run settings shared by `correct` and `bench`. Flags override the config file.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dem: Option<PathBuf>,
    #[arg(long)]
    pub geoid: Option<PathBuf>,
    #[arg(long)]
    pub footprints: Option<PathBuf>,
    #[arg(long, short)]
    pub output_dir: Option<PathBuf>,
    /// CRS tag of the footprint coordinates (defaults to the DEM's).
    #[arg(long)]
    pub crs: Option<String>,
    /// Comma-separated subset of grid,lbfgsb,ga,pso.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Comma-separated subset of euclidean,manhattan,hausdorff,area,correlation.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<MetricKind>>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub agg: Option<AggregationKind>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub prefix_len: Option<usize>,
    #[arg(long)]
    pub oob_penalty: Option<f64>,
    /// Write zero wall times so outputs are byte-stable.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub max_abs_dx: Option<f64>,
    #[arg(long)]
    pub max_abs_dy: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long)]
    pub lbfgsb_max_iter: Option<usize>,
    #[arg(long)]
    pub lbfgsb_tol: Option<f64>,
    #[arg(long)]
    pub lbfgsb_fd_step: Option<f64>,
    #[arg(long)]
    pub lbfgsb_memory: Option<usize>,
    /// Start L-BFGS-B from the origin and the four (±12.5, ±12.5) corners.
    #[arg(long)]
    pub five_start: bool,
    #[arg(long)]
    pub ga_pop: Option<usize>,
    #[arg(long)]
    pub ga_generations: Option<usize>,
    #[arg(long)]
    pub ga_crossover_rate: Option<f64>,
    #[arg(long)]
    pub ga_mutation_rate: Option<f64>,
    #[arg(long)]
    pub pso_swarm: Option<usize>,
    #[arg(long)]
    pub pso_iterations: Option<usize>,
    #[arg(long)]
    pub pso_cognitive: Option<f64>,
    #[arg(long)]
    pub pso_social: Option<f64>,
    #[arg(long)]
    pub pso_inertia: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Corrected table written by `correct`.
    #[arg(long)]
    pub corrected: PathBuf,
    #[arg(long)]
    pub dem: PathBuf,
    #[arg(long, short)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 12.5)]
    pub radius: f64,
    #[arg(long, default_value_t = AggregationKind::Mean)]
    pub agg: AggregationKind,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, short)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = TerrainKind::GaussianHills)]
    pub terrain: TerrainKind,
    #[arg(long, default_value_t = 1300)]
    pub rows: usize,
    #[arg(long, default_value_t = 1300)]
    pub cols: usize,
    #[arg(long, default_value_t = 1.0)]
    pub cell_size: f64,
    #[arg(long, default_value_t = 150.0)]
    pub relief: f64,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    /// Footprints per group.
    #[arg(long, default_value_t = 20)]
    pub footprints: usize,
    #[arg(long, default_value_t = 60.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    /// Smallest planted offset magnitude.
    #[arg(long, default_value_t = 5.0)]
    pub offset_min: f64,
    /// Largest planted offset magnitude.
    #[arg(long, default_value_t = 15.0)]
    pub offset_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Terrain file format.
    #[arg(long, default_value = "asc", value_parser = ["asc", "tif"])]
    pub format: String,
}
