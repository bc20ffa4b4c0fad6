//! Displacement search: a per-group terrain objective and four bounded
//! minimizers over `(dx, dy)`.
//!
//! Every solver takes a plain `Fn(f64, f64) -> f64`, so the same code runs on
//! terrain objectives and on analytic test surfaces. Solvers return the best
//! point they ever evaluated; ties keep the earlier evaluation.

mod dataset;
mod ga;
mod grid;
mod lbfgsb;
mod objective;
mod pso;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dataset::{
    correct_dataset, correct_group, derive_group_seed, CorrectionConfig, CorrectionResult, GroupCorrection, GroupStatus,
};
pub use ga::{optimize_ga, optimize_ga_traced};
pub use grid::{grid_lattice, grid_search};
pub use lbfgsb::{finite_difference_gradient, optimize_lbfgsb};
pub use objective::{make_objective, ObjectiveSpec, TerrainObjective, DEFAULT_OOB_PENALTY};
pub use pso::{optimize_pso, optimize_pso_traced};

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error("group '{key}' has {len} footprints; at least {min} are needed")]
    GroupTooSmall { key: String, len: usize, min: usize },
    #[error("buffer radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("invalid search bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

/// Symmetric search window `|dx| <= max_abs_dx`, `|dy| <= max_abs_dy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    pub max_abs_dx: f64,
    pub max_abs_dy: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            max_abs_dx: 25.0,
            max_abs_dy: 25.0,
        }
    }
}

impl Bounds {
    pub fn new(max_abs_dx: f64, max_abs_dy: f64) -> Result<Self, OptimizeError> {
        let b = Self { max_abs_dx, max_abs_dy };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.max_abs_dx > 0.0 && self.max_abs_dy > 0.0 && self.max_abs_dx.is_finite() && self.max_abs_dy.is_finite() {
            Ok(())
        } else {
            Err(OptimizeError::InvalidBounds(format!(
                "half-widths must be finite and positive, got {} x {}",
                self.max_abs_dx, self.max_abs_dy
            )))
        }
    }

    pub(crate) fn lower(&self) -> [f64; 2] {
        [-self.max_abs_dx, -self.max_abs_dy]
    }

    pub(crate) fn upper(&self) -> [f64; 2] {
        [self.max_abs_dx, self.max_abs_dy]
    }

    pub(crate) fn width(&self, dim: usize) -> f64 {
        2.0 * self.upper()[dim]
    }

    pub fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0].clamp(-self.max_abs_dx, self.max_abs_dx),
            p[1].clamp(-self.max_abs_dy, self.max_abs_dy),
        ]
    }

    pub fn contains(&self, dx: f64, dy: f64) -> bool {
        dx.abs() <= self.max_abs_dx && dy.abs() <= self.max_abs_dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grid,
    Lbfgsb,
    Ga,
    Pso,
}

impl Method {
    pub const ALL: [Method; 4] = [Self::Grid, Self::Lbfgsb, Self::Ga, Self::Pso];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Grid => "grid",
            Self::Lbfgsb => "lbfgsb",
            Self::Ga => "ga",
            Self::Pso => "pso",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected grid|lbfgsb|ga|pso)"))
    }
}

/// Optimal displacement found for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSolution {
    pub dx: f64,
    pub dy: f64,
    pub objective_value: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub method: Method,
}

impl DisplacementSolution {
    pub fn displacement(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsbConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Finite-difference step in meters. `None` resolves to
    /// `max(DEM cell size, 1 m)` for terrain objectives and 1 m otherwise.
    pub fd_step: Option<f64>,
    /// Number of correction pairs kept for the inverse-Hessian estimate.
    pub memory: usize,
    pub multistart: Vec<[f64; 2]>,
}

impl Default for LbfgsbConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            fd_step: None,
            memory: 10,
            multistart: vec![[0.0, 0.0]],
        }
    }
}

/// Offset of the four diagonal starts used by [`LbfgsbConfig::five_start`].
pub const MULTISTART_CORNER: f64 = 12.5;

impl LbfgsbConfig {
    /// Origin plus the four `(±12.5, ±12.5)` diagonal starts.
    pub fn five_start() -> Self {
        let c = MULTISTART_CORNER;
        Self {
            multistart: vec![[0.0, 0.0], [-c, -c], [c, -c], [-c, c], [c, c]],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub pop: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub blend_alpha: f64,
    pub mutation_sigma: f64,
    pub elitism: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            pop: 50,
            generations: 100,
            crossover_rate: 0.8,
            mutation_rate: 0.1,
            tournament_size: 3,
            blend_alpha: 0.5,
            mutation_sigma: 2.5,
            elitism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub swarm: usize,
    pub iterations: usize,
    pub cognitive: f64,
    pub social: f64,
    pub inertia: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm: 50,
            iterations: 100,
            cognitive: 1.5,
            social: 1.5,
            inertia: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub grid_step: f64,
    pub lbfgsb: LbfgsbConfig,
    pub ga: GaConfig,
    pub pso: PsoConfig,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grid_step: 5.0,
            lbfgsb: LbfgsbConfig::default(),
            ga: GaConfig::default(),
            pso: PsoConfig::default(),
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.to_string()));
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return bad("grid_step must be positive");
        }
        let l = &self.lbfgsb;
        if l.max_iter == 0 || l.memory == 0 {
            return bad("lbfgsb.max_iter and lbfgsb.memory must be positive");
        }
        if !(l.tol > 0.0) {
            return bad("lbfgsb.tol must be positive");
        }
        if l.fd_step.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return bad("lbfgsb.fd_step must be positive");
        }
        if l.multistart.is_empty() || l.multistart.iter().flatten().any(|v| !v.is_finite()) {
            return bad("lbfgsb.multistart needs at least one finite start point");
        }
        let g = &self.ga;
        if g.pop == 0 || g.generations == 0 || g.tournament_size == 0 {
            return bad("ga.pop, ga.generations and ga.tournament_size must be positive");
        }
        if !rate(g.crossover_rate) || !rate(g.mutation_rate) {
            return bad("ga rates must lie in [0, 1]");
        }
        if g.elitism >= g.pop {
            return bad("ga.elitism must be smaller than ga.pop");
        }
        if !(g.blend_alpha >= 0.0 && g.mutation_sigma >= 0.0 && g.mutation_sigma.is_finite()) {
            return bad("ga.blend_alpha and ga.mutation_sigma must be non-negative");
        }
        let p = &self.pso;
        if p.swarm == 0 || p.iterations == 0 {
            return bad("pso.swarm and pso.iterations must be positive");
        }
        if ![p.cognitive, p.social, p.inertia].iter().all(|c| c.is_finite() && *c >= 0.0) {
            return bad("pso coefficients must be finite and non-negative");
        }
        Ok(())
    }
}

/// Dispatches to the solver for `method`. `fd_step` overrides the L-BFGS-B
/// finite-difference step when the config leaves it unset.
pub fn solve<F: Fn(f64, f64) -> f64>(
    method: Method,
    f: &F,
    bounds: &Bounds,
    cfg: &OptimizerConfig,
    seed: u64,
    default_fd_step: f64,
) -> Result<DisplacementSolution, OptimizeError> {
    bounds.validate()?;
    cfg.validate()?;
    Ok(match method {
        Method::Grid => grid_search(f, bounds, cfg.grid_step)?,
        Method::Lbfgsb => {
            let mut lb = cfg.lbfgsb.clone();
            lb.fd_step = Some(lb.fd_step.unwrap_or(default_fd_step));
            optimize_lbfgsb(f, bounds, &lb)
        }
        Method::Ga => optimize_ga(f, bounds, &cfg.ga, seed),
        Method::Pso => optimize_pso(f, bounds, &cfg.pso, seed),
    })
}

/// Counts evaluations and remembers the best point seen.
pub(crate) struct Tracker<'f, F> {
    f: &'f F,
    pub evaluations: usize,
    best: Option<([f64; 2], f64)>,
}

impl<'f, F: Fn(f64, f64) -> f64> Tracker<'f, F> {
    pub fn new(f: &'f F) -> Self {
        Self {
            f,
            evaluations: 0,
            best: None,
        }
    }

    pub fn eval(&mut self, p: [f64; 2]) -> f64 {
        let v = (self.f)(p[0], p[1]);
        self.evaluations += 1;
        if self.best.is_none_or(|(_, b)| v < b) {
            self.best = Some((p, v));
        }
        v
    }

    pub fn best(&self) -> ([f64; 2], f64) {
        self.best.expect("tracker has evaluated at least one point")
    }

    pub fn solution(&self, method: Method, converged: bool) -> DisplacementSolution {
        let (p, v) = self.best();
        DisplacementSolution {
            dx: p[0],
            dy: p[1],
            objective_value: v,
            evaluations: self.evaluations,
            converged,
            method,
        }
    }
}
