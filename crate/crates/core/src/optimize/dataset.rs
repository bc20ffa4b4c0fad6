use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::footprints::{ShotGroup, MIN_GROUP_SIZE};
use crate::metrics::MetricKind;
use crate::par;
use crate::raster::{AggregationKind, RasterGrid};

use super::objective::{make_objective, ObjectiveSpec, DEFAULT_OOB_PENALTY};
use super::{solve, Bounds, DisplacementSolution, Method, OptimizeError, OptimizerConfig};

/// Everything needed to correct a set of groups with one (method, metric) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionConfig {
    pub method: Method,
    pub metric: MetricKind,
    pub bounds: Bounds,
    pub optimizer: OptimizerConfig,
    pub radius: f64,
    pub agg: AggregationKind,
    pub oob_penalty: f64,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            method: Method::Grid,
            metric: MetricKind::Euclidean,
            bounds: Bounds::default(),
            optimizer: OptimizerConfig::default(),
            radius: 12.5,
            agg: AggregationKind::Mean,
            oob_penalty: DEFAULT_OOB_PENALTY,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupStatus {
    Corrected,
    /// Fewer than the minimum number of footprints; zero offset applied.
    Skipped,
}

/// Outcome for one shot group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCorrection {
    pub key: String,
    pub status: GroupStatus,
    pub solution: DisplacementSolution,
    /// Input footprints; `ref_elev` is the reference before correction.
    pub original: ShotGroup,
    /// Shifted footprints with `ref_elev` recomputed at the new positions.
    pub corrected: ShotGroup,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResult {
    pub method: Method,
    pub metric: MetricKind,
    /// In input order.
    pub groups: Vec<GroupCorrection>,
    pub n_skipped: usize,
    /// Wall time of the whole optimization pass.
    pub wall_time_s: f64,
}

impl CorrectionResult {
    /// Solutions of the groups that were actually optimized.
    pub fn solutions(&self) -> Vec<DisplacementSolution> {
        self.groups
            .iter()
            .filter(|g| g.status == GroupStatus::Corrected)
            .map(|g| g.solution)
            .collect()
    }
}

/// Per-group RNG seed: the first 8 bytes (little-endian) of
/// `sha256(seed_le || key)`.
pub fn derive_group_seed(seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Optimizes one group and applies the displacement to every footprint.
pub fn correct_group(group: &ShotGroup, dem: &RasterGrid, cfg: &CorrectionConfig) -> Result<GroupCorrection, OptimizeError> {
    let start = Instant::now();
    if group.len() < MIN_GROUP_SIZE {
        return Ok(GroupCorrection {
            key: group.key.clone(),
            status: GroupStatus::Skipped,
            solution: DisplacementSolution {
                dx: 0.0,
                dy: 0.0,
                objective_value: 0.0,
                evaluations: 0,
                converged: false,
                method: cfg.method,
            },
            original: group.clone(),
            corrected: group.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    let spec = ObjectiveSpec {
        group,
        dem,
        metric: cfg.metric,
        radius: cfg.radius,
        agg: cfg.agg,
        oob_penalty: cfg.oob_penalty,
    };
    let objective = make_objective(&spec)?;
    let f = |dx: f64, dy: f64| objective.value(dx, dy);
    let seed = derive_group_seed(cfg.optimizer.seed, &group.key);
    let fd_step = dem.min_cell_size().max(1.0);
    let solution = solve(cfg.method, &f, &cfg.bounds, &cfg.optimizer, seed, fd_step)?;

    let mut corrected = group.clone();
    for fp in corrected.footprints.iter_mut() {
        fp.x += solution.dx;
        fp.y += solution.dy;
        fp.ref_elev = dem.aggregate_buffer_unchecked(fp.x, fp.y, cfg.radius, cfg.agg);
    }
    Ok(GroupCorrection {
        key: group.key.clone(),
        status: GroupStatus::Corrected,
        solution,
        original: group.clone(),
        corrected,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Corrects every group, on `cfg.workers` threads. Output order and values do
/// not depend on the worker count.
pub fn correct_dataset(groups: &[ShotGroup], dem: &RasterGrid, cfg: &CorrectionConfig) -> Result<CorrectionResult, OptimizeError> {
    cfg.bounds.validate()?;
    cfg.optimizer.validate()?;
    let start = Instant::now();
    let outcomes = par::map(groups, cfg.workers, |g| correct_group(g, dem, cfg));
    let groups = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n_skipped = groups.iter().filter(|g| g.status == GroupStatus::Skipped).count();
    Ok(CorrectionResult {
        method: cfg.method,
        metric: cfg.metric,
        groups,
        n_skipped,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
