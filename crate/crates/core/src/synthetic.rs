//! Synthetic terrains and footprint tracks with planted geolocation offsets.
//!
//! Everything here is a pure function of its spec and seed, so scenes can be
//! regenerated exactly from a ground-truth file.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::evaluate::mae;
use crate::footprints::{Footprint, ShotGroup, MIN_GROUP_SIZE};
use crate::metrics::MetricKind;
use crate::optimize::{correct_group, CorrectionConfig, Method, OptimizeError};
use crate::par;
use crate::raster::{AggregationKind, RasterError, RasterGrid};

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error("invalid terrain spec: {0}")]
    InvalidTerrain(String),
    #[error("invalid track spec: {0}")]
    InvalidTrack(String),
    #[error("track does not fit inside the terrain with a {margin} m margin")]
    TrackOutsideExtent { margin: f64 },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

/// CRS tag given to generated terrains.
pub const SYNTHETIC_CRS: &str = "EPSG:32633";
/// Base elevation of every generated terrain.
pub const BASE_ELEVATION: f64 = 100.0;
/// Buffer used to sample footprint elevations.
pub const TRACK_RADIUS: f64 = 12.5;
/// Clearance between every footprint buffer and the terrain edge.
pub const TRACK_MARGIN: f64 = 25.0;

const HILL_COUNT: usize = 10;
const FRACTAL_OCTAVES: usize = 5;
const FRACTAL_PERSISTENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    Ramp,
    GaussianHills,
    Fractal,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 4] = [Self::Flat, Self::Ramp, Self::GaussianHills, Self::Fractal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Flat => "flat",
            Self::Ramp => "ramp",
            Self::GaussianHills => "gaussian_hills",
            Self::Fractal => "fractal",
        }
    }
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerrainKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown terrain '{s}' (expected flat|ramp|gaussian_hills|fractal)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    pub kind: TerrainKind,
    pub n_rows: usize,
    pub n_cols: usize,
    pub cell_size: f64,
    /// Peak-to-trough elevation range.
    pub relief: f64,
    pub seed: u64,
}

impl TerrainSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.n_rows < 2 || self.n_cols < 2 {
            return Err(SyntheticError::InvalidTerrain(format!(
                "needs at least 2x2 cells, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(SyntheticError::InvalidTerrain(format!("cell_size must be positive, got {}", self.cell_size)));
        }
        if !(self.relief >= 0.0 && self.relief.is_finite()) {
            return Err(SyntheticError::InvalidTerrain(format!("relief must be >= 0, got {}", self.relief)));
        }
        Ok(())
    }
}

/// Rescales `raw` so that min maps to the base elevation and max to base + relief.
fn scale_to_relief(raw: Vec<f64>, relief: f64) -> Vec<f64> {
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return vec![BASE_ELEVATION; raw.len()];
    }
    raw.into_iter().map(|v| BASE_ELEVATION + relief * (v - lo) / (hi - lo)).collect()
}

fn gaussian_hills(spec: &TerrainSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (w, h) = (spec.n_cols as f64 * spec.cell_size, spec.n_rows as f64 * spec.cell_size);
    let span = w.min(h);
    let hills: Vec<(f64, f64, f64, f64)> = (0..HILL_COUNT)
        .map(|_| {
            let cx = rng.random::<f64>() * w;
            let cy = rng.random::<f64>() * h;
            let sigma = span * (0.05 + 0.10 * rng.random::<f64>());
            let amp = 0.5 + 0.5 * rng.random::<f64>();
            (cx, cy, 1.0 / (2.0 * sigma * sigma), amp)
        })
        .collect();
    let mut out = Vec::with_capacity(spec.n_rows * spec.n_cols);
    for r in 0..spec.n_rows {
        // Row 0 is the northern edge.
        let y = h - (r as f64 + 0.5) * spec.cell_size;
        for c in 0..spec.n_cols {
            let x = (c as f64 + 0.5) * spec.cell_size;
            out.push(
                hills
                    .iter()
                    .map(|&(cx, cy, k, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) * k).exp())
                    .sum(),
            );
        }
    }
    out
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn fractal(spec: &TerrainSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (rows, cols) = (spec.n_rows, spec.n_cols);
    let mut out = vec![0.0; rows * cols];
    // Coarsest octave spans about a quarter of the longer side.
    let mut period = (rows.max(cols) as f64 / 4.0).max(2.0);
    let mut amp = 1.0;
    for _ in 0..FRACTAL_OCTAVES {
        let (lr, lc) = ((rows as f64 / period).ceil() as usize + 2, (cols as f64 / period).ceil() as usize + 2);
        let lattice: Vec<f64> = (0..lr * lc).map(|_| rng.random::<f64>()).collect();
        for r in 0..rows {
            let fy = r as f64 / period;
            let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
            for c in 0..cols {
                let fx = c as f64 / period;
                let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
                let at = |i: usize, j: usize| lattice[i * lc + j];
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                out[r * cols + c] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
        period = (period / 2.0).max(1.0);
        amp *= FRACTAL_PERSISTENCE;
    }
    out
}

/// North-up terrain with its upper-left corner at `(0, n_rows * cell_size)`.
pub fn gen_terrain(spec: &TerrainSpec) -> Result<RasterGrid, SyntheticError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = match spec.kind {
        TerrainKind::Flat => vec![BASE_ELEVATION; spec.n_rows * spec.n_cols],
        TerrainKind::Ramp => {
            let denom = (spec.n_cols - 1) as f64;
            (0..spec.n_rows * spec.n_cols)
                .map(|i| BASE_ELEVATION + spec.relief * (i % spec.n_cols) as f64 / denom)
                .collect()
        }
        TerrainKind::GaussianHills => scale_to_relief(gaussian_hills(spec, &mut rng), spec.relief),
        TerrainKind::Fractal => scale_to_relief(fractal(spec, &mut rng), spec.relief),
    };
    Ok(RasterGrid::north_up(
        0.0,
        spec.n_rows as f64 * spec.cell_size,
        spec.cell_size,
        spec.n_rows,
        spec.n_cols,
        values,
        SYNTHETIC_CRS,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub n_footprints: usize,
    /// Along-track distance between footprints.
    pub spacing: f64,
    /// Clockwise from north.
    pub heading_deg: f64,
    /// Standard deviation of the independent elevation noise.
    pub noise_sd: f64,
    pub planted_dx: f64,
    pub planted_dy: f64,
    pub seed: u64,
    /// Track midpoint; defaults to the terrain center.
    #[serde(default)]
    pub center: Option<(f64, f64)>,
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self {
            n_footprints: 20,
            spacing: 60.0,
            heading_deg: 0.0,
            noise_sd: 0.0,
            planted_dx: 0.0,
            planted_dy: 0.0,
            seed: 0,
            center: None,
        }
    }
}

impl TrackSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::InvalidTrack(m));
        if self.n_footprints < MIN_GROUP_SIZE {
            return bad(format!("n_footprints must be >= {MIN_GROUP_SIZE}, got {}", self.n_footprints));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad(format!("spacing must be positive, got {}", self.spacing));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be >= 0, got {}", self.noise_sd));
        }
        if !(self.planted_dx.abs() <= 25.0 && self.planted_dy.abs() <= 25.0) {
            return bad(format!(
                "planted offsets must lie within 25 m, got ({}, {})",
                self.planted_dx, self.planted_dy
            ));
        }
        if !self.heading_deg.is_finite() {
            return bad("heading_deg must be finite".into());
        }
        Ok(())
    }

    /// Group key: the seed as ten zero-padded digits (mod 10^10).
    pub fn group_key(&self) -> String {
        format!("{:010}", self.seed % 10_000_000_000)
    }
}

/// Footprint positions along the track, in acquisition order.
pub fn track_positions(terrain: &RasterGrid, spec: &TrackSpec) -> Vec<(f64, f64)> {
    let (cx, cy) = spec.center.unwrap_or_else(|| {
        let (x0, y0, x1, y1) = terrain.extent();
        (0.5 * (x0 + x1), 0.5 * (y0 + y1))
    });
    let (s, c) = spec.heading_deg.to_radians().sin_cos();
    let mid = (spec.n_footprints - 1) as f64 / 2.0;
    (0..spec.n_footprints)
        .map(|i| {
            let t = (i as f64 - mid) * spec.spacing;
            (cx + t * s, cy + t * c)
        })
        .collect()
}

fn fits(terrain: &RasterGrid, positions: &[(f64, f64)], clearance: f64) -> bool {
    let (x0, y0, x1, y1) = terrain.extent();
    positions
        .iter()
        .all(|&(x, y)| x - clearance >= x0 && x + clearance <= x1 && y - clearance >= y0 && y + clearance <= y1)
}

/// Ground-truth group: footprints at their true positions, with elevations
/// sampled from the terrain buffer plus seeded Gaussian noise.
pub fn gen_track(terrain: &RasterGrid, spec: &TrackSpec) -> Result<ShotGroup, SyntheticError> {
    spec.validate()?;
    let positions = track_positions(terrain, spec);
    if !fits(terrain, &positions, TRACK_RADIUS + TRACK_MARGIN) {
        return Err(SyntheticError::TrackOutsideExtent { margin: TRACK_MARGIN });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd).expect("noise_sd validated");
    let key = spec.group_key();
    let footprints = positions
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let truth = terrain
                .aggregate_buffer(x, y, TRACK_RADIUS, AggregationKind::Mean)?
                .expect("synthetic terrains have no nodata and the track fits");
            // Zero sd still draws, keeping streams aligned across noise levels.
            let z = truth + noise.sample(&mut rng);
            Ok(Footprint {
                shot_number: format!("{key}{i:05}"),
                beam: "BEAM0101".into(),
                x,
                y,
                elev_lowestmode: z,
                degrade_flag: 0,
                quality_flag: 1,
                sensitivity: 0.98,
                rh100: 15.0,
                tree_cover: Some(true),
                gedi_dem: Some(z),
                ref_elev: None,
            })
        })
        .collect::<Result<Vec<_>, RasterError>>()?;
    Ok(ShotGroup { key, footprints })
}

/// Moves every reported position by `(dx, dy)`; elevations stay those of the
/// true positions. The ideal correction is `(-dx, -dy)`.
pub fn plant_offset(group: &ShotGroup, dx: f64, dy: f64) -> ShotGroup {
    let mut out = group.clone();
    for f in out.footprints.iter_mut() {
        f.x += dx;
        f.y += dy;
    }
    out
}

/// A generated terrain with one planted track.
#[derive(Debug, Clone)]
pub struct Scene {
    pub terrain: RasterGrid,
    pub truth: ShotGroup,
    pub observed: ShotGroup,
}

pub fn build_scene(terrain: &TerrainSpec, track: &TrackSpec) -> Result<Scene, SyntheticError> {
    let terrain = gen_terrain(terrain)?;
    let truth = gen_track(&terrain, track)?;
    let observed = plant_offset(&truth, track.planted_dx, track.planted_dy);
    Ok(Scene {
        terrain,
        truth,
        observed,
    })
}

/// Several independently placed tracks on one terrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_groups: usize,
    pub n_footprints: usize,
    pub spacing: f64,
    pub noise_sd: f64,
    /// Planted offsets have a uniform random direction and a magnitude
    /// uniform in this range.
    pub offset_range: (f64, f64),
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_groups: 10,
            n_footprints: 20,
            spacing: 60.0,
            noise_sd: 0.0,
            offset_range: (5.0, 15.0),
            seed: 0,
        }
    }
}

/// Planted offset with magnitude uniform in `[lo, hi]` and uniform direction.
pub fn random_offset(rng: &mut impl Rng, lo: f64, hi: f64) -> (f64, f64) {
    let m = lo + (hi - lo) * rng.random::<f64>();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    (m * theta.cos(), m * theta.sin())
}

/// One ground-truth track per group, with random heading, placement and
/// planted offset. Group keys are distinct and sorted in generation order.
pub fn gen_dataset(terrain: &RasterGrid, spec: &DatasetSpec) -> Result<Vec<(TrackSpec, ShotGroup)>, SyntheticError> {
    let (lo, hi) = spec.offset_range;
    if !(0.0 <= lo && lo <= hi && hi <= 25.0) {
        return Err(SyntheticError::InvalidTrack(format!("offset_range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 25")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (x0, y0, x1, y1) = terrain.extent();
    let mut out = Vec::with_capacity(spec.n_groups);
    for g in 0..spec.n_groups {
        let (planted_dx, planted_dy) = random_offset(&mut rng, lo, hi);
        let mut placed = None;
        for _ in 0..1000 {
            let track = TrackSpec {
                n_footprints: spec.n_footprints,
                spacing: spec.spacing,
                heading_deg: rng.random::<f64>() * 180.0,
                noise_sd: spec.noise_sd,
                planted_dx,
                planted_dy,
                seed: spec.seed.wrapping_mul(1_000_003).wrapping_add(g as u64) % 10_000_000_000,
                center: Some((x0 + rng.random::<f64>() * (x1 - x0), y0 + rng.random::<f64>() * (y1 - y0))),
            };
            if fits(terrain, &track_positions(terrain, &track), TRACK_RADIUS + TRACK_MARGIN) {
                placed = Some(track);
                break;
            }
        }
        let track = placed.ok_or(SyntheticError::TrackOutsideExtent { margin: TRACK_MARGIN })?;
        let group = gen_track(terrain, &track)?;
        out.push((track, group));
    }
    let mut keys: Vec<&str> = out.iter().map(|(_, g)| g.key.as_str()).collect();
    keys.sort_unstable();
    keys.dedup();
    if keys.len() != out.len() {
        return Err(SyntheticError::InvalidTrack("derived group keys collide; change the seed".into()));
    }
    Ok(out)
}

/// Ground truth written next to a simulated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub terrain: TerrainSpec,
    pub groups: Vec<GroupTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub group_key: String,
    pub planted_dx: f64,
    pub planted_dy: f64,
    /// The displacement that undoes the planted offset.
    pub expected_dx: f64,
    pub expected_dy: f64,
    pub true_positions: Vec<TruePosition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePosition {
    pub shot_number: String,
    pub x: f64,
    pub y: f64,
}

impl GroupTruth {
    pub fn new(truth: &ShotGroup, planted_dx: f64, planted_dy: f64) -> Self {
        Self {
            group_key: truth.key.clone(),
            planted_dx,
            planted_dy,
            expected_dx: -planted_dx,
            expected_dy: -planted_dy,
            true_positions: truth
                .footprints
                .iter()
                .map(|f| TruePosition {
                    shot_number: f.shot_number.clone(),
                    x: f.x,
                    y: f.y,
                })
                .collect(),
        }
    }
}

/// One (method, metric) cell of a recovery experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub method: Method,
    pub metric: MetricKind,
    pub dx: f64,
    pub dy: f64,
    /// `‖δ_recovered + δ_planted‖`.
    pub recovery_error: f64,
    pub objective_value: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub original_mae: Option<f64>,
    pub corrected_mae: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub planted_dx: f64,
    pub planted_dy: f64,
    pub rows: Vec<ExperimentRow>,
}

/// MAE of observed elevations against the buffer reference at the given
/// positions, over footprints with a reference.
fn positional_mae(group: &ShotGroup, dem: &RasterGrid, shift: (f64, f64), radius: f64, agg: AggregationKind) -> Option<f64> {
    let (mut e, mut r) = (Vec::new(), Vec::new());
    for f in &group.footprints {
        if let Some(v) = dem.aggregate_buffer_unchecked(f.x + shift.0, f.y + shift.1, radius, agg) {
            e.push(f.dem_elevation());
            r.push(v);
        }
    }
    mae(&e, &r).ok()
}

impl ExperimentReport {
    /// CSV of all rows. Timing is opt-in so default output is byte-stable.
    pub fn to_csv(&self, include_timing: bool) -> String {
        let mut header = vec![
            "method",
            "metric",
            "planted_dx",
            "planted_dy",
            "dx",
            "dy",
            "recovery_error",
            "objective_value",
            "evaluations",
            "converged",
            "original_mae",
            "corrected_mae",
        ];
        if include_timing {
            header.push("wall_time_s");
        }
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.method.to_string(),
                r.metric.to_string(),
                self.planted_dx.to_string(),
                self.planted_dy.to_string(),
                r.dx.to_string(),
                r.dy.to_string(),
                r.recovery_error.to_string(),
                r.objective_value.to_string(),
                r.evaluations.to_string(),
                r.converged.to_string(),
                na(r.original_mae),
                na(r.corrected_mae),
            ];
            if include_timing {
                rec.push(r.wall_time_s.to_string());
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV output is UTF-8")
    }
}

/// Generates a scene, plants the offset and runs every (method, metric) pair
/// on it with the settings of `base`. Cells run on `base.workers` threads.
pub fn run_recovery_experiment(
    terrain: &TerrainSpec,
    track: &TrackSpec,
    methods: &[Method],
    metrics: &[MetricKind],
    base: &CorrectionConfig,
) -> Result<ExperimentReport, SyntheticError> {
    let scene = build_scene(terrain, track)?;
    let cells: Vec<(Method, MetricKind)> = methods.iter().flat_map(|&m| metrics.iter().map(move |&k| (m, k))).collect();
    let original_mae = positional_mae(&scene.observed, &scene.terrain, (0.0, 0.0), base.radius, base.agg);
    let rows = par::map(&cells, base.workers, |&(method, metric)| {
        let cfg = CorrectionConfig {
            method,
            metric,
            workers: 1,
            ..base.clone()
        };
        let out = correct_group(&scene.observed, &scene.terrain, &cfg)?;
        let s = out.solution;
        Ok(ExperimentRow {
            method,
            metric,
            dx: s.dx,
            dy: s.dy,
            recovery_error: (s.dx + track.planted_dx).hypot(s.dy + track.planted_dy),
            objective_value: s.objective_value,
            evaluations: s.evaluations,
            converged: s.converged,
            original_mae,
            corrected_mae: positional_mae(&scene.observed, &scene.terrain, (s.dx, s.dy), base.radius, base.agg),
            wall_time_s: out.wall_time_s,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, SyntheticError>>()?;
    Ok(ExperimentReport {
        planted_dx: track.planted_dx,
        planted_dy: track.planted_dy,
        rows,
    })
}
