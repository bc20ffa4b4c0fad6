//! Footprint ingestion and preprocessing: quality filtering, rolling outlier
//! rejection, geoid correction, shot grouping and reference elevations.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::raster::{AggregationKind, RasterError, RasterGrid};

#[derive(Debug, thiserror::Error)]
pub enum FootprintError {
    #[error("footprint table is missing required column '{0}'")]
    MissingColumn(&'static str),
    #[error("footprint table: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid quality rules: {0}")]
    InvalidRules(String),
    #[error("rolling window must be odd and >= 3, got {0}")]
    InvalidWindow(usize),
    #[error("outlier threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("shot number '{shot}' is shorter than the {prefix_len}-character group prefix")]
    ShotNumberTooShort { shot: String, prefix_len: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// One LiDAR shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub shot_number: String,
    pub beam: String,
    pub x: f64,
    pub y: f64,
    pub elev_lowestmode: f64,
    pub degrade_flag: i64,
    pub quality_flag: i64,
    pub sensitivity: f64,
    pub rh100: f64,
    pub tree_cover: Option<bool>,
    /// `elev_lowestmode` in the DEM's vertical datum.
    pub gedi_dem: Option<f64>,
    /// Buffer-aggregated DEM elevation at the footprint position.
    pub ref_elev: Option<f64>,
}

impl Footprint {
    /// Elevation compared against the DEM: `gedi_dem` when a geoid has been
    /// applied, otherwise the raw lowest-mode elevation.
    pub fn dem_elevation(&self) -> f64 {
        self.gedi_dem.unwrap_or(self.elev_lowestmode)
    }
}

/// Required input columns, in output order.
pub const REQUIRED_COLUMNS: [&str; 9] = [
    "shot_number",
    "beam",
    "x",
    "y",
    "elev_lowestmode",
    "degrade_flag",
    "quality_flag",
    "sensitivity",
    "rh100",
];
pub const TREE_COVER_COLUMN: &str = "tree_cover";

/// Result of reading a footprint table.
#[derive(Debug, Clone, Default)]
pub struct ParsedFootprints {
    pub footprints: Vec<Footprint>,
    /// Rows with an empty or NA required field.
    pub dropped_missing: usize,
    /// Rows with a required numeric field that does not parse.
    pub dropped_unparseable: usize,
}

fn is_na(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na" | "NaN" | "nan" | "NULL" | "null")
}

enum FieldError {
    Missing,
    Unparseable,
}

fn num<T: std::str::FromStr>(field: &str) -> Result<T, FieldError> {
    if is_na(field) {
        return Err(FieldError::Missing);
    }
    field.trim().parse().map_err(|_| FieldError::Unparseable)
}

fn finite(field: &str) -> Result<f64, FieldError> {
    let v: f64 = num(field)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FieldError::Missing)
    }
}

fn flag(field: &str) -> Result<i64, FieldError> {
    // Flags sometimes arrive as "1.0" from float-typed exports.
    num::<i64>(field).or_else(|_| {
        let v = finite(field)?;
        if v.fract() == 0.0 {
            Ok(v as i64)
        } else {
            Err(FieldError::Unparseable)
        }
    })
}

fn parse_tree_cover(field: &str) -> Option<bool> {
    match field.trim().to_ascii_lowercase().as_str() {
        "1" | "1.0" | "true" => Some(true),
        "0" | "0.0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads a footprint CSV. Rows with missing or unparseable required fields are
/// dropped and counted rather than failing the whole table.
pub fn parse_footprints<R: Read>(input: R) -> Result<ParsedFootprints, FootprintError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; REQUIRED_COLUMNS.len()];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or(FootprintError::MissingColumn(name))?;
    }
    let tree_idx = headers.iter().position(|h| h == TREE_COVER_COLUMN);

    let mut out = ParsedFootprints::default();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(idx[i]).unwrap_or("");
        let row = (|| -> Result<Footprint, FieldError> {
            let shot_number = get(0).to_string();
            let beam = get(1).to_string();
            if is_na(&shot_number) || is_na(&beam) {
                return Err(FieldError::Missing);
            }
            Ok(Footprint {
                shot_number,
                beam,
                x: finite(get(2))?,
                y: finite(get(3))?,
                elev_lowestmode: finite(get(4))?,
                degrade_flag: flag(get(5))?,
                quality_flag: flag(get(6))?,
                sensitivity: finite(get(7))?,
                rh100: finite(get(8))?,
                tree_cover: tree_idx.and_then(|i| record.get(i)).and_then(parse_tree_cover),
                gedi_dem: None,
                ref_elev: None,
            })
        })();
        match row {
            Ok(fp) => out.footprints.push(fp),
            Err(FieldError::Missing) => out.dropped_missing += 1,
            Err(FieldError::Unparseable) => out.dropped_unparseable += 1,
        }
    }
    Ok(out)
}

/// Writes footprints in the input schema (required columns plus `tree_cover`).
pub fn write_footprints<W: Write>(footprints: &[Footprint], output: W) -> Result<(), FootprintError> {
    let mut w = csv::Writer::from_writer(output);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.push(TREE_COVER_COLUMN);
    w.write_record(&header)?;
    for fp in footprints {
        w.write_record(input_fields(fp))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// A footprint's input-schema fields as text, in [`REQUIRED_COLUMNS`] order
/// followed by `tree_cover`.
pub fn input_fields(fp: &Footprint) -> [String; 10] {
    [
        fp.shot_number.clone(),
        fp.beam.clone(),
        fp.x.to_string(),
        fp.y.to_string(),
        fp.elev_lowestmode.to_string(),
        fp.degrade_flag.to_string(),
        fp.quality_flag.to_string(),
        fp.sensitivity.to_string(),
        fp.rh100.to_string(),
        match fp.tree_cover {
            Some(true) => "1".into(),
            Some(false) => "0".into(),
            None => String::new(),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityRules {
    pub min_elev: f64,
    pub max_elev: f64,
    pub require_degrade_zero: bool,
    pub require_quality_one: bool,
    pub min_sensitivity: f64,
    pub require_positive_rh100: bool,
    pub require_tree_cover: bool,
    pub max_dem_diff: f64,
    pub outlier_window: usize,
    pub outlier_k: f64,
}

impl Default for QualityRules {
    fn default() -> Self {
        Self {
            min_elev: 0.0,
            max_elev: 2500.0,
            require_degrade_zero: true,
            require_quality_one: true,
            min_sensitivity: 0.95,
            require_positive_rh100: true,
            require_tree_cover: false,
            max_dem_diff: 50.0,
            outlier_window: 7,
            outlier_k: 2.0,
        }
    }
}

impl QualityRules {
    pub fn validate(&self) -> Result<(), FootprintError> {
        let bad = |m: String| Err(FootprintError::InvalidRules(m));
        if !(self.min_elev < self.max_elev) {
            return bad(format!("min_elev {} must be below max_elev {}", self.min_elev, self.max_elev));
        }
        if self.outlier_window < 3 || self.outlier_window.is_multiple_of(2) {
            return bad(format!("outlier_window must be odd and >= 3, got {}", self.outlier_window));
        }
        if !(self.outlier_k > 0.0) {
            return bad(format!("outlier_k must be positive, got {}", self.outlier_k));
        }
        if !(self.max_dem_diff > 0.0) {
            return bad(format!("max_dem_diff must be positive, got {}", self.max_dem_diff));
        }
        Ok(())
    }
}

/// The individual quality predicates, in the order they are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityCheck {
    ElevationRange,
    DegradeFlag,
    QualityFlag,
    Sensitivity,
    CanopyHeight,
    TreeCover,
}

impl QualityCheck {
    pub const ORDER: [QualityCheck; 6] = [
        Self::ElevationRange,
        Self::DegradeFlag,
        Self::QualityFlag,
        Self::Sensitivity,
        Self::CanopyHeight,
        Self::TreeCover,
    ];

    fn enabled(&self, rules: &QualityRules) -> bool {
        match self {
            Self::ElevationRange | Self::Sensitivity => true,
            Self::DegradeFlag => rules.require_degrade_zero,
            Self::QualityFlag => rules.require_quality_one,
            Self::CanopyHeight => rules.require_positive_rh100,
            Self::TreeCover => rules.require_tree_cover,
        }
    }

    fn passes(&self, fp: &Footprint, rules: &QualityRules) -> bool {
        match self {
            Self::ElevationRange => rules.min_elev < fp.elev_lowestmode && fp.elev_lowestmode < rules.max_elev,
            Self::DegradeFlag => fp.degrade_flag == 0,
            Self::QualityFlag => fp.quality_flag == 1,
            Self::Sensitivity => fp.sensitivity >= rules.min_sensitivity,
            Self::CanopyHeight => fp.rh100 > 0.0,
            Self::TreeCover => fp.tree_cover == Some(true),
        }
    }

    pub fn describe(&self, rules: &QualityRules) -> String {
        match self {
            Self::ElevationRange => format!("{} < elev_lowestmode < {}", rules.min_elev, rules.max_elev),
            Self::DegradeFlag => "degrade_flag = 0".into(),
            Self::QualityFlag => "quality_flag = 1".into(),
            Self::Sensitivity => format!("sensitivity >= {}", rules.min_sensitivity),
            Self::CanopyHeight => "rh100 > 0".into(),
            Self::TreeCover => "tree_cover = 1".into(),
        }
    }
}

/// Keeps the footprints passing every enabled quality predicate.
pub fn filter_quality(fps: Vec<Footprint>, rules: &QualityRules) -> Vec<Footprint> {
    filter_quality_staged(fps, rules).0
}

/// Like [`filter_quality`], additionally reporting how many footprints remain
/// after each enabled predicate is applied in [`QualityCheck::ORDER`].
pub fn filter_quality_staged(
    mut fps: Vec<Footprint>,
    rules: &QualityRules,
) -> (Vec<Footprint>, Vec<(QualityCheck, usize)>) {
    let mut stages = Vec::new();
    for check in QualityCheck::ORDER.into_iter().filter(|c| c.enabled(rules)) {
        fps.retain(|fp| check.passes(fp, rules));
        stages.push((check, fps.len()));
    }
    (fps, stages)
}

/// Marks values deviating from their centered rolling mean by more than `k`
/// sample standard deviations. Windows are truncated at the series ends;
/// windows with fewer than 3 values or zero spread never flag.
pub fn flag_rolling_outliers(series: &[f64], window: usize, k: f64) -> Result<Vec<bool>, FootprintError> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(FootprintError::InvalidWindow(window));
    }
    if !(k > 0.0) {
        return Err(FootprintError::InvalidThreshold(k));
    }
    let half = window / 2;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let win = &series[i.saturating_sub(half)..(i + half + 1).min(n)];
            if win.len() < 3 {
                return false;
            }
            let m = win.len() as f64;
            let mean = win.iter().sum::<f64>() / m;
            let var = win.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
            let sd = var.sqrt();
            sd > 0.0 && (series[i] - mean).abs() > k * sd
        })
        .collect())
}

/// Subtracts the geoid undulation at each footprint. Footprints outside the
/// geoid (or on nodata) are dropped; the drop count is returned alongside.
pub fn apply_geoid(
    fps: Vec<Footprint>,
    footprint_crs: &str,
    geoid: &RasterGrid,
) -> Result<(Vec<Footprint>, usize), FootprintError> {
    geoid.ensure_same_crs("geoid", "footprints", footprint_crs)?;
    let before = fps.len();
    let kept: Vec<Footprint> = fps
        .into_iter()
        .filter_map(|mut fp| {
            let undulation = geoid.sample_point(fp.x, fp.y)?;
            fp.gedi_dem = Some(fp.elev_lowestmode - undulation);
            Some(fp)
        })
        .collect();
    let dropped = before - kept.len();
    Ok((kept, dropped))
}

/// Footprints sharing a shot-number prefix, in acquisition order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotGroup {
    pub key: String,
    pub footprints: Vec<Footprint>,
}

impl ShotGroup {
    pub fn len(&self) -> usize {
        self.footprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.footprints.is_empty()
    }

    /// Observed elevations in the DEM datum.
    pub fn elevations(&self) -> Vec<f64> {
        self.footprints.iter().map(Footprint::dem_elevation).collect()
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.footprints.iter().map(|f| (f.x, f.y)).collect()
    }

    /// Drops footprints whose elevation is a rolling-window outlier. Returns
    /// the number removed.
    pub fn remove_outliers(&mut self, window: usize, k: f64) -> Result<usize, FootprintError> {
        let mask = flag_rolling_outliers(&self.elevations(), window, k)?;
        let before = self.footprints.len();
        let mut flags = mask.into_iter();
        self.footprints.retain(|_| !flags.next().unwrap_or(false));
        Ok(before - self.footprints.len())
    }
}

/// Groups with fewer footprints than this are not optimized.
pub const MIN_GROUP_SIZE: usize = 3;

/// Default number of leading shot-number characters forming the group key.
pub const DEFAULT_PREFIX_LEN: usize = 10;

/// Partitions footprints by shot-number prefix. Groups come back sorted by key
/// and keep the input order within each group.
pub fn group_by_shot(fps: Vec<Footprint>, prefix_len: usize) -> Result<Vec<ShotGroup>, FootprintError> {
    let mut groups: BTreeMap<String, Vec<Footprint>> = BTreeMap::new();
    for fp in fps {
        let key: String = fp.shot_number.chars().take(prefix_len).collect();
        if key.chars().count() < prefix_len {
            return Err(FootprintError::ShotNumberTooShort {
                shot: fp.shot_number,
                prefix_len,
            });
        }
        groups.entry(key).or_default().push(fp);
    }
    Ok(groups
        .into_iter()
        .map(|(key, footprints)| ShotGroup { key, footprints })
        .collect())
}

/// Why [`attach_reference`] dropped footprints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttachStats {
    pub no_reference: usize,
    pub too_far: usize,
}

/// Sets `ref_elev` from the DEM buffer at each (uncorrected) position and
/// drops footprints without a reference or differing from it by more than
/// `max_dem_diff`.
pub fn attach_reference(
    group: ShotGroup,
    dem: &RasterGrid,
    footprint_crs: &str,
    radius: f64,
    agg: AggregationKind,
    max_dem_diff: f64,
) -> Result<(ShotGroup, AttachStats), FootprintError> {
    dem.ensure_same_crs("DEM", "footprints", footprint_crs)?;
    if !(radius > 0.0) {
        return Err(RasterError::NonPositiveRadius(radius).into());
    }
    let mut stats = AttachStats::default();
    let footprints = group
        .footprints
        .into_iter()
        .filter_map(|mut fp| {
            let Some(r) = dem.aggregate_buffer_unchecked(fp.x, fp.y, radius, agg) else {
                stats.no_reference += 1;
                return None;
            };
            if (fp.dem_elevation() - r).abs() > max_dem_diff {
                stats.too_far += 1;
                return None;
            }
            fp.ref_elev = Some(r);
            Some(fp)
        })
        .collect();
    Ok((ShotGroup { key: group.key, footprints }, stats))
}

/// Options for [`prepare_groups`].
#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub rules: QualityRules,
    pub radius: f64,
    pub agg: AggregationKind,
    pub prefix_len: usize,
    /// CRS of the footprint coordinates; defaults to the DEM's.
    pub footprint_crs: Option<String>,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            rules: QualityRules::default(),
            radius: 12.5,
            agg: AggregationKind::Mean,
            prefix_len: DEFAULT_PREFIX_LEN,
            footprint_crs: None,
        }
    }
}

/// Footprints remaining after a named preprocessing stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCount {
    pub stage: String,
    pub remaining: usize,
}

impl fmt::Display for StageCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} remaining", self.stage, self.remaining)
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub groups: Vec<ShotGroup>,
    pub stages: Vec<StageCount>,
}

impl Prepared {
    /// The first stage that left no footprints, if any.
    pub fn exhausted_at(&self) -> Option<&StageCount> {
        self.stages.iter().find(|s| s.remaining == 0)
    }

    pub fn n_footprints(&self) -> usize {
        self.groups.iter().map(ShotGroup::len).sum()
    }
}

/// Runs the full preprocessing chain: quality filters, geoid correction,
/// grouping, per-group rolling outlier removal and reference attachment.
/// Groups emptied along the way are dropped.
pub fn prepare_groups(
    parsed: ParsedFootprints,
    dem: &RasterGrid,
    geoid: Option<&RasterGrid>,
    opts: &PrepareOptions,
) -> Result<Prepared, FootprintError> {
    opts.rules.validate()?;
    let crs = opts.footprint_crs.clone().unwrap_or_else(|| dem.crs_tag.clone());
    let mut stages = vec![StageCount {
        stage: "parse (rows with missing or invalid fields)".into(),
        remaining: parsed.footprints.len(),
    }];

    let (fps, quality) = filter_quality_staged(parsed.footprints, &opts.rules);
    stages.extend(quality.into_iter().map(|(check, remaining)| StageCount {
        stage: format!("quality filter `{}`", check.describe(&opts.rules)),
        remaining,
    }));

    let fps = match geoid {
        Some(g) => apply_geoid(fps, &crs, g)?.0,
        None => fps
            .into_iter()
            .map(|mut fp| {
                fp.gedi_dem = Some(fp.elev_lowestmode);
                fp
            })
            .collect(),
    };
    stages.push(StageCount {
        stage: "geoid correction (outside geoid extent)".into(),
        remaining: fps.len(),
    });

    let mut groups = group_by_shot(fps, opts.prefix_len)?;
    for g in groups.iter_mut() {
        g.remove_outliers(opts.rules.outlier_window, opts.rules.outlier_k)?;
    }
    stages.push(StageCount {
        stage: format!(
            "rolling outlier filter (window {}, {} sd)",
            opts.rules.outlier_window, opts.rules.outlier_k
        ),
        remaining: groups.iter().map(ShotGroup::len).sum(),
    });

    let mut attached = Vec::with_capacity(groups.len());
    let mut no_ref_remaining = stages.last().map_or(0, |s| s.remaining);
    let mut total = AttachStats::default();
    for g in groups {
        let (g, stats) = attach_reference(g, dem, &crs, opts.radius, opts.agg, opts.rules.max_dem_diff)?;
        total.no_reference += stats.no_reference;
        total.too_far += stats.too_far;
        if !g.is_empty() {
            attached.push(g);
        }
    }
    no_ref_remaining -= total.no_reference;
    stages.push(StageCount {
        stage: "DEM coverage (no reference elevation)".into(),
        remaining: no_ref_remaining,
    });
    stages.push(StageCount {
        stage: format!("DEM difference filter (|gedi_dem - ref| > {} m)", opts.rules.max_dem_diff),
        remaining: no_ref_remaining - total.too_far,
    });

    Ok(Prepared { groups: attached, stages })
}
