//! Accuracy statistics and method comparison tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::footprints::{input_fields, Footprint, ShotGroup, REQUIRED_COLUMNS, TREE_COVER_COLUMN};
use crate::metrics::MetricKind;
use crate::optimize::{CorrectionResult, DisplacementSolution, GroupCorrection, GroupStatus, Method};
use crate::raster::{AggregationKind, RasterGrid};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0} observed vs {1} reference values")]
    LengthMismatch(usize, usize),
    #[error("cannot compute MAE of empty vectors")]
    Empty,
    #[error("results cover different shot groups: {0}")]
    GroupMismatch(String),
    #[error("group '{0}' has different footprints across results")]
    FootprintMismatch(String),
    #[error("no footprint has a reference elevation in every compared result")]
    EmptyIntersection,
    #[error("corrected table: {0}")]
    Csv(#[from] csv::Error),
    #[error("corrected table row {row}: {message}")]
    BadRecord { row: usize, message: String },
    #[error("serializing report: {0}")]
    Json(#[from] serde_json::Error),
}

/// Mean absolute error `(1/N) Σ |e - r|`.
pub fn mae(e: &[f64], r: &[f64]) -> Result<f64, EvalError> {
    if e.len() != r.len() {
        return Err(EvalError::LengthMismatch(e.len(), r.len()));
    }
    if e.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(e.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>() / e.len() as f64)
}

/// Offset statistics over groups. `None` marks a statistic that is undefined
/// for the sample size (means of nothing, sample sd of one value).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffsetSummary {
    pub mean_dx: Option<f64>,
    pub sd_dx: Option<f64>,
    pub mean_dy: Option<f64>,
    pub sd_dy: Option<f64>,
    pub mean_disp: Option<f64>,
    pub sd_disp: Option<f64>,
    pub n_groups: usize,
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = v.len();
    if n == 0 {
        return (None, None);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    (Some(mean), sd)
}

/// Means and sample standard deviations of `dx`, `dy` and `√(dx² + dy²)`.
pub fn displacement_stats(solutions: &[DisplacementSolution]) -> OffsetSummary {
    let dx: Vec<f64> = solutions.iter().map(|s| s.dx).collect();
    let dy: Vec<f64> = solutions.iter().map(|s| s.dy).collect();
    let disp: Vec<f64> = solutions.iter().map(|s| s.displacement()).collect();
    let ((mean_dx, sd_dx), (mean_dy, sd_dy), (mean_disp, sd_disp)) = (mean_sd(&dx), mean_sd(&dy), mean_sd(&disp));
    OffsetSummary {
        mean_dx,
        sd_dx,
        mean_dy,
        sd_dy,
        mean_disp,
        sd_disp,
        n_groups: solutions.len(),
    }
}

/// Label of the uncorrected baseline row.
pub const ORIGINAL_LABEL: &str = "original";
/// Metric column of the baseline row.
pub const NO_METRIC_LABEL: &str = "none";

/// One line of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub metric: String,
    pub mae_m: f64,
    #[serde(flatten)]
    pub offsets: OffsetSummary,
    pub n_footprints: usize,
    pub wall_time_s: f64,
}

pub const REPORT_COLUMNS: [&str; 12] = [
    "method",
    "metric",
    "mae_m",
    "mean_dx",
    "sd_dx",
    "mean_dy",
    "sd_dy",
    "mean_disp",
    "sd_disp",
    "n_groups",
    "n_footprints",
    "wall_time_s",
];

fn key_set<'a>(groups: impl Iterator<Item = &'a str>) -> BTreeSet<&'a str> {
    groups.collect()
}

/// Builds the original row plus one row per result. MAE is taken over the
/// footprints that have a reference elevation before correction and after
/// correction in every result, so rows are comparable.
pub fn compare_methods(results: &[CorrectionResult], original: &[ShotGroup]) -> Result<Vec<ReportRow>, EvalError> {
    let keys = key_set(original.iter().map(|g| g.key.as_str()));
    for r in results {
        let other = key_set(r.groups.iter().map(|g| g.key.as_str()));
        if other != keys {
            let diff: Vec<&str> = keys.symmetric_difference(&other).copied().collect();
            return Err(EvalError::GroupMismatch(format!(
                "{} {} differs in groups [{}]",
                r.method,
                r.metric,
                diff.join(", ")
            )));
        }
    }

    let mut common: HashSet<&str> = original
        .iter()
        .flat_map(|g| &g.footprints)
        .filter(|f| f.ref_elev.is_some())
        .map(|f| f.shot_number.as_str())
        .collect();
    let by_key: BTreeMap<&str, &ShotGroup> = original.iter().map(|g| (g.key.as_str(), g)).collect();
    for r in results {
        for g in &r.groups {
            let base = by_key[g.key.as_str()];
            let same = base.len() == g.corrected.len()
                && base
                    .footprints
                    .iter()
                    .zip(&g.corrected.footprints)
                    .all(|(a, b)| a.shot_number == b.shot_number);
            if !same {
                return Err(EvalError::FootprintMismatch(g.key.clone()));
            }
            for f in g.corrected.footprints.iter().filter(|f| f.ref_elev.is_none()) {
                common.remove(f.shot_number.as_str());
            }
        }
    }
    if common.is_empty() {
        return Err(EvalError::EmptyIntersection);
    }

    // Walk footprints in group order so sums are order-stable.
    let mae_over = |groups: &mut dyn Iterator<Item = &ShotGroup>| -> Result<(f64, usize), EvalError> {
        let (mut e, mut r) = (Vec::new(), Vec::new());
        for f in groups.flat_map(|g| &g.footprints) {
            if common.contains(f.shot_number.as_str()) {
                e.push(f.dem_elevation());
                r.push(f.ref_elev.expect("intersection members have references"));
            }
        }
        Ok((mae(&e, &r)?, e.len()))
    };

    let (orig_mae, n) = mae_over(&mut original.iter())?;
    let mut rows = vec![ReportRow {
        method: ORIGINAL_LABEL.into(),
        metric: NO_METRIC_LABEL.into(),
        mae_m: orig_mae,
        offsets: OffsetSummary {
            n_groups: original.len(),
            ..Default::default()
        },
        n_footprints: n,
        wall_time_s: 0.0,
    }];
    for r in results {
        let (m, n) = mae_over(&mut r.groups.iter().map(|g| &g.corrected))?;
        rows.push(ReportRow {
            method: r.method.to_string(),
            metric: r.metric.to_string(),
            mae_m: m,
            offsets: displacement_stats(&r.solutions()),
            n_footprints: n,
            wall_time_s: r.wall_time_s,
        });
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn row_cells(r: &ReportRow) -> [String; 12] {
    let o = &r.offsets;
    [
        r.method.clone(),
        r.metric.clone(),
        format!("{:.6}", r.mae_m),
        opt(o.mean_dx),
        opt(o.sd_dx),
        opt(o.mean_dy),
        opt(o.sd_dy),
        opt(o.mean_disp),
        opt(o.sd_disp),
        o.n_groups.to_string(),
        r.n_footprints.to_string(),
        format!("{:.6}", r.wall_time_s),
    ]
}

/// CSV with [`REPORT_COLUMNS`]; undefined statistics are written as `NA`.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record(row_cells(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV output is UTF-8")
}

/// Fixed-width table for terminals.
pub fn report_text(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 12]> = rows.iter().map(row_cells).collect();
    let widths: Vec<usize> = (0..12)
        .map(|i| cells.iter().map(|c| c[i].len()).chain([REPORT_COLUMNS[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |fields: Vec<&str>| -> String {
        let parts: Vec<String> = fields
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (f, &w))| if i < 2 { format!("{f:<w$}") } else { format!("{f:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(REPORT_COLUMNS.to_vec());
    for c in &cells {
        out += &line(c.iter().map(String::as_str).collect());
    }
    out
}

/// JSON array of rows; undefined statistics are `null`.
pub fn report_json(rows: &[ReportRow]) -> Result<String, EvalError> {
    Ok(serde_json::to_string_pretty(rows)? + "\n")
}

/// Columns appended to the input schema in a corrected table.
pub const CORRECTED_COLUMNS: [&str; 11] = [
    "gedi_dem",
    "group_key",
    "dx_m",
    "dy_m",
    "x_corrected",
    "y_corrected",
    "ref_elev_before",
    "ref_elev_after",
    "method",
    "metric",
    "status",
];

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes one row per footprint per result, in result then group order.
pub fn write_corrected<W: Write>(results: &[CorrectionResult], output: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(output);
    let header: Vec<&str> = REQUIRED_COLUMNS
        .iter()
        .copied()
        .chain([TREE_COVER_COLUMN])
        .chain(CORRECTED_COLUMNS)
        .collect();
    w.write_record(&header)?;
    for r in results {
        for g in &r.groups {
            let status = match g.status {
                GroupStatus::Corrected => "corrected",
                GroupStatus::Skipped => "skipped",
            };
            for (before, after) in g.original.footprints.iter().zip(&g.corrected.footprints) {
                let mut fields: Vec<String> = input_fields(before).into();
                fields.extend([
                    opt_num(before.gedi_dem),
                    g.key.clone(),
                    g.solution.dx.to_string(),
                    g.solution.dy.to_string(),
                    after.x.to_string(),
                    after.y.to_string(),
                    opt_num(before.ref_elev),
                    opt_num(after.ref_elev),
                    r.method.to_string(),
                    r.metric.to_string(),
                    status.to_string(),
                ]);
                w.write_record(&fields)?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CorrectedRecord {
    shot_number: String,
    beam: String,
    x: f64,
    y: f64,
    elev_lowestmode: f64,
    degrade_flag: i64,
    quality_flag: i64,
    sensitivity: f64,
    rh100: f64,
    #[serde(default)]
    tree_cover: Option<String>,
    gedi_dem: Option<f64>,
    group_key: String,
    dx_m: f64,
    dy_m: f64,
    x_corrected: f64,
    y_corrected: f64,
    method: String,
    metric: String,
    #[serde(default)]
    status: Option<String>,
}

/// Rebuilds correction results from a corrected table, recomputing reference
/// elevations at the original and corrected positions against `dem`.
/// Results come back in first-appearance order of `(method, metric)`, along
/// with the original groups.
pub fn results_from_corrected<R: Read>(
    input: R,
    dem: &RasterGrid,
    radius: f64,
    agg: AggregationKind,
) -> Result<(Vec<CorrectionResult>, Vec<ShotGroup>), EvalError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut results: Vec<CorrectionResult> = Vec::new();
    for (i, rec) in reader.deserialize::<CorrectedRecord>().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |message: String| EvalError::BadRecord { row, message };
        let method: Method = rec.method.parse().map_err(bad)?;
        let metric: MetricKind = rec.metric.parse().map_err(bad)?;
        let skipped = rec.status.as_deref() == Some("skipped");
        let reference = |x: f64, y: f64| dem.aggregate_buffer_unchecked(x, y, radius, agg);
        let before = Footprint {
            shot_number: rec.shot_number,
            beam: rec.beam,
            x: rec.x,
            y: rec.y,
            elev_lowestmode: rec.elev_lowestmode,
            degrade_flag: rec.degrade_flag,
            quality_flag: rec.quality_flag,
            sensitivity: rec.sensitivity,
            rh100: rec.rh100,
            tree_cover: match rec.tree_cover.as_deref().map(str::trim) {
                Some("1") => Some(true),
                Some("0") => Some(false),
                _ => None,
            },
            gedi_dem: rec.gedi_dem,
            ref_elev: reference(rec.x, rec.y),
        };
        let after = Footprint {
            x: rec.x_corrected,
            y: rec.y_corrected,
            ref_elev: reference(rec.x_corrected, rec.y_corrected),
            ..before.clone()
        };

        let pos = match results.iter().position(|r| r.method == method && r.metric == metric) {
            Some(p) => p,
            None => {
                results.push(CorrectionResult {
                    method,
                    metric,
                    groups: Vec::new(),
                    n_skipped: 0,
                    wall_time_s: 0.0,
                });
                results.len() - 1
            }
        };
        let result = &mut results[pos];
        if result.groups.last().is_none_or(|g| g.key != rec.group_key) {
            if result.groups.iter().any(|g| g.key == rec.group_key) {
                return Err(bad(format!("rows of group '{}' are not contiguous", rec.group_key)));
            }
            result.n_skipped += usize::from(skipped);
            result.groups.push(GroupCorrection {
                key: rec.group_key.clone(),
                status: if skipped { GroupStatus::Skipped } else { GroupStatus::Corrected },
                solution: DisplacementSolution {
                    dx: rec.dx_m,
                    dy: rec.dy_m,
                    objective_value: f64::NAN,
                    evaluations: 0,
                    converged: false,
                    method,
                },
                original: ShotGroup {
                    key: rec.group_key.clone(),
                    footprints: Vec::new(),
                },
                corrected: ShotGroup {
                    key: rec.group_key,
                    footprints: Vec::new(),
                },
                wall_time_s: 0.0,
            });
        }
        let g = result.groups.last_mut().expect("pushed above");
        g.original.footprints.push(before);
        g.corrected.footprints.push(after);
    }
    let original = results
        .first()
        .map(|r| r.groups.iter().map(|g| g.original.clone()).collect())
        .unwrap_or_default();
    Ok((results, original))
}
