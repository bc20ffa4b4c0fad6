//! Georeferenced elevation grids and the point / circular-buffer queries the
//! terrain objective is built on.
//!
//! Cells are addressed row-major from the upper-left corner. A query point
//! belongs to the cell whose half-open extent contains it, and a cell belongs
//! to a circular buffer iff its *center* lies within the radius.

mod ascii;
mod geotiff;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ascii::{read_ascii_grid, write_ascii_grid};
pub use geotiff::{read_geotiff, write_geotiff};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("cannot read {kind} raster {path}: {source}")]
    Io {
        kind: RasterKind,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported raster format for {path} (expected .tif/.tiff or .asc)")]
    UnsupportedFormat { path: PathBuf },
    #[error("raster {path} has {bands} bands; only single-band rasters are supported")]
    MultiBand { path: PathBuf, bands: usize },
    #[error("raster {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("invalid raster geometry: {0}")]
    Geometry(String),
    #[error("buffer radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("CRS mismatch: {left_name} is '{left}' but {right_name} is '{right}'")]
    CrsMismatch {
        left_name: String,
        left: String,
        right_name: String,
        right: String,
    },
}

/// What a raster is loaded as. Only used for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterKind {
    Dem,
    Geoid,
}

impl fmt::Display for RasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RasterKind::Dem => "DEM",
            RasterKind::Geoid => "geoid",
        })
    }
}

/// Aggregation applied to the cells selected by a circular buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationKind {
    #[default]
    Mean,
    Median,
    /// Most frequent value after rounding to 0.1 m; ties go to the lower bin.
    Mode,
}

impl AggregationKind {
    pub const ALL: [AggregationKind; 3] = [Self::Mean, Self::Median, Self::Mode];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Median => "median",
            Self::Mode => "mode",
        }
    }
}

impl fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            "mode" => Ok(Self::Mode),
            other => Err(format!("unknown aggregation '{other}' (expected mean|median|mode)")),
        }
    }
}

/// Bin width used by [`AggregationKind::Mode`].
pub const MODE_BIN_WIDTH: f64 = 0.1;

/// A north-up elevation grid.
///
/// Nodata cells are held as `NaN` in `values`; `nodata` keeps the sentinel the
/// grid was read with (or should be written with).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size_x: f64,
    pub cell_size_y: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    values: Vec<f64>,
    pub nodata: Option<f64>,
    pub crs_tag: String,
}

impl RasterGrid {
    /// Builds a grid, replacing every occurrence of `nodata` with `NaN`.
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size_x: f64,
        cell_size_y: f64,
        n_rows: usize,
        n_cols: usize,
        mut values: Vec<f64>,
        nodata: Option<f64>,
        crs_tag: impl Into<String>,
    ) -> Result<Self, RasterError> {
        if n_rows == 0 || n_cols == 0 {
            return Err(RasterError::Geometry(format!(
                "grid must have positive dimensions, got {n_rows}x{n_cols}"
            )));
        }
        if n_rows * n_cols != values.len() {
            return Err(RasterError::Geometry(format!(
                "{n_rows}x{n_cols} grid needs {} values, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        if !(cell_size_x.is_finite() && cell_size_x > 0.0) {
            return Err(RasterError::Geometry(format!(
                "cell_size_x must be finite and positive, got {cell_size_x}"
            )));
        }
        if !(cell_size_y.is_finite() && cell_size_y != 0.0) {
            return Err(RasterError::Geometry(format!(
                "cell_size_y must be finite and non-zero, got {cell_size_y}"
            )));
        }
        if !(origin_x.is_finite() && origin_y.is_finite()) {
            return Err(RasterError::Geometry("origin must be finite".into()));
        }
        for v in values.iter_mut() {
            if nodata.is_some_and(|nd| *v == nd) {
                *v = f64::NAN;
            } else if v.is_infinite() {
                return Err(RasterError::Geometry(format!("non-finite cell value {v}")));
            }
        }
        Ok(Self {
            origin_x,
            origin_y,
            cell_size_x,
            cell_size_y,
            n_rows,
            n_cols,
            values,
            nodata,
            crs_tag: crs_tag.into(),
        })
    }

    /// Convenience constructor for a square-celled north-up grid with no nodata.
    pub fn north_up(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        values: Vec<f64>,
        crs_tag: impl Into<String>,
    ) -> Result<Self, RasterError> {
        Self::new(origin_x, origin_y, cell_size, -cell_size, n_rows, n_cols, values, None, crs_tag)
    }

    /// Row-major cell values, `NaN` marking nodata.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[row * self.n_cols + col];
        (!v.is_nan()).then_some(v)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size_x,
            self.origin_y + (row as f64 + 0.5) * self.cell_size_y,
        )
    }

    /// `(min_x, min_y, max_x, max_y)` of the grid.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let x1 = self.origin_x + self.n_cols as f64 * self.cell_size_x;
        let y1 = self.origin_y + self.n_rows as f64 * self.cell_size_y;
        (
            self.origin_x.min(x1),
            self.origin_y.min(y1),
            self.origin_x.max(x1),
            self.origin_y.max(y1),
        )
    }

    pub fn min_cell_size(&self) -> f64 {
        self.cell_size_x.min(self.cell_size_y.abs())
    }

    /// Value range over non-nodata cells.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.values.iter().filter(|v| !v.is_nan()).fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    pub fn ensure_same_crs(&self, name: &str, other_name: &str, other_tag: &str) -> Result<(), RasterError> {
        if self.crs_tag == other_tag {
            Ok(())
        } else {
            Err(RasterError::CrsMismatch {
                left_name: name.to_string(),
                left: self.crs_tag.clone(),
                right_name: other_name.to_string(),
                right: other_tag.to_string(),
            })
        }
    }

    fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin_x) / self.cell_size_x).floor();
        let row = ((y - self.origin_y) / self.cell_size_y).floor();
        if !(col >= 0.0 && row >= 0.0) {
            return None;
        }
        let (row, col) = (row as usize, col as usize);
        (row < self.n_rows && col < self.n_cols).then_some((row, col))
    }

    /// Value of the cell containing `(x, y)`; `None` outside the extent or on nodata.
    pub fn sample_point(&self, x: f64, y: f64) -> Option<f64> {
        let (row, col) = self.locate(x, y)?;
        self.value(row, col)
    }

    /// Row/column window that can hold cell centers within `radius` of `(cx, cy)`.
    fn buffer_window(&self, cx: f64, cy: f64, radius: f64) -> Option<(usize, usize, usize, usize)> {
        // Center of column c is origin_x + (c + 0.5) * csx; solve for the extreme columns.
        let csy = self.cell_size_y;
        let c_lo = ((cx - radius - self.origin_x) / self.cell_size_x - 0.5).ceil();
        let c_hi = ((cx + radius - self.origin_x) / self.cell_size_x - 0.5).floor();
        let (ya, yb) = ((cy - radius - self.origin_y) / csy - 0.5, (cy + radius - self.origin_y) / csy - 0.5);
        let r_lo = ya.min(yb).ceil();
        let r_hi = ya.max(yb).floor();
        // Widen by one cell so rounding never excludes a qualifying center; the
        // exact distance test decides membership.
        let c_lo = (c_lo - 1.0).max(0.0);
        let r_lo = (r_lo - 1.0).max(0.0);
        let c_hi = (c_hi + 1.0).min(self.n_cols as f64 - 1.0);
        let r_hi = (r_hi + 1.0).min(self.n_rows as f64 - 1.0);
        if !(c_lo <= c_hi && r_lo <= r_hi) {
            return None;
        }
        Some((r_lo as usize, r_hi as usize, c_lo as usize, c_hi as usize))
    }

    /// Calls `visit` with every non-nodata cell whose center is within `radius`
    /// of `(cx, cy)`, in row-major order.
    pub fn for_each_in_buffer(&self, cx: f64, cy: f64, radius: f64, mut visit: impl FnMut(f64)) {
        let Some((r0, r1, c0, c1)) = self.buffer_window(cx, cy, radius) else {
            return;
        };
        let r2 = radius * radius;
        for row in r0..=r1 {
            let dy = self.origin_y + (row as f64 + 0.5) * self.cell_size_y - cy;
            let dy2 = dy * dy;
            if dy2 > r2 {
                continue;
            }
            let line = &self.values[row * self.n_cols..(row + 1) * self.n_cols];
            for col in c0..=c1 {
                let dx = self.origin_x + (col as f64 + 0.5) * self.cell_size_x - cx;
                if dx * dx + dy2 <= r2 {
                    let v = line[col];
                    if !v.is_nan() {
                        visit(v);
                    }
                }
            }
        }
    }

    /// Aggregates the cells whose centers fall within `radius` of `(cx, cy)`.
    ///
    /// Returns `Ok(None)` when no non-nodata cell qualifies.
    pub fn aggregate_buffer(
        &self,
        cx: f64,
        cy: f64,
        radius: f64,
        agg: AggregationKind,
    ) -> Result<Option<f64>, RasterError> {
        if !(radius > 0.0) {
            return Err(RasterError::NonPositiveRadius(radius));
        }
        Ok(self.aggregate_buffer_unchecked(cx, cy, radius, agg))
    }

    /// [`Self::aggregate_buffer`] without the radius check, for hot loops that
    /// validated the radius once up front.
    pub fn aggregate_buffer_unchecked(&self, cx: f64, cy: f64, radius: f64, agg: AggregationKind) -> Option<f64> {
        match agg {
            AggregationKind::Mean => {
                let mut sum = 0.0;
                let mut n = 0usize;
                self.for_each_in_buffer(cx, cy, radius, |v| {
                    sum += v;
                    n += 1;
                });
                (n > 0).then(|| sum / n as f64)
            }
            AggregationKind::Median => {
                let mut cells = Vec::new();
                self.for_each_in_buffer(cx, cy, radius, |v| cells.push(v));
                median(&mut cells)
            }
            AggregationKind::Mode => {
                let mut bins = Vec::new();
                self.for_each_in_buffer(cx, cy, radius, |v| bins.push((v / MODE_BIN_WIDTH).round() as i64));
                mode_of_bins(&mut bins).map(|b| b as f64 * MODE_BIN_WIDTH)
            }
        }
    }
}

fn median(cells: &mut [f64]) -> Option<f64> {
    let n = cells.len();
    if n == 0 {
        return None;
    }
    cells.sort_unstable_by(f64::total_cmp);
    Some(if n % 2 == 1 {
        cells[n / 2]
    } else {
        0.5 * (cells[n / 2 - 1] + cells[n / 2])
    })
}

fn mode_of_bins(bins: &mut [i64]) -> Option<i64> {
    bins.sort_unstable();
    let mut best: Option<(i64, usize)> = None;
    let mut i = 0;
    while i < bins.len() {
        let j = i + bins[i..].iter().take_while(|&&b| b == bins[i]).count();
        // Ascending scan with strict comparison keeps the lower bin on ties.
        if best.is_none_or(|(_, count)| j - i > count) {
            best = Some((bins[i], j - i));
        }
        i = j;
    }
    best.map(|(bin, _)| bin)
}

/// Reads a GeoTIFF (`.tif`/`.tiff`) or ESRI ASCII grid (`.asc`) by extension.
pub fn load_raster(path: impl AsRef<Path>, kind: RasterKind) -> Result<RasterGrid, RasterError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "tif" | "tiff" => read_geotiff(path, kind),
        "asc" => read_ascii_grid(path, kind),
        _ => Err(RasterError::UnsupportedFormat { path: path.to_path_buf() }),
    }
}

/// Writes a GeoTIFF or ESRI ASCII grid chosen by extension.
pub fn save_raster(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("tif" | "tiff") => write_geotiff(grid, path),
        Some("asc") => write_ascii_grid(grid, path),
        _ => Err(RasterError::UnsupportedFormat { path: path.to_path_buf() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(n: usize, v: f64) -> RasterGrid {
        RasterGrid::north_up(0.0, n as f64, 1.0, n, n, vec![v; n * n], "EPSG:32654").unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(RasterGrid::north_up(0.0, 0.0, 1.0, 2, 2, vec![0.0; 3], "").is_err());
        assert!(RasterGrid::north_up(0.0, 0.0, 0.0, 1, 1, vec![0.0], "").is_err());
        assert!(RasterGrid::new(0.0, 0.0, f64::NAN, -1.0, 1, 1, vec![0.0], None, "").is_err());
        assert!(RasterGrid::north_up(0.0, 0.0, 1.0, 1, 1, vec![f64::INFINITY], "").is_err());
    }

    #[test]
    fn sample_point_constant_and_outside() {
        let g = constant(3, 100.0);
        assert_eq!(g.sample_point(1.2, 1.7), Some(100.0));
        assert_eq!(g.sample_point(4.5, 1.5), None);
        assert_eq!(g.sample_point(-0.01, 1.5), None);
    }

    #[test]
    fn sample_point_index_arithmetic() {
        let g = RasterGrid::new(0.0, 10.0, 5.0, -5.0, 2, 2, vec![1.0, 2.0, 3.0, 4.0], None, "").unwrap();
        assert_eq!(g.sample_point(7.5, 7.5), Some(2.0));
        assert_eq!(g.sample_point(2.5, 2.5), Some(3.0));
        assert_eq!(g.sample_point(9.99, 0.01), Some(4.0));
    }

    #[test]
    fn nodata_sentinel_becomes_missing() {
        let g = RasterGrid::new(0.0, 2.0, 1.0, -1.0, 2, 2, vec![1.0, -9999.0, 3.0, 4.0], Some(-9999.0), "")
            .unwrap();
        assert_eq!(g.sample_point(1.5, 1.5), None);
        assert_eq!(g.sample_point(0.5, 1.5), Some(1.0));
        assert_eq!(g.value_range(), Some((1.0, 4.0)));
    }

    #[test]
    fn buffer_on_constant_grid() {
        let g = constant(40, 100.0);
        for agg in AggregationKind::ALL {
            assert_eq!(g.aggregate_buffer(20.0, 20.0, 12.5, agg).unwrap(), Some(100.0));
        }
    }

    #[test]
    fn buffer_rejects_non_positive_radius() {
        let g = constant(3, 1.0);
        assert!(matches!(
            g.aggregate_buffer(1.0, 1.0, 0.0, AggregationKind::Mean),
            Err(RasterError::NonPositiveRadius(_))
        ));
        assert!(g.aggregate_buffer(1.0, 1.0, -2.0, AggregationKind::Mean).is_err());
    }

    #[test]
    fn buffer_inside_nodata_is_missing() {
        let mut values = vec![5.0; 100];
        for r in 2..8 {
            for c in 2..8 {
                values[r * 10 + c] = -1.0;
            }
        }
        let g = RasterGrid::new(0.0, 10.0, 1.0, -1.0, 10, 10, values, Some(-1.0), "").unwrap();
        assert_eq!(g.aggregate_buffer(5.0, 5.0, 1.0, AggregationKind::Mean).unwrap(), None);
        // Partially covered buffer keeps the valid cells.
        assert_eq!(g.aggregate_buffer(5.0, 5.0, 4.0, AggregationKind::Mean).unwrap(), Some(5.0));
    }

    #[test]
    fn buffer_fully_off_grid_is_missing() {
        let g = constant(10, 1.0);
        assert_eq!(g.aggregate_buffer(100.0, 100.0, 3.0, AggregationKind::Median).unwrap(), None);
    }

    #[test]
    fn mode_rounds_to_decimetre_and_prefers_lower_bin() {
        let g = RasterGrid::north_up(0.0, 1.0, 1.0, 1, 4, vec![10.04, 9.96, 12.0, 12.01], "").unwrap();
        // Bins 100, 100, 120, 120: tie, lower bin wins.
        let m = g.aggregate_buffer(2.0, 0.5, 10.0, AggregationKind::Mode).unwrap().unwrap();
        assert!((m - 10.0).abs() < 1e-12);
    }

    #[test]
    fn median_even_count_averages_middle_pair() {
        let g = RasterGrid::north_up(0.0, 1.0, 1.0, 1, 4, vec![4.0, 1.0, 3.0, 2.0], "").unwrap();
        assert_eq!(g.aggregate_buffer(2.0, 0.5, 10.0, AggregationKind::Median).unwrap(), Some(2.5));
    }

    #[test]
    fn crs_mismatch_reports_both_tags() {
        let g = constant(2, 0.0);
        let err = g.ensure_same_crs("DEM", "geoid", "EPSG:4326").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("EPSG:32654") && msg.contains("EPSG:4326"), "{msg}");
    }

    #[test]
    fn aggregation_names_parse() {
        for agg in AggregationKind::ALL {
            assert_eq!(agg.as_str().parse::<AggregationKind>().unwrap(), agg);
        }
        assert!("max".parse::<AggregationKind>().is_err());
    }
}
