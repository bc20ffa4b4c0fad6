//! ESRI ASCII grid (`.asc`) reader and writer.
//!
//! The CRS is carried by an optional `.prj` sidecar whose trimmed contents
//! become the grid's `crs_tag`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{RasterError, RasterGrid, RasterKind};

const DEFAULT_NODATA: f64 = -9999.0;

pub fn read_ascii_grid(path: &Path, kind: RasterKind) -> Result<RasterGrid, RasterError> {
    let text = fs::read_to_string(path).map_err(|source| RasterError::Io {
        kind,
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |message: String| RasterError::Malformed {
        path: path.to_path_buf(),
        message,
    };

    let mut tokens = text.split_ascii_whitespace().peekable();
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut ll_is_center = false;
    let mut cell_x = None;
    let mut cell_y = None;
    let mut nodata = None;

    while let Some(&key) = tokens.peek() {
        if key.parse::<f64>().is_ok() {
            break;
        }
        tokens.next();
        let value = tokens
            .next()
            .ok_or_else(|| malformed(format!("header key '{key}' has no value")))?;
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| malformed(format!("header '{key}' has non-numeric value '{value}'")))
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(parse_count(value).ok_or_else(|| malformed(format!("bad ncols '{value}'")))?),
            "nrows" => nrows = Some(parse_count(value).ok_or_else(|| malformed(format!("bad nrows '{value}'")))?),
            "xllcorner" => xll = Some(num()?),
            "yllcorner" => yll = Some(num()?),
            "xllcenter" => {
                xll = Some(num()?);
                ll_is_center = true;
            }
            "yllcenter" => {
                yll = Some(num()?);
                ll_is_center = true;
            }
            "cellsize" => {
                let c = num()?;
                cell_x = Some(c);
                cell_y = Some(c);
            }
            "dx" => cell_x = Some(num()?),
            "dy" => cell_y = Some(num()?),
            "nodata_value" => nodata = Some(num()?),
            other => return Err(malformed(format!("unknown header key '{other}'"))),
        }
    }

    let ncols = ncols.ok_or_else(|| malformed("missing ncols".into()))?;
    let nrows = nrows.ok_or_else(|| malformed("missing nrows".into()))?;
    let mut xll = xll.ok_or_else(|| malformed("missing xllcorner/xllcenter".into()))?;
    let mut yll = yll.ok_or_else(|| malformed("missing yllcorner/yllcenter".into()))?;
    let cell_x = cell_x.ok_or_else(|| malformed("missing cellsize".into()))?;
    let cell_y = cell_y.ok_or_else(|| malformed("missing cellsize".into()))?;
    if !(cell_x.is_finite() && cell_x > 0.0 && cell_y.is_finite() && cell_y > 0.0) {
        return Err(malformed(format!("cell size must be finite and positive, got {cell_x} x {cell_y}")));
    }
    if ll_is_center {
        xll -= 0.5 * cell_x;
        yll -= 0.5 * cell_y;
    }

    let mut values = Vec::with_capacity(ncols * nrows);
    for tok in tokens {
        let v: f64 = tok
            .parse()
            .map_err(|_| malformed(format!("non-numeric cell value '{tok}'")))?;
        if !v.is_finite() {
            return Err(malformed(format!("non-finite cell value '{tok}'")));
        }
        values.push(v);
    }
    if values.len() != ncols * nrows {
        return Err(malformed(format!(
            "expected {} cell values, found {}",
            ncols * nrows,
            values.len()
        )));
    }

    let crs_tag = read_prj(path);
    let origin_y = yll + nrows as f64 * cell_y;
    RasterGrid::new(xll, origin_y, cell_x, -cell_y, nrows, ncols, values, nodata, crs_tag)
        .map_err(|e| malformed(e.to_string()))
}

fn parse_count(s: &str) -> Option<usize> {
    s.parse::<usize>().ok().filter(|&n| n > 0)
}

fn read_prj(path: &Path) -> String {
    fs::read_to_string(path.with_extension("prj"))
        .map(|s| s.trim().to_string())
        .unwrap_or_default()
}

/// Writes `grid` as an ESRI ASCII grid and, when the grid has a CRS tag, a
/// `.prj` sidecar holding it.
///
/// Only north-up grids are representable. Values are written in shortest
/// round-trip form, so reading the file back reproduces them exactly.
pub fn write_ascii_grid(grid: &RasterGrid, path: &Path) -> Result<(), RasterError> {
    if grid.cell_size_y >= 0.0 {
        return Err(RasterError::Geometry("ESRI ASCII grids must be north-up".into()));
    }
    let io_err = |source| RasterError::Io {
        kind: RasterKind::Dem,
        path: path.to_path_buf(),
        source,
    };
    let nodata = grid.nodata.unwrap_or(DEFAULT_NODATA);
    let cell_y = -grid.cell_size_y;
    let yll = grid.origin_y - grid.n_rows as f64 * cell_y;

    let mut out = String::with_capacity(grid.values().len() * 12 + 200);
    let _ = writeln!(out, "ncols {}", grid.n_cols);
    let _ = writeln!(out, "nrows {}", grid.n_rows);
    let _ = writeln!(out, "xllcorner {}", grid.origin_x);
    let _ = writeln!(out, "yllcorner {}", yll);
    if grid.cell_size_x == cell_y {
        let _ = writeln!(out, "cellsize {}", grid.cell_size_x);
    } else {
        let _ = writeln!(out, "dx {}", grid.cell_size_x);
        let _ = writeln!(out, "dy {}", cell_y);
    }
    let _ = writeln!(out, "NODATA_value {}", nodata);
    for row in grid.values().chunks(grid.n_cols) {
        let mut first = true;
        for &v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{}", if v.is_nan() { nodata } else { v });
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err)?;
    if !grid.crs_tag.is_empty() {
        fs::write(path.with_extension("prj"), format!("{}\n", grid.crs_tag)).map_err(io_err)?;
    }
    Ok(())
}
