//! Distances between observed LiDAR elevations `E` and reference elevations `R`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("elevation vectors differ in length ({observed} vs {reference})")]
    LengthMismatch { observed: usize, reference: usize },
    #[error("{metric} distance needs at least {needed} elements, got {got}")]
    TooShort {
        metric: MetricKind,
        needed: usize,
        got: usize,
    },
    #[error("elevation vectors must contain only finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Square root of the summed squared differences.
    Euclidean,
    /// Sum of absolute differences.
    Manhattan,
    /// Largest absolute paired difference (an L∞ norm over matched pairs,
    /// not the set-to-set Hausdorff distance).
    Hausdorff,
    /// Absolute value of the summed signed differences. Zero whenever the
    /// errors cancel, not only when they vanish.
    Area,
    /// One minus the Pearson correlation, in `[0, 2]`.
    Correlation,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        Self::Euclidean,
        Self::Manhattan,
        Self::Hausdorff,
        Self::Area,
        Self::Correlation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Euclidean => "euclidean",
            Self::Manhattan => "manhattan",
            Self::Hausdorff => "hausdorff",
            Self::Area => "area",
            Self::Correlation => "correlation",
        }
    }

    fn min_len(&self) -> usize {
        match self {
            Self::Correlation => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown metric '{s}' (expected euclidean|manhattan|hausdorff|area|correlation)"))
    }
}

/// Distance returned for correlation when either vector has zero variance.
pub const DEGENERATE_CORRELATION: f64 = 2.0;

/// Validated distance between `observed` and `reference`.
pub fn distance(kind: MetricKind, observed: &[f64], reference: &[f64]) -> Result<f64, MetricError> {
    if observed.len() != reference.len() {
        return Err(MetricError::LengthMismatch {
            observed: observed.len(),
            reference: reference.len(),
        });
    }
    if observed.len() < kind.min_len() {
        return Err(MetricError::TooShort {
            metric: kind,
            needed: kind.min_len(),
            got: observed.len(),
        });
    }
    if observed.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(distance_unchecked(kind, observed, reference))
}

/// Distance without validation; callers guarantee equal, sufficient lengths.
pub fn distance_unchecked(kind: MetricKind, e: &[f64], r: &[f64]) -> f64 {
    let diffs = e.iter().zip(r).map(|(a, b)| a - b);
    match kind {
        MetricKind::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        MetricKind::Manhattan => diffs.map(f64::abs).sum(),
        MetricKind::Hausdorff => diffs.map(f64::abs).fold(0.0, f64::max),
        MetricKind::Area => diffs.sum::<f64>().abs(),
        MetricKind::Correlation => correlation_distance(e, r),
    }
}

fn correlation_distance(e: &[f64], r: &[f64]) -> f64 {
    let n = e.len() as f64;
    let mean_e = e.iter().sum::<f64>() / n;
    let mean_r = r.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in e.iter().zip(r) {
        let (da, db) = (a - mean_e, b - mean_r);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return DEGENERATE_CORRELATION;
    }
    (1.0 - sxy / (sxx * syy).sqrt()).clamp(0.0, 2.0)
}
