use crate::footprints::{ShotGroup, MIN_GROUP_SIZE};
use crate::metrics::{distance_unchecked, MetricKind};
use crate::raster::{AggregationKind, RasterGrid};

use super::OptimizeError;

pub const DEFAULT_OOB_PENALTY: f64 = 1e9;

/// Inputs of a per-group terrain objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveSpec<'a> {
    pub group: &'a ShotGroup,
    pub dem: &'a RasterGrid,
    pub metric: MetricKind,
    pub radius: f64,
    pub agg: AggregationKind,
    pub oob_penalty: f64,
}

impl<'a> ObjectiveSpec<'a> {
    pub fn new(group: &'a ShotGroup, dem: &'a RasterGrid, metric: MetricKind) -> Self {
        Self {
            group,
            dem,
            metric,
            radius: 12.5,
            agg: AggregationKind::Mean,
            oob_penalty: DEFAULT_OOB_PENALTY,
        }
    }
}

/// `D(E, R(P + δ))` for one shot group.
#[derive(Debug, Clone)]
pub struct TerrainObjective<'a> {
    dem: &'a RasterGrid,
    positions: Vec<(f64, f64)>,
    observed: Vec<f64>,
    metric: MetricKind,
    radius: f64,
    agg: AggregationKind,
    oob_penalty: f64,
}

impl TerrainObjective<'_> {
    /// Reference elevations at the shifted positions; `None` marks nodata.
    pub fn references(&self, dx: f64, dy: f64) -> Vec<Option<f64>> {
        self.positions
            .iter()
            .map(|&(x, y)| self.dem.aggregate_buffer_unchecked(x + dx, y + dy, self.radius, self.agg))
            .collect()
    }

    /// Objective value at displacement `(dx, dy)`. Any nodata reference yields
    /// `oob_penalty` plus the number of nodata footprints.
    pub fn value(&self, dx: f64, dy: f64) -> f64 {
        let mut reference = Vec::with_capacity(self.positions.len());
        let mut missing = 0usize;
        for &(x, y) in &self.positions {
            match self.dem.aggregate_buffer_unchecked(x + dx, y + dy, self.radius, self.agg) {
                Some(r) => reference.push(r),
                None => missing += 1,
            }
        }
        if missing > 0 {
            return self.oob_penalty + missing as f64;
        }
        distance_unchecked(self.metric, &self.observed, &reference)
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn make_objective<'a>(spec: &ObjectiveSpec<'a>) -> Result<TerrainObjective<'a>, OptimizeError> {
    if spec.group.len() < MIN_GROUP_SIZE {
        return Err(OptimizeError::GroupTooSmall {
            key: spec.group.key.clone(),
            len: spec.group.len(),
            min: MIN_GROUP_SIZE,
        });
    }
    if !(spec.radius > 0.0 && spec.radius.is_finite()) {
        return Err(OptimizeError::NonPositiveRadius(spec.radius));
    }
    if !spec.oob_penalty.is_finite() {
        return Err(OptimizeError::InvalidConfig("oob_penalty must be finite".into()));
    }
    Ok(TerrainObjective {
        dem: spec.dem,
        positions: spec.group.positions(),
        observed: spec.group.elevations(),
        metric: spec.metric,
        radius: spec.radius,
        agg: spec.agg,
        oob_penalty: spec.oob_penalty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::footprints::Footprint;

    pub(crate) fn group(points: &[(f64, f64, f64)]) -> ShotGroup {
        ShotGroup {
            key: "G000000001".into(),
            footprints: points
                .iter()
                .enumerate()
                .map(|(i, &(x, y, z))| Footprint {
                    shot_number: format!("G000000001{i:03}"),
                    beam: "BEAM0000".into(),
                    x,
                    y,
                    elev_lowestmode: z,
                    degrade_flag: 0,
                    quality_flag: 1,
                    sensitivity: 0.98,
                    rh100: 10.0,
                    tree_cover: None,
                    gedi_dem: Some(z),
                    ref_elev: None,
                })
                .collect(),
        }
    }

    fn ramp(n: usize) -> RasterGrid {
        let values = (0..n * n).map(|i| (i % n) as f64 + 0.5).collect();
        RasterGrid::north_up(0.0, n as f64, 1.0, n, n, values, "EPSG:32633").unwrap()
    }

    #[test]
    fn flat_dem_is_zero_except_correlation() {
        let dem = RasterGrid::north_up(0.0, 200.0, 1.0, 200, 200, vec![100.0; 40000], "").unwrap();
        let g = group(&[(80.0, 80.0, 100.0), (100.0, 100.0, 100.0), (120.0, 120.0, 100.0)]);
        for metric in MetricKind::ALL {
            let f = make_objective(&ObjectiveSpec::new(&g, &dem, metric)).unwrap();
            for (dx, dy) in [(0.0, 0.0), (25.0, -25.0), (-13.7, 4.2)] {
                let want = if metric == MetricKind::Correlation { 2.0 } else { 0.0 };
                assert_eq!(f.value(dx, dy), want, "{metric}");
            }
        }
    }

    #[test]
    fn ramp_shift_is_recovered_exactly() {
        // z = x: footprints observed at true positions, reported 8 m west.
        let dem = ramp(300);
        let truth = [(100.0, 120.0), (150.0, 150.0), (200.0, 180.0), (130.0, 200.0)];
        let pts: Vec<_> = truth.iter().map(|&(x, y)| (x - 8.0, y, x)).collect();
        let g = group(&pts);
        for metric in [MetricKind::Euclidean, MetricKind::Manhattan, MetricKind::Area] {
            let f = make_objective(&ObjectiveSpec::new(&g, &dem, metric)).unwrap();
            assert!(f.value(8.0, 0.0).abs() < 1e-9, "{metric}: {}", f.value(8.0, 0.0));
            assert!(f.value(3.0, 0.0) > 1.0);
        }
    }

    #[test]
    fn off_dem_is_penalised_by_missing_count() {
        let dem = ramp(100);
        let g = group(&[(50.0, 50.0, 50.0), (60.0, 50.0, 60.0), (90.0, 50.0, 90.0)]);
        let f = make_objective(&ObjectiveSpec::new(&g, &dem, MetricKind::Euclidean)).unwrap();
        // Shifting 25 m east pushes only the last buffer off-raster.
        assert_eq!(f.value(25.0, 0.0), DEFAULT_OOB_PENALTY + 1.0);
        let far = group(&[(500.0, 500.0, 0.0), (510.0, 500.0, 0.0), (520.0, 500.0, 0.0)]);
        let f = make_objective(&ObjectiveSpec::new(&far, &dem, MetricKind::Manhattan)).unwrap();
        assert!(f.value(0.0, 0.0) >= DEFAULT_OOB_PENALTY);
        assert_eq!(f.references(0.0, 0.0), vec![None; 3]);
    }

    #[test]
    fn rejects_small_groups_and_bad_radius() {
        let dem = ramp(50);
        let g = group(&[(10.0, 10.0, 0.0), (20.0, 20.0, 0.0)]);
        assert!(matches!(
            make_objective(&ObjectiveSpec::new(&g, &dem, MetricKind::Euclidean)),
            Err(OptimizeError::GroupTooSmall { len: 2, .. })
        ));
        let g = group(&[(10.0, 10.0, 0.0), (20.0, 20.0, 0.0), (30.0, 30.0, 0.0)]);
        let mut spec = ObjectiveSpec::new(&g, &dem, MetricKind::Euclidean);
        spec.radius = 0.0;
        assert!(matches!(make_objective(&spec), Err(OptimizeError::NonPositiveRadius(_))));
    }
}
