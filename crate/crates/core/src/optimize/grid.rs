use super::{Bounds, DisplacementSolution, Method, OptimizeError, Tracker};

/// Lattice coordinates `-max, -max + step, ...` not exceeding `max`.
pub fn grid_lattice(max_abs: f64, step: f64) -> Vec<f64> {
    // The epsilon keeps `50 / 5` from landing one ulp short of 10.
    let n = (2.0 * max_abs / step + 1e-9).floor() as usize + 1;
    (0..n).map(|k| -max_abs + k as f64 * step).collect()
}

/// Exhaustive lattice search. Scans `dy` in the outer loop and `dx` in the
/// inner loop, both ascending; the first minimum wins.
pub fn grid_search<F: Fn(f64, f64) -> f64>(
    f: &F,
    bounds: &Bounds,
    step: f64,
) -> Result<DisplacementSolution, OptimizeError> {
    bounds.validate()?;
    if !(step > 0.0 && step <= 2.0 * bounds.max_abs_dx && step <= 2.0 * bounds.max_abs_dy) {
        return Err(OptimizeError::InvalidConfig(format!(
            "grid step {step} must be positive and no larger than the window width"
        )));
    }
    let xs = grid_lattice(bounds.max_abs_dx, step);
    let ys = grid_lattice(bounds.max_abs_dy, step);
    let mut tracker = Tracker::new(f);
    for &dy in &ys {
        for &dx in &xs {
            tracker.eval([dx, dy]);
        }
    }
    Ok(tracker.solution(Method::Grid, true))
}
