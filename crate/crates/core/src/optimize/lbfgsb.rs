//! Box-constrained limited-memory BFGS on the displacement plane.
//!
//! Gradients come from finite differences that never leave the box: central
//! where both probes fit, a second-order three-point stencil near a bound. Each iteration fixes the
//! variables held at a bound by the gradient, takes the two-loop L-BFGS
//! direction on the free ones and runs a projected Armijo backtracking search.

use std::collections::VecDeque;

use super::{Bounds, DisplacementSolution, LbfgsbConfig, Method, Tracker};

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const DEFAULT_FD_STEP: f64 = 1.0;

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn inf_norm(a: [f64; 2]) -> f64 {
    a[0].abs().max(a[1].abs())
}

/// Finite-difference gradient of `f` at `p`, with probes kept inside `bounds`.
pub fn finite_difference_gradient<F: Fn(f64, f64) -> f64>(f: &F, p: [f64; 2], fp: f64, h: f64, bounds: &Bounds) -> [f64; 2] {
    let mut tracker = Tracker::new(f);
    gradient(&mut tracker, p, fp, h, bounds)
}

fn gradient<F: Fn(f64, f64) -> f64>(t: &mut Tracker<'_, F>, p: [f64; 2], fp: f64, h: f64, bounds: &Bounds) -> [f64; 2] {
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let mut g = [0.0; 2];
    for i in 0..2 {
        let mut eval_at = |offset: f64| {
            if offset == 0.0 {
                return fp;
            }
            let mut q = p;
            q[i] += offset;
            t.eval(q)
        };
        let (room_up, room_down) = (hi[i] - p[i], p[i] - lo[i]);
        let near = 0.25 * h;
        let nodes = if room_up >= h && room_down >= h {
            g[i] = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            continue;
        } else if room_down >= near && room_up >= h {
            [-room_down.min(h), 0.0, h]
        } else if room_up >= near && room_down >= h {
            [-h, 0.0, room_up.min(h)]
        } else if room_up >= 2.0 * h {
            [0.0, h, 2.0 * h]
        } else if room_down >= 2.0 * h {
            [-2.0 * h, -h, 0.0]
        } else {
            // Window narrower than the stencil: difference across the full width.
            g[i] = (eval_at(room_up) - eval_at(-room_down)) / (hi[i] - lo[i]);
            continue;
        };
        let values = nodes.map(&mut eval_at);
        g[i] = quadratic_slope_at_zero(nodes, values);
    }
    g
}

/// Derivative at 0 of the parabola through `(t[k], v[k])`.
fn quadratic_slope_at_zero(t: [f64; 3], v: [f64; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            v[i] * (-t[j] - t[k]) / ((t[i] - t[j]) * (t[i] - t[k]))
        })
        .sum()
}

/// `P(x - g) - x`: zero exactly at a first-order stationary point of the box
/// problem.
fn projected_gradient(x: [f64; 2], g: [f64; 2], bounds: &Bounds) -> [f64; 2] {
    let p = bounds.clamp([x[0] - g[0], x[1] - g[1]]);
    [p[0] - x[0], p[1] - x[1]]
}

struct Pair {
    s: [f64; 2],
    y: [f64; 2],
    rho: f64,
}

/// Two-loop recursion: `-H g` restricted to the free variables.
fn direction(g: [f64; 2], free: [bool; 2], memory: &VecDeque<Pair>) -> [f64; 2] {
    let mask = |v: [f64; 2]| [if free[0] { v[0] } else { 0.0 }, if free[1] { v[1] } else { 0.0 }];
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(memory.len());
    for pair in memory.iter().rev() {
        let a = pair.rho * dot(mask(pair.s), q);
        q = [q[0] - a * pair.y[0], q[1] - a * pair.y[1]];
        q = mask(q);
        alphas.push(a);
    }
    let gamma = memory.back().map_or(1.0, |p| dot(p.s, p.y) / dot(p.y, p.y));
    let mut r = [gamma * q[0], gamma * q[1]];
    for (pair, a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = pair.rho * dot(mask(pair.y), r);
        r = mask([r[0] + (a - b) * pair.s[0], r[1] + (a - b) * pair.s[1]]);
    }
    [-r[0], -r[1]]
}

struct RunOutcome {
    x: [f64; 2],
    fx: f64,
    converged: bool,
}

fn run_from<F: Fn(f64, f64) -> f64>(
    t: &mut Tracker<'_, F>,
    start: [f64; 2],
    bounds: &Bounds,
    cfg: &LbfgsbConfig,
    h: f64,
) -> RunOutcome {
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let mut x = bounds.clamp(start);
    let mut fx = t.eval(x);
    let mut g = gradient(t, x, fx, h, bounds);
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(cfg.memory);
    let max_width = bounds.width(0).max(bounds.width(1));

    for _ in 0..cfg.max_iter {
        if inf_norm(projected_gradient(x, g, bounds)) <= cfg.tol {
            return RunOutcome { x, fx, converged: true };
        }
        let free = [0, 1].map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)));
        let mut accepted = None;
        // A stale curvature model can point along a face of the box where the
        // projected step stops descending; fall back to steepest descent once.
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
            }
            let mut d = direction(g, free, &memory);
            if !(dot(d, g) < 0.0) {
                memory.clear();
                d = direction(g, free, &memory);
            }
            if inf_norm(d) == 0.0 {
                return RunOutcome { x, fx, converged: true };
            }
            // Without curvature information the raw gradient can be huge (e.g.
            // across the off-DEM penalty); cap the first trial at the window width.
            let mut alpha = if memory.is_empty() { (max_width / inf_norm(d)).min(1.0) } else { 1.0 };
            for _ in 0..MAX_BACKTRACKS {
                let xn = bounds.clamp([x[0] + alpha * d[0], x[1] + alpha * d[1]]);
                let s = [xn[0] - x[0], xn[1] - x[1]];
                if s == [0.0, 0.0] {
                    break;
                }
                let fnew = t.eval(xn);
                if fnew <= fx + ARMIJO_C1 * dot(g, s) && dot(g, s) < 0.0 {
                    accepted = Some((xn, s, fnew));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, s, fnew)) = accepted else {
            return RunOutcome { x, fx, converged: false };
        };

        let gn = gradient(t, xn, fnew, h, bounds);
        let y = [gn[0] - g[0], gn[1] - g[1]];
        let sy = dot(s, y);
        if sy > 1e-10 * dot(y, y) && sy > 0.0 {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        let change = (fx - fnew) / fx.abs().max(fnew.abs()).max(1.0);
        x = xn;
        fx = fnew;
        g = gn;
        if change <= cfg.tol {
            return RunOutcome { x, fx, converged: true };
        }
    }
    RunOutcome { x, fx, converged: false }
}

/// Runs L-BFGS-B from every start in `cfg.multistart` and returns the best
/// point evaluated. `converged` reports the start whose final iterate is best.
pub fn optimize_lbfgsb<F: Fn(f64, f64) -> f64>(f: &F, bounds: &Bounds, cfg: &LbfgsbConfig) -> DisplacementSolution {
    let h = cfg.fd_step.unwrap_or(DEFAULT_FD_STEP);
    let mut tracker = Tracker::new(f);
    let mut best_run: Option<RunOutcome> = None;
    for &start in &cfg.multistart {
        let run = run_from(&mut tracker, start, bounds, cfg, h);
        if best_run.as_ref().is_none_or(|b| run.fx < b.fx) {
            best_run = Some(run);
        }
    }
    let run = best_run.expect("multistart has at least one start");
    debug_assert!(bounds.contains(run.x[0], run.x[1]));
    tracker.solution(Method::Lbfgsb, run.converged)
}
