//! Global-best particle swarm over `(dx, dy)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Bounds, DisplacementSolution, Method, PsoConfig, Tracker};

struct Particle {
    x: [f64; 2],
    v: [f64; 2],
    best_x: [f64; 2],
    best_f: f64,
}

pub fn optimize_pso<F: Fn(f64, f64) -> f64>(f: &F, bounds: &Bounds, cfg: &PsoConfig, seed: u64) -> DisplacementSolution {
    optimize_pso_traced(f, bounds, cfg, seed).0
}

/// Runs the swarm and also returns the global-best value after
/// initialization and after each iteration.
pub fn optimize_pso_traced<F: Fn(f64, f64) -> f64>(
    f: &F,
    bounds: &Bounds,
    cfg: &PsoConfig,
    seed: u64,
) -> (DisplacementSolution, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = Tracker::new(f);
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let vmax = [bounds.width(0), bounds.width(1)];

    let mut swarm: Vec<Particle> = (0..cfg.swarm)
        .map(|_| {
            let x = [0, 1].map(|i| lo[i] + rng.random::<f64>() * (hi[i] - lo[i]));
            let fx = tracker.eval(x);
            Particle {
                x,
                v: [0.0; 2],
                best_x: x,
                best_f: fx,
            }
        })
        .collect();
    let mut gbest = swarm
        .iter()
        .fold(None::<([f64; 2], f64)>, |acc, p| match acc {
            Some((_, bf)) if bf <= p.best_f => acc,
            _ => Some((p.best_x, p.best_f)),
        })
        .expect("swarm is non-empty");
    let mut trace = vec![gbest.1];

    for _ in 0..cfg.iterations {
        for p in swarm.iter_mut() {
            for i in 0..2 {
                let (r1, r2) = (rng.random::<f64>(), rng.random::<f64>());
                let v = cfg.inertia * p.v[i]
                    + cfg.cognitive * r1 * (p.best_x[i] - p.x[i])
                    + cfg.social * r2 * (gbest.0[i] - p.x[i]);
                p.v[i] = v.clamp(-vmax[i], vmax[i]);
                let x = p.x[i] + p.v[i];
                if x < lo[i] || x > hi[i] {
                    p.x[i] = x.clamp(lo[i], hi[i]);
                    p.v[i] = 0.0;
                } else {
                    p.x[i] = x;
                }
            }
            let fx = tracker.eval(p.x);
            if fx < p.best_f {
                p.best_f = fx;
                p.best_x = p.x;
            }
        }
        // Synchronous update: the swarm moves against last iteration's leader.
        for p in &swarm {
            if p.best_f < gbest.1 {
                gbest = (p.best_x, p.best_f);
            }
        }
        trace.push(gbest.1);
    }
    // gbest is the best point ever evaluated, which is what the tracker holds.
    debug_assert_eq!(tracker.best().1, gbest.1);
    (tracker.solution(Method::Pso, true), trace)
}
