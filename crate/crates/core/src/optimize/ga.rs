//! Real-coded genetic algorithm over `(dx, dy)`.
//!
//! Tournament selection, blend (BLX-α) crossover, per-gene Gaussian mutation,
//! clamping to the window and elitist replacement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Bounds, DisplacementSolution, GaConfig, Method, Tracker};

type Individual = ([f64; 2], f64);

fn tournament<'a>(pop: &'a [Individual], size: usize, rng: &mut ChaCha8Rng) -> &'a Individual {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..size {
        let cand = &pop[rng.random_range(0..pop.len())];
        if cand.1 < best.1 {
            best = cand;
        }
    }
    best
}

fn blend(a: [f64; 2], b: [f64; 2], alpha: f64, rng: &mut ChaCha8Rng) -> [f64; 2] {
    [0, 1].map(|i| {
        let (lo, hi) = (a[i].min(b[i]), a[i].max(b[i]));
        let ext = alpha * (hi - lo);
        (lo - ext) + rng.random::<f64>() * ((hi + ext) - (lo - ext))
    })
}

/// Runs the GA with a ChaCha8 stream seeded from `seed`.
pub fn optimize_ga<F: Fn(f64, f64) -> f64>(f: &F, bounds: &Bounds, cfg: &GaConfig, seed: u64) -> DisplacementSolution {
    optimize_ga_traced(f, bounds, cfg, seed, None).0
}

/// Like [`optimize_ga`], optionally starting from a given population, and
/// also returning the best fitness of each generation's population
/// (initial population first).
pub fn optimize_ga_traced<F: Fn(f64, f64) -> f64>(
    f: &F,
    bounds: &Bounds,
    cfg: &GaConfig,
    seed: u64,
    initial: Option<&[[f64; 2]]>,
) -> (DisplacementSolution, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = Tracker::new(f);
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let mutation = Normal::new(0.0, cfg.mutation_sigma).expect("mutation_sigma validated as finite and >= 0");

    let starts: Vec<[f64; 2]> = match initial {
        Some(p) => p.iter().map(|&x| bounds.clamp(x)).collect(),
        None => (0..cfg.pop)
            .map(|_| [0, 1].map(|i| lo[i] + rng.random::<f64>() * (hi[i] - lo[i])))
            .collect(),
    };
    let mut pop: Vec<Individual> = starts.into_iter().map(|x| (x, tracker.eval(x))).collect();
    let size = pop.len();
    let pop_best = |p: &[Individual]| p.iter().map(|i| i.1).fold(f64::INFINITY, f64::min);
    let mut trace = vec![pop_best(&pop)];

    for _ in 0..cfg.generations {
        let mut ranked: Vec<usize> = (0..size).collect();
        // Stable sort: equal fitness keeps population order.
        ranked.sort_by(|&a, &b| pop[a].1.total_cmp(&pop[b].1));
        let mut next: Vec<Individual> = ranked.iter().take(cfg.elitism.min(size)).map(|&i| pop[i]).collect();

        while next.len() < size {
            let p1 = tournament(&pop, cfg.tournament_size, &mut rng).0;
            let p2 = tournament(&pop, cfg.tournament_size, &mut rng).0;
            let (mut c1, mut c2) = if rng.random::<f64>() < cfg.crossover_rate {
                (blend(p1, p2, cfg.blend_alpha, &mut rng), blend(p1, p2, cfg.blend_alpha, &mut rng))
            } else {
                (p1, p2)
            };
            for child in [&mut c1, &mut c2] {
                for gene in child.iter_mut() {
                    if rng.random::<f64>() < cfg.mutation_rate {
                        *gene += mutation.sample(&mut rng);
                    }
                }
                *child = bounds.clamp(*child);
            }
            next.push((c1, tracker.eval(c1)));
            if next.len() < size {
                next.push((c2, tracker.eval(c2)));
            }
        }
        pop = next;
        trace.push(pop_best(&pop));
    }
    // Budget-driven: there is no convergence test to fail.
    (tracker.solution(Method::Ga, true), trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::test_support::Recording;

    #[test]
    fn bowl_converges_near_origin() {
        let sol = optimize_ga(&|x: f64, y: f64| x * x + y * y, &Bounds::default(), &GaConfig::default(), 1);
        assert!(sol.objective_value <= 0.1, "{sol:?}");
        assert!(sol.converged);
        assert_eq!(sol.evaluations, 50 + 100 * 49);
    }

    #[test]
    fn identical_seeds_are_bitwise_identical() {
        let f = |x: f64, y: f64| (x - 3.3).powi(2) + (y * 0.7).sin() * 4.0;
        let a = optimize_ga(&f, &Bounds::default(), &GaConfig::default(), 42);
        let b = optimize_ga(&f, &Bounds::default(), &GaConfig::default(), 42);
        assert_eq!(a.dx.to_bits(), b.dx.to_bits());
        assert_eq!(a.dy.to_bits(), b.dy.to_bits());
        assert_eq!(a, b);
        let c = optimize_ga(&f, &Bounds::default(), &GaConfig::default(), 43);
        assert_ne!(a.dx.to_bits(), c.dx.to_bits());
    }

    #[test]
    fn degenerate_population_without_mutation_never_worsens() {
        let cfg = GaConfig {
            mutation_rate: 0.0,
            ..Default::default()
        };
        let init = vec![[4.0, -2.0]; cfg.pop];
        let (sol, trace) = optimize_ga_traced(&|x: f64, y: f64| x * x + y * y, &Bounds::default(), &cfg, 3, Some(&init));
        assert_eq!(trace.len(), cfg.generations + 1);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(sol.objective_value, 20.0);
    }

    #[test]
    fn elitism_keeps_population_best_monotone() {
        let f = |x: f64, y: f64| (x - 10.0).abs() + (y + 4.0).abs() + 2.0 * (x * 0.5).cos();
        let (_, trace) = optimize_ga_traced(&f, &Bounds::default(), &GaConfig::default(), 8, None);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn best_seen_and_bounds() {
        let rec = Recording::new(|x: f64, y: f64| -(x + y));
        let bounds = Bounds::new(25.0, 5.0).unwrap();
        let sol = optimize_ga(&rec.objective(), &bounds, &GaConfig::default(), 2);
        assert_eq!(sol.objective_value, rec.min_seen());
        assert!(rec.log.borrow().iter().all(|&(x, y, _)| bounds.contains(x, y)));
        assert!((sol.dx - 25.0).abs() < 0.5 && (sol.dy - 5.0).abs() < 0.5, "{sol:?}");
    }

    #[test]
    fn quadratic_family_within_half_meter() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..50 {
            let (a, b) = (rng.random_range(-24.0..24.0), rng.random_range(-24.0..24.0));
            let f = move |x: f64, y: f64| (x - a).powi(2) + (y - b).powi(2);
            let sol = optimize_ga(&f, &Bounds::default(), &GaConfig::default(), seed);
            assert!((sol.dx - a).hypot(sol.dy - b) <= 0.5, "{a} {b} {sol:?}");
        }
    }
}
