//! Order-preserving parallel map over independent work items.

/// Applies `f` to every item, on `workers` threads (0 = all cores) when the
/// `parallel` feature is enabled. Results keep input order.
#[cfg(feature = "parallel")]
pub fn map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    use rayon::prelude::*;
    if workers == 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        // Thread spawning can fail in constrained sandboxes; results are the same.
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T: Sync, R: Send>(items: &[T], _workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn preserves_order_for_any_worker_count() {
        let items: Vec<u64> = (0..257).collect();
        let want: Vec<u64> = items.iter().map(|x| x * x).collect();
        for workers in [0, 1, 2, 8] {
            assert_eq!(super::map(&items, workers, |x| x * x), want);
        }
    }
}
