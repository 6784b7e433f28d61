//! Data-parallel execution shim. Runs are independent (seed, config)
//! workers; with the `parallel` feature they fan out over a rayon pool,
//! otherwise they run sequentially on the calling thread. Output order
//! always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over independent work items, in parallel when enabled.
#[cfg(feature = "parallel")]
pub fn par_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

/// Always-sequential twin of [`par_map`]; the benchmark suite compares
/// the two on identical workloads.
pub fn seq_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_and_keep_order() {
        let items: Vec<u64> = (0..64).collect();
        let f = |x: u64| x.wrapping_mul(0x9e3779b97f4a7c15).rotate_left(17);
        assert_eq!(par_map(items.clone(), f), seq_map(items, f));
    }
}
