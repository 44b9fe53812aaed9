//! Order-preserving map over independent tasks, on a rayon pool when the
//! `parallel` feature is enabled and more than one worker is requested.

/// Maps `f` over `items`; the output is in input order whatever the worker count.
pub fn map_indexed<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 && items.len() > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect());
        }
    }
    let _ = workers;
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Whether this build can run tasks concurrently.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
