//! Execution mode for data-parallel loops.
//!
//! All parallel maps preserve input order and every reduction in the crate is
//! performed sequentially over the collected results, so `Sequential` and
//! `Parallel` produce bit-identical outputs.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Order-preserving fallible map; the first error in input order wins.
pub fn try_map<T, R, E, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    map(exec, items, f).into_iter().collect()
}

/// Like [`try_map`] but with at most `max_inflight` items in flight at once.
/// Used for remote backends that must not be flooded.
#[cfg_attr(not(feature = "parallel"), allow(unused_variables))]
pub fn try_map_bounded<T, R, E, F>(
    exec: Execution,
    max_inflight: usize,
    items: &[T],
    f: F,
) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && max_inflight > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(max_inflight).build() {
            return pool.install(|| try_map(exec, items, f));
        }
    }
    let _ = max_inflight;
    try_map(Execution::Sequential, items, f)
}
