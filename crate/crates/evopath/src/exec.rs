//! A thread-pool [`Executor`] for candidate training.

use evopath_core::Executor;
use rayon::prelude::*;

/// Runs jobs on a dedicated rayon pool. Results come back in index order,
/// so the outcome matches [`evopath_core::Sequential`].
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
        Ok(Parallel { pool })
    }
}

impl Executor for Parallel {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use evopath_core::Sequential;

    #[test]
    fn keeps_index_order() {
        let p = Parallel::new(4).unwrap();
        let f = |i: usize| (i * 7919) % 101;
        assert_eq!(p.map(500, f), Sequential.map(500, f));
        assert!(p.map(0, f).is_empty());
    }
}
