//! Thread-pool executor.

use ptsa_core::exec::Executor;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs work units on a private rayon pool. Output order is index order,
/// so results never depend on the thread count.
pub struct Pool {
    pool: Option<rayon::ThreadPool>,
}

impl Pool {
    /// `threads = 1` runs everything on the calling thread; `0` means one
    /// thread per available core.
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 1 {
            return Ok(Self { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Spec(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}
