//! Thread-pool executor for the core's batch work.

use rayon::prelude::*;
use rgc_core::exec::Executor;

/// Environment variable capping worker threads; unset or 0 means automatic.
pub const THREADS_ENV: &str = "GGS_THREADS";

#[derive(Debug)]
pub struct PoolExecutor {
    pool: rayon::ThreadPool,
}

impl PoolExecutor {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self { pool })
    }

    pub fn from_env() -> anyhow::Result<Self> {
        let threads = match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse::<usize>()
                .map_err(|_| anyhow::anyhow!("{} must be a non-negative integer, got `{}`", THREADS_ENV, v))?,
            _ => 0,
        };
        Ok(Self::new(threads)?)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for PoolExecutor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        // Indexed collect keeps input order.
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}
