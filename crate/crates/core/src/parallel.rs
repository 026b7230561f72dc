//! Order-preserving fan-out over a fixed number of workers.
//!
//! Every parallel stage of the engine maps an index range to results that are
//! collected in index order, so outputs never depend on scheduling.

use crate::error::{HiadError, Result};

#[derive(Clone)]
pub struct Workers {
    count: usize,
    #[cfg(feature = "parallel")]
    pool: Option<std::sync::Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("count", &self.count).finish()
    }
}

impl Default for Workers {
    fn default() -> Self {
        Workers::single()
    }
}

impl Workers {
    pub fn single() -> Self {
        Workers {
            count: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// A pool of `count` workers. Without the `parallel` feature every count
    /// runs sequentially.
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(HiadError::Config("worker count must be at least 1".into()));
        }
        if count == 1 {
            return Ok(Workers::single());
        }
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(count)
                .build()
                .map_err(|e| HiadError::Config(format!("cannot start {count} workers: {e}")))?;
            Ok(Workers {
                count,
                pool: Some(std::sync::Arc::new(pool)),
            })
        }
        #[cfg(not(feature = "parallel"))]
        Ok(Workers { count })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }

    pub fn try_map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}
