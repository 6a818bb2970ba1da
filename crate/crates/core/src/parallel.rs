//! Fixed-size worker pool for episode rollouts. Results always come back
//! in index order, so the worker count never changes what is computed.

#[cfg(feature = "parallel")]
pub struct WorkerPool {
    workers: usize,
    pool: Option<rayon::ThreadPool>,
}

#[cfg(feature = "parallel")]
impl WorkerPool {
    pub fn new(workers: usize) -> Self {
        let workers = workers.max(1);
        let pool = if workers > 1 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .thread_name(|i| format!("rollout-{i}"))
                .build()
                .ok()
        } else {
            None
        };
        WorkerPool { workers, pool }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, F>(&self, range: std::ops::Range<u64>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        use rayon::prelude::*;
        match &self.pool {
            Some(pool) => pool.install(|| range.into_par_iter().map(&f).collect()),
            None => range.map(f).collect(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub struct WorkerPool {
    workers: usize,
}

#[cfg(not(feature = "parallel"))]
impl WorkerPool {
    pub fn new(workers: usize) -> Self {
        WorkerPool {
            workers: workers.max(1),
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, F>(&self, range: std::ops::Range<u64>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        range.map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_index_order() {
        for workers in [1, 3] {
            let pool = WorkerPool::new(workers);
            let out = pool.map(10..20, |i| i * i);
            assert_eq!(out, (10..20u64).map(|i| i * i).collect::<Vec<_>>());
        }
    }
}
