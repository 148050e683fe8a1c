use rayon::ThreadPool;

/// A worker-count knob: a dedicated pool of `n` threads, or the global rayon
/// pool when `n == 0`.
pub(crate) struct Workers {
    pool: Option<ThreadPool>,
}

impl Workers {
    pub(crate) fn new(workers: usize) -> Self {
        let pool = (workers > 0)
            .then(|| rayon::ThreadPoolBuilder::new().num_threads(workers).build().ok())
            .flatten();
        Self { pool }
    }

    pub(crate) fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }
}
