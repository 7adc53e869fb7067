//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool;
//! without it every call runs on the calling thread. Results never depend on
//! the degree of parallelism: work items are independent and outputs are
//! collected in index order.

/// How much parallelism a computation may use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Parallelism {
    /// Run on the calling thread.
    Sequential,
    /// Use the ambient rayon pool.
    #[default]
    Available,
    /// Use a dedicated pool with this many threads.
    Threads(usize),
}

impl Parallelism {
    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        imp::map(self, n, f)
    }
}

#[cfg(feature = "parallel")]
mod imp {
    use super::Parallelism;
    use rayon::prelude::*;

    pub(super) fn map<T, F>(par: Parallelism, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match par {
            Parallelism::Sequential => (0..n).map(f).collect(),
            Parallelism::Available => (0..n).into_par_iter().map(f).collect(),
            Parallelism::Threads(k) if k <= 1 => (0..n).map(f).collect(),
            Parallelism::Threads(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
                Err(_) => (0..n).into_par_iter().map(f).collect(),
            },
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    use super::Parallelism;

    pub(super) fn map<T, F>(_par: Parallelism, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
