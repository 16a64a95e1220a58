//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) `Exec::Parallel` fans work out over
//! the rayon pool; without it every call runs sequentially. Both paths
//! preserve input order, so results are identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch of independent jobs is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Maps `f` over `0..n`, collecting results in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over a slice, collecting results in order.
    pub fn map<'a, I, T, F>(self, items: &'a [I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&'a I) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Like [`Exec::map_range`] for fallible jobs; the first error in index order wins.
    pub fn try_map_range<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map_range(n, f).into_iter().collect()
    }
}
