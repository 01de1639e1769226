//! Data-parallel map helpers.
//!
//! Every partitioned stage (generation, bar building, window enumeration,
//! feature assembly, evaluation terms) funnels through [`Exec`]. Results
//! are always returned in input order, so outputs never depend on how the
//! work was scheduled. Without the `parallel` feature, [`Exec::Parallel`]
//! degrades to the sequential path.

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Like [`Exec::map`] but short-circuits on the first error in input order.
    pub fn try_map<T, R, F>(self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }
}

/// Runs `f` inside a dedicated pool of `threads` workers.
///
/// With `threads == None` the global pool is used.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("could not build a {n}-thread pool ({e}); using the global pool"),
        }
    }
    let _ = threads;
    f()
}
