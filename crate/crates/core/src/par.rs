//! Data-parallel helpers.
//!
//! With the `parallel` feature these fan out over the rayon global pool;
//! without it they are plain sequential loops. Results are always returned in
//! input order, so reductions done afterwards are reproducible regardless of
//! scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f(index, item)` over a slice, preserving order.
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(items, f)
    }
}

/// Sequential counterpart of [`map_indexed`], always available.
pub fn map_indexed_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Map over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible order-preserving map; the first error in index order wins.
pub fn try_map_indexed<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    map_indexed(items, f).into_iter().collect()
}
