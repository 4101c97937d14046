//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) the `map*` functions fan out
//! over rayon's pool; without it they run sequentially. Either way results
//! come back in input order, and every reduction in this crate folds those
//! results in ascending index order, so outputs are bit-identical regardless
//! of thread count.
//!
//! The [`seq`] module is always sequential and exists so benches and tests
//! can compare both paths in one build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to every item, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seq::map(items, f)
    }
}

/// Apply `f` to `0..n`, preserving order.
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
        seq::map_range(n, f)
    }
}

/// Run `f` inside a pool of `threads` workers. `threads == 0` uses the
/// global pool. Without the `parallel` feature this just calls `f`.
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Whether the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

pub mod seq {
    pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        F: Fn(&T) -> R,
    {
        items.iter().map(f).collect()
    }

    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        F: Fn(usize) -> R,
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<f64> = (0..1000).map(|i| i as f64 * 0.37).collect();
        let a = map(&items, |x| x.sin() * x);
        let b = seq::map(&items, |x| x.sin() * x);
        assert_eq!(a, b);
        assert_eq!(map_range(17, |i| i * i), seq::map_range(17, |i| i * i));
    }
}
