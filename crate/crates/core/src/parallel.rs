//! Indexed fan-out over independent jobs.
//!
//! `map_indexed` is the single fan-out primitive used by CV grids, scan
//! restarts, and benchmark jobs. With the `parallel` feature (default) it runs
//! on the rayon pool; without it, it degrades to a plain loop. Both paths
//! return results in job-index order, and jobs must derive any randomness from
//! their index, so the two paths produce identical output.

/// Applies `job` to every index in `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(job).collect()
}

/// Applies `job` to every index in `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, job)
}

/// Sequential reference path for `map_indexed`; always available so the
/// benchmark suite can compare the two.
pub fn map_indexed_seq<T, F>(n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(job).collect()
}

/// Fallible variant: stops at the first error in index order.
pub fn try_map_indexed<T, E, F>(n: usize, job: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    let results = map_indexed(n, job);
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential() {
        let f = |i: usize| (i as u64).wrapping_mul(0x9E3779B97F4A7C15);
        assert_eq!(map_indexed(1000, f), map_indexed_seq(1000, f));
    }

    #[test]
    fn try_map_surfaces_first_error() {
        let r: Result<Vec<usize>, usize> =
            try_map_indexed(10, |i| if i >= 7 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(7));
    }
}
