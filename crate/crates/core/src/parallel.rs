//! Data-parallel helpers.
//!
//! With the `parallel` feature enabled, [`Exec::Parallel`] fans work out over
//! the rayon pool. Without it every call runs sequentially. Results are always
//! collected in input order and reductions are performed sequentially over the
//! ordered results, so output is bit-identical in both modes.

/// Execution policy for batch loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Maps `f` over `0..n`, preserving index order.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Caps the global worker pool from `PROMARK_THREADS`, if set.
///
/// Returns the requested thread count. Calling this more than once, or after
/// the pool has been used, leaves the existing pool in place.
pub fn init_from_env() -> Option<usize> {
    let n = std::env::var("PROMARK_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)?;
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Some(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let seq = map_range(Exec::Sequential, 100, |i| (i as f64).sqrt());
        let par = map_range(Exec::Parallel, 100, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
        let v: Vec<u32> = (0..50).collect();
        assert_eq!(
            map_slice(Exec::Sequential, &v, |x| x * 3),
            map_slice(Exec::Parallel, &v, |x| x * 3)
        );
    }
}
