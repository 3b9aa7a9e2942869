//! Replica fan-out.
//!
//! [`map_replicas`] evaluates a closure for every replica index and returns
//! the results in index order, so any reduction done afterwards sees the same
//! sequence regardless of thread count.

/// How to run a replica loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Data-parallel over replicas. Falls back to sequential when the crate
    /// is built without the `parallel` feature.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Evaluate `f(i)` for `i in 0..n`, results in index order.
pub fn map_replicas<T, F>(n: u64, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Size the global rayon pool. Returns an error string when the pool was
/// already built or the crate lacks the `parallel` feature (in which case a
/// request for more than one thread cannot be honoured).
pub fn set_threads(threads: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        if threads > 1 {
            Err("built without the `parallel` feature".into())
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_in_both_modes() {
        let seq = map_replicas(100, Execution::Sequential, |i| i * i);
        let par = map_replicas(100, Execution::Parallel, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }
}
