//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper splits work into index-addressed units and reassembles the
//! results in index order, so the output is bit-identical whichever
//! [`Execution`] mode runs it. Without the `parallel` feature,
//! [`Execution::Parallel`] silently runs sequentially.

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] but short-circuits on the first error (by index order
/// of the collected results).
pub fn try_map_indexed<T, E, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(exec, n, f).into_iter().collect()
}

/// Applies `f` to every element of `data` in place.
pub fn for_each_mut<T, F>(exec: Execution, data: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        data.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    let _ = exec;
    data.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Splits `0..n` into consecutive chunks of at most `chunk` items.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_indexed(Execution::Sequential, 1000, f);
        let b = map_indexed(Execution::Parallel, 1000, f);
        assert_eq!(a, b);
    }

    #[test]
    fn chunks_cover_range() {
        let r = chunk_ranges(10, 4);
        assert_eq!(r, vec![0..4, 4..8, 8..10]);
        assert!(chunk_ranges(0, 4).is_empty());
    }
}
