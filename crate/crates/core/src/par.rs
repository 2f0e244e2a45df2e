//! Thin dispatch layer between rayon and sequential execution.
//!
//! Every helper here partitions work so that each output slot is written by
//! exactly one closure invocation and no floating-point reduction order
//! changes between the two paths: results are bit-identical with the
//! `parallel` feature on or off.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to each row of a flat row-major buffer.
pub fn for_each_row<F>(data: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(row_len > 0 && data.len() % row_len == 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// Collect `f(i)` for `i in 0..n`, preserving index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Run independent jobs, collecting results in input order.
pub fn run_jobs<T, A, F>(args: Vec<A>, f: F) -> Vec<T>
where
    T: Send,
    A: Send,
    F: Fn(A) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        args.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        args.into_iter().map(f).collect()
    }
}
