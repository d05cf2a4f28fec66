//! Data-parallel helpers with a sequential fallback.
//!
//! Reductions are split into fixed-size chunks and the chunk partials are
//! added in index order, so floating-point results do not depend on the
//! thread count or on whether the `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by [`chunked_sum`].
pub const SUM_CHUNK: usize = 1024;

/// `(0..n).map(f).collect()`, in parallel when enabled.
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

/// Maps every `width`-wide row of `data` and writes `out_width` outputs per
/// row into a flat buffer.
pub fn map_rows_into<F>(data: &[f64], width: usize, out_width: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync + Send,
{
    let n = if width == 0 { 0 } else { data.len() / width };
    let mut out = vec![0.0; n * out_width];
    if out_width == 0 {
        return out;
    }
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(out_width)
            .zip(data.par_chunks(width))
            .for_each(|(o, row)| f(row, o));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(out_width)
            .zip(data.chunks(width))
            .for_each(|(o, row)| f(row, o));
    }
    out
}

/// Deterministic `sum_{i<n} f(i)`.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(SUM_CHUNK);
    let partial = |c: usize| {
        let lo = c * SUM_CHUNK;
        let hi = (lo + SUM_CHUNK).min(n);
        (lo..hi).map(&f).sum::<f64>()
    };
    map_indexed(chunks, partial).into_iter().sum()
}

/// Sizes the global worker pool. Without the `parallel` feature everything
/// runs on the calling thread and this only checks `threads > 0`.
pub fn set_threads(threads: usize) -> crate::Result<()> {
    if threads == 0 {
        return Err(crate::Error::Config("--jobs must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| crate::Error::Config(format!("worker pool: {e}")))?;
    }
    Ok(())
}

/// Runs independent jobs, in parallel when enabled, keeping input order.
pub fn run_jobs<T, R, F>(jobs: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        jobs.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.into_iter().map(f).collect()
    }
}
