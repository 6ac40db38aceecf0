//! Data-parallel execution helpers.
//!
//! Every parallel loop in this crate assigns each task a disjoint region of
//! the output and keeps any reduction inside a task in a fixed sequential
//! order. Results are therefore bit-identical to the sequential fallback and
//! independent of the worker count.
//!
//! With the `parallel` feature (default) the helpers dispatch to rayon; the
//! global [`force_sequential`] switch keeps the plain loops even then, which
//! the benchmark suite uses to compare both paths within one build. Without
//! the feature the crate compiles with no rayon dependency at all.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces the sequential code path at runtime even when the `parallel`
/// feature is compiled in.
#[cfg(feature = "parallel")]
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

#[cfg(feature = "parallel")]
pub fn sequential_forced() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

#[cfg(not(feature = "parallel"))]
pub fn force_sequential(_on: bool) {}

#[cfg(not(feature = "parallel"))]
pub fn sequential_forced() -> bool {
    true
}

/// Runs `f(chunk_index, chunk)` over consecutive chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    {
        if !sequential_forced() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, chunk)| f(i, chunk));
            return;
        }
    }
    for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Runs `f(i)` for every index in `0..n`.
pub fn for_each_index<F>(n: usize, f: F)
where
    F: Fn(usize) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !sequential_forced() {
            use rayon::prelude::*;
            (0..n).into_par_iter().for_each(f);
            return;
        }
    }
    for i in 0..n {
        f(i);
    }
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !sequential_forced() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Configures the global rayon pool. `threads == 0` keeps rayon's default.
/// Returns whether a pool was actually configured (false on repeat calls or
/// in a sequential build).
pub fn configure_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            return false;
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_iteration_covers_everything() {
        let mut data = vec![0u32; 10];
        for_each_chunk_mut(&mut data, 3, |i, chunk| {
            for v in chunk {
                *v = i as u32 + 1;
            }
        });
        assert_eq!(data, [1, 1, 1, 2, 2, 2, 3, 3, 3, 4]);
    }

    #[test]
    fn sequential_switch_round_trips() {
        force_sequential(true);
        let a = map_indexed(5, |i| i * i);
        force_sequential(false);
        let b = map_indexed(5, |i| i * i);
        assert_eq!(a, b);
    }
}
