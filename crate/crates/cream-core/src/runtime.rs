//! Execution-mode control: a process-wide worker pool with a sequential
//! reference mode.
//!
//! Kernels call [`par_jobs`] / [`par_chunks_mut`] instead of touching rayon
//! directly. Work is partitioned so each output region is written by exactly
//! one job and every floating-point accumulation happens in a fixed order,
//! which keeps results bit-identical whether jobs run on one thread or many.
//! The `parallel` cargo feature gates the rayon dependency entirely; without
//! it everything runs on the calling thread.

use std::sync::RwLock;

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
static POOL: RwLock<Option<Arc<rayon::ThreadPool>>> = RwLock::new(None);

static THREADS: RwLock<usize> = RwLock::new(0);

thread_local! {
    static FORCE_SEQUENTIAL: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Configure the worker count. `1` selects the sequential reference mode.
/// `0` resets to the machine default.
pub fn set_threads(n: usize) {
    let n = if n == 0 { default_threads() } else { n };
    *THREADS.write().unwrap() = n;
    #[cfg(feature = "parallel")]
    {
        let mut pool = POOL.write().unwrap();
        *pool = if n > 1 {
            Some(Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .expect("failed to build worker pool"),
            ))
        } else {
            None
        };
    }
}

/// Currently configured worker count.
pub fn threads() -> usize {
    let n = *THREADS.read().unwrap();
    if n == 0 {
        default_threads()
    } else {
        n
    }
}

fn default_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Scoped guard forcing the sequential path on the current thread, used by
/// the FPS benchmark so timings stay comparable across machines and modes.
pub struct SequentialGuard {
    prev: bool,
}

pub fn sequential_scope() -> SequentialGuard {
    let prev = FORCE_SEQUENTIAL.with(|f| f.replace(true));
    SequentialGuard { prev }
}

impl Drop for SequentialGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        FORCE_SEQUENTIAL.with(|f| f.set(prev));
    }
}

fn run_sequential() -> bool {
    FORCE_SEQUENTIAL.with(|f| f.get()) || threads() <= 1
}

/// Run `job(i)` for `i in 0..jobs`, possibly in parallel. Each job must own
/// a disjoint slice of any shared output.
pub fn par_jobs<F>(jobs: usize, job: F)
where
    F: Fn(usize) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if !run_sequential() && jobs > 1 {
            let pool = POOL.read().unwrap().clone();
            if let Some(pool) = pool {
                pool.install(|| {
                    use rayon::prelude::*;
                    (0..jobs).into_par_iter().for_each(|i| job(i));
                });
                return;
            }
        }
    }
    for i in 0..jobs {
        job(i);
    }
}

/// Run `f(i)` for `i in 0..jobs` and collect results in index order.
pub fn par_map<R, F>(jobs: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if !run_sequential() && jobs > 1 {
            let pool = POOL.read().unwrap().clone();
            if let Some(pool) = pool {
                return pool.install(|| {
                    use rayon::prelude::*;
                    (0..jobs).into_par_iter().map(|i| f(i)).collect()
                });
            }
        }
    }
    (0..jobs).map(f).collect()
}

/// Split `data` into chunks of `chunk_len` and run `f(chunk_index, chunk)`,
/// possibly in parallel. The final chunk may be short.
pub fn par_chunks_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    {
        if !run_sequential() && data.len() > chunk_len {
            let pool = POOL.read().unwrap().clone();
            if let Some(pool) = pool {
                pool.install(|| {
                    use rayon::prelude::*;
                    data.par_chunks_mut(chunk_len)
                        .enumerate()
                        .for_each(|(i, c)| f(i, c));
                });
                return;
            }
        }
    }
    for (i, c) in data.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}
