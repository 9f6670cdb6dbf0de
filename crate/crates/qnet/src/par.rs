//! Data-parallel helpers. With the `parallel` feature the work is spread over
//! a rayon pool whose size honours the `QNET_THREADS` environment variable;
//! without it every helper runs sequentially in index order. Both paths
//! return results in input order, so outputs do not depend on the schedule.

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "QNET_THREADS";

/// Thread cap requested through `QNET_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

thread_local! {
    static FORCE_SEQUENTIAL: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Runs `f` with every helper called from this thread executing
/// sequentially, whatever the feature set. Used to compare both paths in
/// one binary.
pub fn with_sequential<R>(f: impl FnOnce() -> R) -> R {
    let previous = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(previous));
    out
}

#[cfg(feature = "parallel")]
fn sequential_forced() -> bool {
    FORCE_SEQUENTIAL.with(|c| c.get())
}

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    use std::sync::OnceLock;
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_cap() {
            b = b.num_threads(n);
        }
        b.build().expect("failed to build rayon thread pool")
    })
}

/// Number of workers the helpers will use.
pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        pool().current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if sequential_forced() {
            return items.iter().map(f).collect();
        }
        pool().install(|| items.par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if sequential_forced() {
            return (0..n).map(f).collect();
        }
        pool().install(|| (0..n).into_par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v: Vec<u64> = (0..1000).collect();
        let out = map(&v, |x| x * x);
        assert!(out.iter().enumerate().all(|(i, &y)| y == (i * i) as u64));
        let out = map_range(17, |i| i + 1);
        assert_eq!(out, (1..18).collect::<Vec<_>>());
        assert!(num_threads() >= 1);
    }

    #[test]
    fn sequential_override_gives_the_same_result() {
        let par = map_range(100, |i| i * 3);
        let seq = with_sequential(|| map_range(100, |i| i * 3));
        assert_eq!(par, seq);
    }
}
