//! Worker pool sizing.

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "RVF_THREADS";

/// Thread cap from `RVF_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Sizes the global rayon pool from `RVF_THREADS`. Safe to call more than
/// once; only the first call has an effect.
pub fn init_pool() {
    if let Some(n) = thread_cap() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
