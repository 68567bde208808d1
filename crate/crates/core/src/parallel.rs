//! Thread pool and random streams.
//!
//! Work is split by index and results are collected in index order, so the
//! output never depends on the number of threads. Every random stream is
//! keyed by `(seed, index)` for the same reason.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "ICQR_THREADS";

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Worker count: `ICQR_THREADS` when set to a positive integer, otherwise
/// the available parallelism.
pub fn threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads())
            .thread_name(|i| format!("icqr-{i}"))
            .build()
            .expect("failed to start worker pool")
    })
}

/// `(0..n).map(f)` evaluated on the pool, in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if n <= 1 {
        return (0..n).map(f).collect();
    }
    pool().install(|| (0..n).into_par_iter().map(f).collect())
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for child `index` of `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Independent ChaCha stream number `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
