use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one user seed.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Predictor = 1,
    Execution = 2,
    Profiling = 3,
    Trace = 4,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Generator keyed by `(seed, stream, key)`. Per-job keys make draws
/// independent of processing order, policy, and every other job.
pub(crate) fn keyed_rng(seed: u64, stream: Stream, key: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ (stream as u64).rotate_left(56)) ^ key);
    ChaCha8Rng::seed_from_u64(mixed)
}
