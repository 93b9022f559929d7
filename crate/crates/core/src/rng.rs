//! Counter-keyed random streams.
//!
//! Every consumer derives its generator from `(seed, key)` so results never
//! depend on iteration or thread scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for entity `key` under master `seed`.
pub fn keyed(seed: u64, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

/// Two-level key, used when an entity owns several independent draws
/// (e.g. a follower's edge proposals versus its tweets).
pub fn keyed2(seed: u64, domain: u64, key: u64) -> ChaCha8Rng {
    let mixed = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    keyed(mixed, key)
}
