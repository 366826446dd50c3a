//! Purpose-keyed seed derivation and counter-based generators.
//!
//! One run seed fans out into independent streams: `derive_seed` mixes the
//! seed with a purpose label and an index, and `stream_rng` keys a ChaCha
//! generator by (seed, stream) so draws never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Derives an independent seed for `purpose`/`index` from a run seed.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(purpose.as_bytes())) ^ splitmix64(index))
}

/// ChaCha8 generator keyed by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
