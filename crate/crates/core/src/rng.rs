use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// An independent, reproducible generator for the stream named by `tags`
/// under `seed`. Each tag is folded in with a splitmix64 round so that
/// neighbouring tags give unrelated streams.
pub fn derived_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix(seed);
    for &t in tags {
        state = splitmix(state ^ splitmix(t.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    ChaCha8Rng::seed_from_u64(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
