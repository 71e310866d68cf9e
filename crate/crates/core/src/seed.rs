/// Mixes a base seed with a sequence of stream tags (worker id, iteration, ...)
/// into an independent 64-bit seed using the SplitMix64 finalizer.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut h = mix(base ^ 0x6a09_e667_f3bc_c908);
    for &s in stream {
        h = mix(h ^ mix(s.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
