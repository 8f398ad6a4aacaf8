//! Per-purpose seed derivation.

/// SplitMix64 finalizer over `(base, stream)`.
pub(crate) fn derive(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) const CHANNEL: u64 = 1;
pub(crate) const NOISE: u64 = 2;
pub(crate) const PILOTS: u64 = 3;
pub(crate) const DATA: u64 = 4;
pub(crate) const SAMPLE: u64 = 5;
