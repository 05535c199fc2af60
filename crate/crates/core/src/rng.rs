//! Counter-based uniform variates keyed on `(seed, scale, position, stream)`.
//!
//! Every node draws from its own key, so trees can be generated in any order
//! or in parallel and remain bit-identical for a given seed.

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream identifiers, so that magnitudes and signs never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Magnitude = 0,
    Sign = 1,
}

/// Raw 64 random bits for one node.
#[inline]
pub fn node_bits(seed: u64, scale: u32, position: u64, stream: Stream) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ ((scale as u64) << 32 | stream as u64));
    splitmix64(h ^ position)
}

/// Uniform variate in `[0, 1)` with 53 random bits.
#[inline]
pub fn node_uniform(seed: u64, scale: u32, position: u64, stream: Stream) -> f64 {
    (node_bits(seed, scale, position, stream) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
