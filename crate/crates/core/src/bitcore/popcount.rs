//! Popcount primitives.
//!
//! `u64::count_ones` lowers to the hardware instruction when the target
//! feature is enabled; the GEMM kernels re-enable it at runtime through a
//! `#[target_feature]` wrapper. [`popcount_portable`] is the SWAR fallback and
//! must agree bit-exactly with the hardware path.

/// Counts set bits with shifts and masks only.
#[inline(always)]
pub fn popcount_portable(x: u64) -> u32 {
    const M1: u64 = 0x5555_5555_5555_5555;
    const M2: u64 = 0x3333_3333_3333_3333;
    const M4: u64 = 0x0f0f_0f0f_0f0f_0f0f;
    const H01: u64 = 0x0101_0101_0101_0101;
    let mut x = x;
    x -= (x >> 1) & M1;
    x = (x & M2) + ((x >> 2) & M2);
    x = (x + (x >> 4)) & M4;
    (x.wrapping_mul(H01) >> 56) as u32
}

/// Counts set bits, using the hardware instruction when the build enables it.
#[inline(always)]
pub fn popcount_native(x: u64) -> u32 {
    x.count_ones()
}

/// Whether the running CPU has a popcount instruction.
pub fn hardware_popcount_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("popcnt")
    }
    #[cfg(target_arch = "aarch64")]
    {
        true
    }
    #[cfg(not(any(target_arch = "x86_64", target_arch = "aarch64")))]
    {
        false
    }
}

/// Which popcount implementation a kernel should use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PopcountStrategy {
    /// Hardware instruction when detected at runtime, else compiler default.
    #[default]
    Auto,
    /// Always the SWAR fallback.
    Portable,
}

pub(crate) trait Popc {
    fn popc(x: u64) -> u32;
}

pub(crate) struct Native;
pub(crate) struct Portable;

impl Popc for Native {
    #[inline(always)]
    fn popc(x: u64) -> u32 {
        popcount_native(x)
    }
}

impl Popc for Portable {
    #[inline(always)]
    fn popc(x: u64) -> u32 {
        popcount_portable(x)
    }
}

/// popc(a XOR b) summed over paired words.
#[inline]
pub fn xor_popcount(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn portable_matches_native() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for x in [0u64, 1, u64::MAX, 1 << 63, 0x8000_0000_0000_0001] {
            assert_eq!(popcount_portable(x), popcount_native(x));
        }
        for _ in 0..100_000 {
            let x: u64 = rng.random();
            assert_eq!(popcount_portable(x), popcount_native(x));
        }
    }

    #[test]
    fn single_bits() {
        for i in 0..64 {
            assert_eq!(popcount_portable(1u64 << i), 1);
        }
    }
}
