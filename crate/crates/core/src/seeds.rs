//! Deterministic derivation of independent seeds.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a sub-task identified by `parts` (step, purpose, ...).
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc.rotate_left(17) ^ mix(p)))
}

/// Purpose tags.
pub mod purpose {
    pub const JOINT_SAMPLES: u64 = 1;
    pub const SURROGATE_FIT: u64 = 2;
    pub const OBSERVATIONS: u64 = 3;
    pub const INTERMEDIATE: u64 = 4;
    pub const RECOVERY: u64 = 5;
    pub const COMPRESSION: u64 = 6;
    pub const DIAGNOSTICS: u64 = 7;
    pub const POSTERIOR: u64 = 8;
    pub const MCMC: u64 = 9;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_and_stable() {
        let a = derive(42, &[1, 2]);
        assert_eq!(a, derive(42, &[1, 2]));
        assert_ne!(a, derive(42, &[2, 1]));
        assert_ne!(a, derive(43, &[1, 2]));
        assert_ne!(derive(0, &[]), derive(0, &[0]));
    }
}
