use rand_core::RngCore;

/// Uniform draw in `[0, 1)` with 53 bits of resolution.
pub(crate) fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
