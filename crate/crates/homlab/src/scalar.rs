//! Floating-point scalar abstraction for the numerical core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, RemAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

/// Scalar type the numerical core is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + RemAssign
    + Sum<Self>
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Draw a standard normal variate from `rng`.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy conversion from `f64`; panics only for values outside the
    /// target's representable range, which never occurs for the constants
    /// used in this crate.
    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
}

impl Scalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
}

/// Compensated (Kahan) summation; used where exact cancellation matters,
/// e.g. torus means of difference fields.
#[derive(Clone, Copy, Debug)]
pub struct KahanSum<F> {
    sum: F,
    carry: F,
}

impl<F: Scalar> Default for KahanSum<F> {
    fn default() -> Self {
        Self {
            sum: F::zero(),
            carry: F::zero(),
        }
    }
}

impl<F: Scalar> KahanSum<F> {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: F) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> F {
        self.sum
    }
}

/// Kahan-compensated sum of a slice.
pub fn ksum<F: Scalar>(xs: &[F]) -> F {
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Kahan-compensated mean of a slice.
pub fn kmean<F: Scalar>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::zero();
    }
    ksum(xs) / F::cast(xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive_on_cancellation() {
        // alternating large/small terms that telescope to zero
        let xs: Vec<f64> = (0..100_000)
            .map(|i| if i % 2 == 0 { 1.0e8 + 1.0 } else { -1.0e8 - 1.0 })
            .collect();
        assert_eq!(ksum(&xs), 0.0);
    }

    #[test]
    fn standard_normal_is_deterministic() {
        use rand::SeedableRng;
        let mut a = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let mut b = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let xa: f64 = Scalar::standard_normal(&mut a);
        let xb: f64 = Scalar::standard_normal(&mut b);
        assert_eq!(xa.to_bits(), xb.to_bits());
    }
}
