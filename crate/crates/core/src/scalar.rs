//! Scalar abstraction for the numeric core.
//!
//! Everything downstream (geometry, basis construction, the Gibbs sampler)
//! is generic over [`Scalar`] so the same code runs in `f32` or `f64`.
//! The bound combines `nalgebra::RealField` (dense factorizations) with the
//! `num-traits` conversion traits, plus the two primitive draws the sampler
//! needs. Distribution sampling lives behind trait methods rather than
//! `rand_distr` bounds at every call site.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Floating-point scalar usable throughout the crate.
pub trait Scalar:
    RealField + FromPrimitive + ToPrimitive + Copy + Default + std::iter::Sum<Self>
{
    /// One draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from Gamma(shape, scale). Panics if the parameters are not
    /// strictly positive; callers validate first.
    fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self {
                Gamma::new(shape, scale)
                    .expect("gamma parameters must be positive")
                    .sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Shorthand for pulling `f64` constants into generic code.
#[inline]
pub fn cvt<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 converts to any Scalar")
}
