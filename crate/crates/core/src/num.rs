//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Matrix algebra comes from `nalgebra`'s `RealField`; conversions to and from
//! primitive floats go through `num-traits`. Both `f32` and `f64` qualify.

use std::fmt::{Debug, Display};

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    nalgebra::RealField + Copy + FromPrimitive + ToPrimitive + Default + Display + Debug + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; used for literals and configuration values.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn neg_infinity() -> Self {
        Self::lit(f64::NEG_INFINITY)
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `ln(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add<T: Real>(a: T, b: T) -> T {
    let ninf = T::neg_infinity();
    if a == ninf {
        return b;
    }
    if b == ninf {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp over an iterator. Empty input gives `-inf`.
pub fn log_sum_exp<T: Real, I: IntoIterator<Item = T>>(values: I) -> T {
    let vals: Vec<T> = values.into_iter().collect();
    let ninf = T::neg_infinity();
    let max = vals.iter().copied().fold(ninf, |m, v| if v > m { v } else { m });
    if max == ninf || !max.is_finite_value() {
        return max;
    }
    let sum = vals.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + sum.ln()
}

/// Natural log mapping `0` to `-inf`.
#[inline]
pub fn ln_or_neg_inf<T: Real>(p: T) -> T {
    if p <= T::zero() {
        T::neg_infinity()
    } else {
        p.ln()
    }
}

/// Converts log-weights into normalized linear probabilities, returning them
/// with the log of the normalizing constant (`-inf` when every weight is zero).
pub fn normalize_log_weights<T: Real>(log_w: &[T]) -> (Vec<T>, T) {
    let total = log_sum_exp(log_w.iter().copied());
    if !total.is_finite_value() {
        return (vec![T::zero(); log_w.len()], total);
    }
    (log_w.iter().map(|&l| (l - total).exp()).collect(), total)
}
