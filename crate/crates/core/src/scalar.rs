//! Working-precision abstraction for the value recursion.
//!
//! The recursion is written once against [`Scalar`] and instantiated with
//! `f64` (53-bit significand) or, with the `mpfr` feature, with MPFR floats
//! at a fixed number of bits chosen at compile time via [`Mpf`].

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// Significand bits.
    const BITS: u32;

    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn abs(&self) -> Self;
    fn is_finite(&self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
    /// Unit roundoff 2^-BITS.
    fn epsilon() -> f64 {
        (-(Self::BITS as f64)).exp2()
    }
}

impl Scalar for f64 {
    const BITS: u32 = 53;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    #[inline]
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    #[inline]
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Debug)]
pub struct CompensatedSum<T: Scalar> {
    sum: T,
    carry: T,
}

impl<T: Scalar> Default for CompensatedSum<T> {
    fn default() -> Self {
        Self { sum: T::zero(), carry: T::zero() }
    }
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn add(&mut self, x: T) {
        let t = self.sum.clone() + x.clone();
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum.clone() - t.clone()) + x;
        } else {
            self.carry += (x - t.clone()) + self.sum.clone();
        }
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum.clone() + self.carry.clone()
    }
}

#[cfg(feature = "mpfr")]
pub use self::mp::Mpf;

#[cfg(feature = "mpfr")]
mod mp {
    use super::Scalar;
    use rug::Float;
    use std::cmp::Ordering;
    use std::fmt;
    use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

    /// MPFR float with `B` significand bits.
    #[derive(Clone, PartialEq)]
    pub struct Mpf<const B: u32>(pub Float);

    impl<const B: u32> fmt::Debug for Mpf<B> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write!(f, "Mpf<{}>({})", B, self.0.to_f64())
        }
    }

    impl<const B: u32> PartialOrd for Mpf<B> {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            self.0.partial_cmp(&other.0)
        }
    }

    macro_rules! binop {
        ($tr:ident, $m:ident, $atr:ident, $am:ident) => {
            impl<const B: u32> $tr for Mpf<B> {
                type Output = Self;
                #[inline]
                fn $m(self, rhs: Self) -> Self {
                    Mpf($tr::$m(self.0, &rhs.0))
                }
            }
            impl<const B: u32> $atr for Mpf<B> {
                #[inline]
                fn $am(&mut self, rhs: Self) {
                    $atr::$am(&mut self.0, &rhs.0);
                }
            }
        };
    }
    binop!(Add, add, AddAssign, add_assign);
    binop!(Sub, sub, SubAssign, sub_assign);
    binop!(Mul, mul, MulAssign, mul_assign);

    impl<const B: u32> Div for Mpf<B> {
        type Output = Self;
        #[inline]
        fn div(self, rhs: Self) -> Self {
            Mpf(self.0 / &rhs.0)
        }
    }

    impl<const B: u32> Neg for Mpf<B> {
        type Output = Self;
        #[inline]
        fn neg(self) -> Self {
            Mpf(-self.0)
        }
    }

    impl<const B: u32> Scalar for Mpf<B> {
        const BITS: u32 = B;

        fn from_f64(x: f64) -> Self {
            Mpf(Float::with_val(B, x))
        }
        fn to_f64(&self) -> f64 {
            self.0.to_f64()
        }
        fn exp(&self) -> Self {
            Mpf(self.0.clone().exp())
        }
        fn ln(&self) -> Self {
            Mpf(self.0.clone().ln())
        }
        fn abs(&self) -> Self {
            Mpf(self.0.clone().abs())
        }
        fn is_finite(&self) -> bool {
            self.0.is_finite()
        }
        fn from_usize(n: usize) -> Self {
            Mpf(Float::with_val(B, n))
        }
    }
}
