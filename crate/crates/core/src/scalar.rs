//! Scalar abstractions.
//!
//! [`Scalar`] is the field used by the closed-form recipes, condition checks and
//! certificates. It is implemented for `f32`, `f64` and exact big rationals, so
//! the tight Lyapunov conditions can be verified without rounding when needed.
//! [`Real`] adds the transcendental operations needed by the solvers and
//! simulators and is only implemented for the floating point types.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive, Zero};
use std::fmt::{Debug, Display};
use std::ops::Neg;

pub trait Scalar:
    Num
    + Neg<Output = Self>
    + Clone
    + PartialOrd
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// True when arithmetic is exact.
    const EXACT: bool;

    /// Converts an `f64` literal. For rationals the conversion is exact in binary.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn int(n: i64) -> Self {
        Self::from_i64(n).expect("integer literal")
    }

    /// The exact ratio `n / d`.
    fn ratio(n: i64, d: i64) -> Self {
        Self::int(n) / Self::int(d)
    }

    /// Parses a decimal string such as `1.05` or `21/20`.
    fn parse_decimal(s: &str) -> Option<Self>;

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn abs_val(&self) -> Self {
        if *self < Self::zero() {
            -self.clone()
        } else {
            self.clone()
        }
    }

    fn max_of(&self, other: &Self) -> Self {
        if *self >= *other {
            self.clone()
        } else {
            other.clone()
        }
    }

    fn min_of(&self, other: &Self) -> Self {
        if *self <= *other {
            self.clone()
        } else {
            other.clone()
        }
    }

    /// Integer power, negative exponents allowed.
    fn ipow(&self, n: i32) -> Self {
        let mut base = if n < 0 {
            Self::one() / self.clone()
        } else {
            self.clone()
        };
        let mut e = n.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            e >>= 1;
            if e > 0 {
                base = base.clone() * base;
            }
        }
        acc
    }

    fn is_finite_val(&self) -> bool;
}

/// Floating point scalar with transcendental functions.
pub trait Real: Scalar + Float + Copy + std::iter::Sum {
    fn eps() -> Self {
        <Self as Float>::epsilon()
    }
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const EXACT: bool = false;

            fn parse_decimal(s: &str) -> Option<Self> {
                if let Some((n, d)) = s.split_once('/') {
                    let n: $t = n.trim().parse().ok()?;
                    let d: $t = d.trim().parse().ok()?;
                    return Some(n / d);
                }
                s.trim().parse().ok()
            }

            fn is_finite_val(&self) -> bool {
                self.is_finite()
            }
        }

        impl Real for $t {}
    };
}

float_scalar!(f32);
float_scalar!(f64);

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn int(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = Self::parse_decimal(n)?;
            let d = Self::parse_decimal(d)?;
            if d.is_zero() {
                return None;
            }
            return Some(n / d);
        }
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (mantissa, exp) = match body.split_once(['e', 'E']) {
            Some((m, e)) => (m, e.parse::<i32>().ok()?),
            None => (body, 0),
        };
        let (ip, fp) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        if ip.is_empty() && fp.is_empty() {
            return None;
        }
        if !ip.chars().chain(fp.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let digits: BigInt = format!("{}{}", if ip.is_empty() { "0" } else { ip }, fp)
            .parse()
            .ok()?;
        let ten = BigRational::from_integer(BigInt::from(10));
        let scale = ten.ipow(exp - fp.len() as i32);
        let v = BigRational::from_integer(digits) * scale;
        Some(if neg { -v } else { v })
    }

    fn is_finite_val(&self) -> bool {
        true
    }
}

/// Exact rational alias.
pub type Exact = BigRational;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing_is_exact() {
        let x = Exact::parse_decimal("1.05").unwrap();
        assert_eq!(x, Exact::ratio(21, 20));
        assert_eq!(
            Exact::parse_decimal("-2.5e-1").unwrap(),
            Exact::ratio(-1, 4)
        );
        assert_eq!(Exact::parse_decimal("3/4").unwrap(), Exact::ratio(3, 4));
        assert!(Exact::parse_decimal("abc").is_none());
        assert_eq!(f64::parse_decimal("1/4").unwrap(), 0.25);
    }

    #[test]
    fn ipow_handles_signs() {
        assert_eq!(2.0f64.ipow(10), 1024.0);
        assert_eq!(2.0f64.ipow(-2), 0.25);
        assert_eq!(Exact::ratio(1, 20).ipow(-2), Exact::int(400));
        assert_eq!(3.0f64.ipow(0), 1.0);
    }
}
