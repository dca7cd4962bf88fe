//! Double-double floating point: an unevaluated sum `hi + lo` of two `f64`
//! with `|lo| ≤ ulp(hi)/2`, giving about 106 bits of mantissa.
//!
//! Arithmetic, `sqrt` and comparisons are carried out in full precision.
//! Transcendental functions fall back to `f64` on the leading part; the
//! solvers never call them.

use crate::scalar::{Real, Scalar};
use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;
use std::num::FpCategory;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign,
};

#[derive(Clone, Copy, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Dd { hi, lo }
    }

    pub const fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return Dd::from_f64(hi);
        }
        let (h, l) = quick_two_sum(hi, lo);
        Dd { hi: h, lo: l }
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, o: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, o.hi);
        if !s1.is_finite() {
            return Dd::from_f64(s1);
        }
        let (t1, t2) = two_sum(self.lo, o.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        Dd::renorm(s1, s2 + t2)
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        Dd::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    #[inline]
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        if !q1.is_finite() || !o.hi.is_finite() || o.hi == 0.0 {
            return Dd::from_f64(q1);
        }
        let r = self - o * Dd::from_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from_f64(q2);
        let q3 = r.hi / o.hi;
        let (h, l) = quick_two_sum(q1, q2);
        Dd::new(h, l) + Dd::from_f64(q3)
    }
}

impl Rem for Dd {
    type Output = Dd;
    fn rem(self, o: Dd) -> Dd {
        self - (self / o).trunc() * o
    }
}

macro_rules! assign_ops {
    ($($tr:ident $f:ident $op:tt),*) => {
        $(impl $tr for Dd {
            #[inline]
            fn $f(&mut self, o: Dd) {
                *self = *self $op o;
            }
        })*
    };
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /, RemAssign rem_assign %);

impl PartialEq for Dd {
    fn eq(&self, o: &Dd) -> bool {
        self.hi == o.hi && self.lo == o.lo
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, o: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&o.lo),
            ord => Some(ord),
        }
    }
}

impl std::iter::Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::zero(), |a, b| a + b)
    }
}

impl fmt::Debug for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dd({:e}, {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.hi, f)
    }
}

impl Zero for Dd {
    fn zero() -> Dd {
        Dd::from_f64(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for Dd {
    fn one() -> Dd {
        Dd::from_f64(1.0)
    }
}

impl Num for Dd {
    type FromStrRadixErr = num_traits::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Dd, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Dd::from_f64)
    }
}

impl ToPrimitive for Dd {
    fn to_i64(&self) -> Option<i64> {
        self.hi.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.hi.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl FromPrimitive for Dd {
    fn from_i64(n: i64) -> Option<Dd> {
        let hi = n as f64;
        let lo = (n - hi as i64) as f64;
        Some(Dd::renorm(hi, lo))
    }
    fn from_u64(n: u64) -> Option<Dd> {
        let hi = n as f64;
        let lo = (n as i128 - hi as i128) as f64;
        Some(Dd::renorm(hi, lo))
    }
    fn from_f64(x: f64) -> Option<Dd> {
        Some(Dd::from_f64(x))
    }
}

impl NumCast for Dd {
    fn from<T: ToPrimitive>(n: T) -> Option<Dd> {
        n.to_f64().map(Dd::from_f64)
    }
}

macro_rules! via_f64 {
    ($($f:ident),*) => {
        $(fn $f(self) -> Dd {
            Dd::from_f64(self.to_f64_lossy().$f())
        })*
    };
}

impl Float for Dd {
    fn nan() -> Dd {
        Dd::from_f64(f64::NAN)
    }
    fn infinity() -> Dd {
        Dd::from_f64(f64::INFINITY)
    }
    fn neg_infinity() -> Dd {
        Dd::from_f64(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Dd {
        Dd::from_f64(-0.0)
    }
    fn min_value() -> Dd {
        Dd::from_f64(f64::MIN)
    }
    fn min_positive_value() -> Dd {
        Dd::from_f64(f64::MIN_POSITIVE)
    }
    fn max_value() -> Dd {
        Dd::from_f64(f64::MAX)
    }
    fn epsilon() -> Dd {
        Dd::from_f64(f64::EPSILON * f64::EPSILON / 2.0)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Dd {
        let h = self.hi.floor();
        if h == self.hi {
            Dd::renorm(h, self.lo.floor())
        } else {
            Dd::from_f64(h)
        }
    }
    fn ceil(self) -> Dd {
        -(-self).floor()
    }
    fn round(self) -> Dd {
        (self + Dd::from_f64(0.5)).floor()
    }
    fn trunc(self) -> Dd {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }
    fn fract(self) -> Dd {
        self - self.trunc()
    }
    fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Dd {
        Dd::from_f64(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Dd, b: Dd) -> Dd {
        self * a + b
    }
    fn recip(self) -> Dd {
        Dd::one() / self
    }
    fn powi(self, n: i32) -> Dd {
        self.ipow(n)
    }
    fn powf(self, n: Dd) -> Dd {
        Dd::from_f64(self.to_f64_lossy().powf(n.to_f64_lossy()))
    }
    fn sqrt(self) -> Dd {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Dd::from_f64(self.hi.sqrt());
        }
        // one Newton step on the f64 root
        let x = self.hi.sqrt();
        let (p, e) = two_prod(x, x);
        let r = (self - Dd::new(p, e)).hi;
        Dd::renorm(x, r / (2.0 * x))
    }
    via_f64!(
        exp, exp2, ln, log2, log10, cbrt, sin, cos, tan, asin, acos, atan, exp_m1, ln_1p, sinh,
        cosh, tanh, asinh, acosh, atanh
    );
    fn log(self, base: Dd) -> Dd {
        Dd::from_f64(self.to_f64_lossy().log(base.to_f64_lossy()))
    }
    fn max(self, o: Dd) -> Dd {
        if self >= o || o.is_nan() {
            self
        } else {
            o
        }
    }
    fn min(self, o: Dd) -> Dd {
        if self <= o || o.is_nan() {
            self
        } else {
            o
        }
    }
    fn abs_sub(self, o: Dd) -> Dd {
        if self > o {
            self - o
        } else {
            Dd::zero()
        }
    }
    fn hypot(self, o: Dd) -> Dd {
        (self * self + o * o).sqrt()
    }
    fn atan2(self, o: Dd) -> Dd {
        Dd::from_f64(self.to_f64_lossy().atan2(o.to_f64_lossy()))
    }
    fn sin_cos(self) -> (Dd, Dd) {
        (self.sin(), self.cos())
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }
}

impl Scalar for Dd {
    const EXACT: bool = false;

    fn lit(x: f64) -> Self {
        Dd::from_f64(x)
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        if let Some((n, d)) = s.split_once('/') {
            return Some(Self::parse_decimal(n)? / Self::parse_decimal(d)?);
        }
        s.trim().parse::<f64>().ok().map(Dd::from_f64)
    }

    fn is_finite_val(&self) -> bool {
        self.hi.is_finite()
    }
}

impl Real for Dd {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_third_is_accurate() {
        let t = Dd::one() / Dd::from_f64(3.0);
        let back = t * Dd::from_f64(3.0) - Dd::one();
        assert!(back.abs().hi < 1e-31);
        assert!(t.lo != 0.0);
    }

    #[test]
    fn sqrt_two_squares_back() {
        let r = Dd::from_f64(2.0).sqrt();
        assert!((r * r - Dd::from_f64(2.0)).abs().hi < 1e-31);
    }

    #[test]
    fn infinity_absorbs_finite_terms() {
        let inf = Dd::from_f64(f64::INFINITY);
        assert_eq!((inf + Dd::one()).hi, f64::INFINITY);
        assert_eq!(inf.sqrt().hi, f64::INFINITY);
        assert_eq!((inf * inf + Dd::one()).sqrt().hi, f64::INFINITY);
    }

    #[test]
    fn division_by_infinity_is_zero() {
        let q = Dd::one() / Dd::from_f64(f64::INFINITY);
        assert_eq!(q.to_f64_lossy(), 0.0);
    }

    #[test]
    fn recovers_cancelled_digits() {
        let big = Dd::from_f64(1e17);
        let x = (big + Dd::one()) - big;
        assert_eq!(x.to_f64_lossy(), 1.0);
    }

    proptest! {
        #[test]
        fn division_inverts_multiplication(a in -1e6f64..1e6, b in 1e-3f64..1e3) {
            let (a, b) = (Dd::from_f64(a), Dd::from_f64(b));
            let err = ((a * b) / b - a).abs().hi;
            prop_assert!(err <= 1e-29 * (1.0 + a.abs().hi));
        }

        #[test]
        fn ordering_matches_f64(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            prop_assert_eq!(Dd::from_f64(a).partial_cmp(&Dd::from_f64(b)), a.partial_cmp(&b));
        }
    }
}
