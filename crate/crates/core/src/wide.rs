//! Double-double scalar (about 32 significant digits) used as a
//! high-precision reference when checking gradients numerically.
//!
//! Arithmetic, `sqrt`, `exp`, `ln` and `tanh` are evaluated to full
//! double-double accuracy; the remaining transcendental functions, which
//! the models never call, fall back to `f64`.

use std::cmp::Ordering;
use std::fmt;
use std::num::FpCategory;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign,
};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};
use qd::Quad;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct DoubleDouble(pub Quad);

impl DoubleDouble {
    pub fn new(x: f64) -> Self {
        DoubleDouble(Quad::from(x))
    }

    pub fn hi(self) -> f64 {
        self.0 .0
    }

    pub fn lo(self) -> f64 {
        self.0 .1
    }

    fn via_f64(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.to_f64_lossy()))
    }

    fn to_f64_lossy(self) -> f64 {
        self.hi() + self.lo()
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        DoubleDouble(Quad::from(x))
    }
}

impl Default for DoubleDouble {
    fn default() -> Self {
        Self::zero()
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64_lossy(), f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble(-self.0)
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        DoubleDouble(self.0.add_accurate(rhs.0))
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        DoubleDouble(self.0.sub_accurate(rhs.0))
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        DoubleDouble(self.0 * rhs.0)
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        DoubleDouble(self.0 / rhs.0)
    }
}

impl Rem for DoubleDouble {
    type Output = Self;
    fn rem(self, rhs: Self) -> Self {
        self - (self / rhs).trunc() * rhs
    }
}

macro_rules! assign_ops {
    ($($tr:ident $f:ident $op:tt),*) => {$(
        impl $tr for DoubleDouble {
            fn $f(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    )*};
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /, RemAssign rem_assign %);

impl Zero for DoubleDouble {
    fn zero() -> Self {
        DoubleDouble(Quad::ZERO)
    }
    fn is_zero(&self) -> bool {
        self.hi() == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        DoubleDouble(Quad::ONE)
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = num_traits::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Self::new)
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        self.trunc().to_f64_lossy().to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.trunc().to_f64_lossy().to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.to_f64_lossy())
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n - hi as i64) as f64;
        Some(Self::new(hi) + Self::new(lo))
    }
    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        let lo = n.wrapping_sub(hi as u64) as i64 as f64;
        Some(Self::new(hi) + Self::new(lo))
    }
    fn from_f64(x: f64) -> Option<Self> {
        Some(Self::new(x))
    }
    fn from_f32(x: f32) -> Option<Self> {
        Some(Self::new(x as f64))
    }
}

impl NumCast for DoubleDouble {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(<Self as From<f64>>::from)
    }
}

impl Float for DoubleDouble {
    fn nan() -> Self {
        DoubleDouble(Quad::NAN)
    }
    fn infinity() -> Self {
        DoubleDouble(Quad::INFINITY)
    }
    fn neg_infinity() -> Self {
        DoubleDouble(Quad::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Self::new(-0.0)
    }
    fn min_value() -> Self {
        DoubleDouble(Quad::MIN)
    }
    fn min_positive_value() -> Self {
        DoubleDouble(Quad::MIN_POSITIVE)
    }
    fn max_value() -> Self {
        DoubleDouble(Quad::MAX)
    }
    fn epsilon() -> Self {
        DoubleDouble(Quad::EPSILON)
    }
    fn is_nan(self) -> bool {
        self.hi().is_nan() || self.lo().is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi().is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi().is_finite() && self.lo().is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi().is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi().classify()
    }
    fn floor(self) -> Self {
        let hi = self.hi().floor();
        if hi == self.hi() {
            Self::new(hi) + Self::new(self.lo().floor())
        } else {
            Self::new(hi)
        }
    }
    fn ceil(self) -> Self {
        -(-self).floor()
    }
    fn round(self) -> Self {
        let half = Self::new(0.5);
        if self.is_sign_negative() {
            -((-self) + half).floor()
        } else {
            (self + half).floor()
        }
    }
    fn trunc(self) -> Self {
        if self.is_sign_negative() {
            self.ceil()
        } else {
            self.floor()
        }
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        if self.is_sign_negative() {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Self::new(self.hi().signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi().is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi().is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base *= base;
            e >>= 1;
        }
        acc
    }
    fn powf(self, n: Self) -> Self {
        (self.ln() * n).exp()
    }
    fn sqrt(self) -> Self {
        DoubleDouble(self.0.sqrt())
    }
    fn exp(self) -> Self {
        DoubleDouble(self.0.exp())
    }
    fn exp2(self) -> Self {
        (self * DoubleDouble(Quad::LN_2)).exp()
    }
    fn ln(self) -> Self {
        DoubleDouble(self.0.ln())
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        DoubleDouble(self.0.log2())
    }
    fn log10(self) -> Self {
        DoubleDouble(self.0.log10())
    }
    fn max(self, other: Self) -> Self {
        match self.partial_cmp(&other) {
            Some(Ordering::Less) => other,
            _ if self.is_nan() => other,
            _ => self,
        }
    }
    fn min(self, other: Self) -> Self {
        match self.partial_cmp(&other) {
            Some(Ordering::Greater) => other,
            _ if self.is_nan() => other,
            _ => self,
        }
    }
    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            Self::zero()
        }
    }
    fn cbrt(self) -> Self {
        self.via_f64(f64::cbrt)
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    fn sin(self) -> Self {
        self.via_f64(f64::sin)
    }
    fn cos(self) -> Self {
        self.via_f64(f64::cos)
    }
    fn tan(self) -> Self {
        self.via_f64(f64::tan)
    }
    fn asin(self) -> Self {
        self.via_f64(f64::asin)
    }
    fn acos(self) -> Self {
        self.via_f64(f64::acos)
    }
    fn atan(self) -> Self {
        self.via_f64(f64::atan)
    }
    fn atan2(self, other: Self) -> Self {
        Self::new(self.to_f64_lossy().atan2(other.to_f64_lossy()))
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.exp() - Self::one()
    }
    fn ln_1p(self) -> Self {
        (self + Self::one()).ln()
    }
    fn sinh(self) -> Self {
        (self.exp() - (-self).exp()) / Self::new(2.0)
    }
    fn cosh(self) -> Self {
        (self.exp() + (-self).exp()) / Self::new(2.0)
    }
    fn tanh(self) -> Self {
        let e = (Self::new(-2.0) * self.abs()).exp();
        let t = (Self::one() - e) / (Self::one() + e);
        if self.is_sign_negative() {
            -t
        } else {
            t
        }
    }
    fn asinh(self) -> Self {
        self.via_f64(f64::asinh)
    }
    fn acosh(self) -> Self {
        self.via_f64(f64::acosh)
    }
    fn atanh(self) -> Self {
        self.via_f64(f64::atanh)
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi().integer_decode()
    }
}
