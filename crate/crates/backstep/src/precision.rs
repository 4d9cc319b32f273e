//! Scalar arithmetic shared by every kernel.
//!
//! Kernels are generic over [`Real`], implemented for `f64` and for the
//! double-double type [`Dd`]. Syntheses run in [`Dd`] because the
//! transformation matrices reach condition numbers near `e^45` at the
//! damping values used by null-control schedules.

use std::fmt::Debug;
use std::ops::Neg;

use num_complex::{Complex, Complex64};
use num_traits::NumAssign;
use twofloat::consts::{FRAC_PI_2, LN_2};

pub use crate::dd::Dd;

/// Complex scalar at working precision.
pub type Wide = Complex<Dd>;

/// Real scalar field used by the generic kernels.
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Send
    + Sync
    + NumAssign
    + Neg<Output = Self>
    + 'static
{
    /// Bound on the relative error of one arithmetic operation.
    const UNIT_ROUNDOFF: f64;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin_cos(self) -> (Self, Self);
    fn is_finite(self) -> bool;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Real for f64 {
    const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin_cos(self) -> (Self, Self) {
        f64::sin_cos(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Real for Dd {
    // Conservative: twofloat operations are not all correctly rounded.
    const UNIT_ROUNDOFF: f64 = 1.9721522630525295e-31; // 2^-102

    fn from_f64(x: f64) -> Self {
        Dd::from_f64(x)
    }
    fn to_f64(self) -> f64 {
        self.hi() + self.lo()
    }
    fn abs(self) -> Self {
        Dd::abs(self)
    }
    fn sqrt(self) -> Self {
        Dd::sqrt(self)
    }
    fn exp(self) -> Self {
        dd_exp(self)
    }
    fn ln(self) -> Self {
        dd_ln(self)
    }
    fn sin_cos(self) -> (Self, Self) {
        dd_sin_cos(self)
    }
    fn is_finite(self) -> bool {
        self.hi().is_finite() && self.lo().is_finite()
    }
}

// twofloat's own transcendental functions are only accurate to about
// 1e-16 (and far worse for large negative exponents), so the ones below
// are evaluated by argument reduction plus Taylor series in full precision.

fn scale_pow2(x: Dd, k: i32) -> Dd {
    // Two steps so that 2^k never overflows on its own.
    let a = k / 2;
    let b = k - a;
    x.mul_f64(2f64.powi(a)).mul_f64(2f64.powi(b))
}

fn dd_exp(x: Dd) -> Dd {
    let hi = x.hi();
    if hi.is_nan() {
        return Dd::from_f64(f64::NAN);
    }
    if hi > 709.78 {
        return Dd::from_f64(f64::INFINITY);
    }
    if hi < -745.2 {
        return Dd::from_f64(0.0);
    }
    let k = (hi / std::f64::consts::LN_2).round();
    let r = x - Dd::from(LN_2).mul_f64(k);
    let s = r.mul_f64(1.0 / 1024.0);
    // expm1 on |s| < 3.4e-4, then ten squarings of 1 + expm1.
    let mut term = s;
    let mut sum = s;
    for i in 2..=11 {
        term = (term * s).div_f64(i as f64);
        sum += term;
    }
    for _ in 0..10 {
        sum = sum * (sum + Dd::from_f64(2.0));
    }
    scale_pow2(sum + Dd::from_f64(1.0), k as i32)
}

fn dd_ln(x: Dd) -> Dd {
    let hi = x.hi();
    if hi.is_nan() || hi < 0.0 {
        return Dd::from_f64(f64::NAN);
    }
    if hi == 0.0 {
        return Dd::from_f64(f64::NEG_INFINITY);
    }
    if hi.is_infinite() {
        return Dd::from_f64(f64::INFINITY);
    }
    let mut y = Dd::from_f64(hi.ln());
    for _ in 0..2 {
        y = y + x * dd_exp(-y) - Dd::from_f64(1.0);
    }
    y
}

fn dd_sin_cos(x: Dd) -> (Dd, Dd) {
    let hi = x.hi();
    if !hi.is_finite() {
        let nan = Dd::from_f64(f64::NAN);
        return (nan, nan);
    }
    let q = (hi / std::f64::consts::FRAC_PI_2).round();
    let r = x - Dd::from(FRAC_PI_2).mul_f64(q);
    let r2 = r * r;
    let mut s_term = r;
    let mut s = r;
    let mut c_term = Dd::from_f64(1.0);
    let mut c = Dd::from_f64(1.0);
    let mut k = 1.0;
    while k < 40.0 {
        s_term = (-s_term * r2).div_f64((2.0 * k) * (2.0 * k + 1.0));
        c_term = (-c_term * r2).div_f64((2.0 * k - 1.0) * (2.0 * k));
        s += s_term;
        c += c_term;
        if s_term.hi().abs() < 1e-36 && c_term.hi().abs() < 1e-36 {
            break;
        }
        k += 1.0;
    }
    match (q.rem_euclid(4.0)) as u8 {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// Modulus of a complex number.
pub fn cabs<R: Real>(z: Complex<R>) -> R {
    (z.re * z.re + z.im * z.im).sqrt()
}

/// Complex exponential.
pub fn cexp<R: Real>(z: Complex<R>) -> Complex<R> {
    let m = z.re.exp();
    let (s, c) = z.im.sin_cos();
    Complex::new(m * c, m * s)
}

/// Widens an `f64` complex number without rounding.
pub fn lift<R: Real>(z: Complex64) -> Complex<R> {
    Complex::new(R::from_f64(z.re), R::from_f64(z.im))
}

/// Rounds a complex number to `f64` components.
pub fn lower<R: Real>(z: Complex<R>) -> Complex64 {
    Complex64::new(z.re.to_f64(), z.im.to_f64())
}

/// Real scalar as a complex number.
pub fn real<R: Real>(x: R) -> Complex<R> {
    Complex::new(x, R::zero())
}

/// Neumaier compensated accumulator for complex terms.
#[derive(Clone, Copy, Debug)]
pub struct CompensatedSum<R: Real> {
    sum: Complex<R>,
    carry: Complex<R>,
}

impl<R: Real> Default for CompensatedSum<R> {
    fn default() -> Self {
        Self {
            sum: Complex::new(R::zero(), R::zero()),
            carry: Complex::new(R::zero(), R::zero()),
        }
    }
}

fn neumaier_step<R: Real>(sum: &mut R, carry: &mut R, x: R) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *carry += (*sum - t) + x;
    } else {
        *carry += (x - t) + *sum;
    }
    *sum = t;
}

impl<R: Real> CompensatedSum<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, z: Complex<R>) {
        neumaier_step(&mut self.sum.re, &mut self.carry.re, z.re);
        neumaier_step(&mut self.sum.im, &mut self.carry.im, z.im);
    }

    pub fn total(&self) -> Complex<R> {
        self.sum + self.carry
    }
}
