//! Forward-mode dual numbers `a + a'ε` with `ε² = 0`.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Dual {
    pub const fn new(value: f64, deriv: f64) -> Self {
        Self { value, deriv }
    }

    pub const fn constant(value: f64) -> Self {
        Self { value, deriv: 0.0 }
    }

    pub const fn variable(value: f64) -> Self {
        Self { value, deriv: 1.0 }
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        Self::new(e, e * self.deriv)
    }

    pub fn ln(self) -> Self {
        Self::new(self.value.ln(), self.deriv / self.value)
    }

    pub fn sin(self) -> Self {
        Self::new(self.value.sin(), self.value.cos() * self.deriv)
    }

    pub fn cos(self) -> Self {
        Self::new(self.value.cos(), -self.value.sin() * self.deriv)
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        Self::new(t, (1.0 - t * t) * self.deriv)
    }

    pub fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        Self::new(s, self.deriv / (2.0 * s))
    }

    pub fn abs(self) -> Self {
        let sign = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        Self::new(self.value.abs(), sign * self.deriv)
    }

    /// `self^rhs`. A constant exponent uses `b·a^(b−1)·a'`, which stays
    /// valid for negative bases; otherwise the full `a^b(b' ln a + b a'/a)`.
    pub fn powd(self, rhs: Dual) -> Self {
        let value = self.value.powf(rhs.value);
        let deriv = if rhs.deriv == 0.0 {
            if self.deriv == 0.0 {
                0.0
            } else {
                rhs.value * self.value.powf(rhs.value - 1.0) * self.deriv
            }
        } else {
            value * (rhs.deriv * self.value.ln() + rhs.value * self.deriv / self.value)
        };
        Self::new(value, deriv)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.deriv + rhs.deriv)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.deriv - rhs.deriv)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value * rhs.value,
            self.deriv * rhs.value + self.value * rhs.deriv,
        )
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value / rhs.value,
            (self.deriv * rhs.value - self.value * rhs.deriv) / (rhs.value * rhs.value),
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.deriv)
    }
}

/// Number type the expression evaluator is generic over.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;
    fn is_finite(self) -> bool;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn pow(self, rhs: Self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn pow(self, rhs: Self) -> Self {
        self.powf(rhs)
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.value
    }
    fn is_finite(self) -> bool {
        self.value.is_finite() && self.deriv.is_finite()
    }
    fn exp(self) -> Self {
        Dual::exp(self)
    }
    fn ln(self) -> Self {
        Dual::ln(self)
    }
    fn sin(self) -> Self {
        Dual::sin(self)
    }
    fn cos(self) -> Self {
        Dual::cos(self)
    }
    fn tanh(self) -> Self {
        Dual::tanh(self)
    }
    fn sqrt(self) -> Self {
        Dual::sqrt(self)
    }
    fn abs(self) -> Self {
        Dual::abs(self)
    }
    fn pow(self, rhs: Self) -> Self {
        self.powd(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Dual::variable(3.0);
        let g = Dual::new(2.0, 5.0);
        let p = x * g;
        assert_eq!(p.value, 6.0);
        assert_eq!(p.deriv, 2.0 + 3.0 * 5.0);
    }

    #[test]
    fn exp_is_its_own_derivative() {
        for v in [-2.0, 0.0, 0.7, 3.1] {
            let e = Dual::variable(v).exp();
            assert_eq!(e.value, e.deriv);
        }
    }

    #[test]
    fn power_with_constant_exponent_on_negative_base() {
        let p = Dual::variable(-2.0).powd(Dual::constant(3.0));
        assert_eq!(p.value, -8.0);
        assert_eq!(p.deriv, 12.0);
    }
}
