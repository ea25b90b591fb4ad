//! Exact-coefficient polynomials on `(0,1)`.
//!
//! Coefficients are arbitrary-precision rationals in the monomial basis, so
//! every identity of the operator calculus can be checked with zero rounding.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

/// Exact rational scalar used by the polynomial path.
pub type Rational = BigRational;

/// Builds the rational `num / den`.
pub fn rat(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Builds the integer rational `k`.
pub fn int(k: i64) -> Rational {
    BigRational::from_integer(BigInt::from(k))
}

/// Converts an exact rational to the nearest `f64`.
pub fn to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Converts a finite `f64` to the rational with the same value.
pub fn from_f64(x: f64) -> Rational {
    BigRational::from_float(x).expect("finite float")
}

/// Polynomial `Σ c_k x^k` with exact rational coefficients.
///
/// Trailing zero coefficients are stripped, so the zero polynomial has no
/// coefficients and structural equality is value equality.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Polynomial {
    coeffs: Vec<Rational>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<Rational>) -> Self {
        while coeffs.last().is_some_and(Zero::is_zero) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn from_i64(coeffs: &[i64]) -> Self {
        Self::new(coeffs.iter().map(|&c| int(c)).collect())
    }

    /// Exact conversion of floating coefficients.
    pub fn from_f64(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().map(|&c| from_f64(c)).collect())
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(c: Rational) -> Self {
        Self::new(vec![c])
    }

    pub fn one() -> Self {
        Self::constant(Rational::one())
    }

    /// The monomial `x`.
    pub fn x() -> Self {
        Self::from_i64(&[0, 1])
    }

    /// `(1 - x)^n`, the moment weight.
    pub fn one_minus_x_pow(n: u32) -> Self {
        let base = Self::from_i64(&[1, -1]);
        (0..n).fold(Self::one(), |acc, _| &acc * &base)
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, with the zero polynomial reported as `None`.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn scale(&self, c: &Rational) -> Self {
        Self::new(self.coeffs.iter().map(|a| a * c).collect())
    }

    /// Exact evaluation by Horner's rule.
    pub fn eval(&self, x: &Rational) -> Rational {
        self.coeffs
            .iter()
            .rev()
            .fold(Rational::zero(), |acc, c| acc * x + c)
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + to_f64(c))
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * int(k as i64))
                .collect(),
        )
    }

    /// Antiderivative with zero constant term.
    pub fn integrate(&self) -> Self {
        let mut out = Vec::with_capacity(self.coeffs.len() + 1);
        out.push(Rational::zero());
        out.extend(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c / int(k as i64 + 1)),
        );
        Self::new(out)
    }

    pub fn definite_integral(&self, a: &Rational, b: &Rational) -> Rational {
        let anti = self.integrate();
        anti.eval(b) - anti.eval(a)
    }

    /// `∫₀¹ p`.
    pub fn integral01(&self) -> Rational {
        // ∫₀¹ x^k = 1/(k+1)
        self.coeffs
            .iter()
            .enumerate()
            .fold(Rational::zero(), |acc, (k, c)| acc + c / int(k as i64 + 1))
    }

    /// Random polynomial of exact degree `≤ degree` with coefficients `a/b`,
    /// `a ∈ [-9, 9]`, `b ∈ [1, 9]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, degree: usize) -> Self {
        Self::new(
            (0..=degree)
                .map(|_| rat(rng.gen_range(-9..=9), rng.gen_range(1..=9)))
                .collect(),
        )
    }

    /// Largest coefficient magnitude, as a float.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| to_f64(&c.abs()))
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(k, c)| match k {
                0 => format!("{c}"),
                1 => format!("({c})x"),
                _ => format!("({c})x^{k}"),
            })
            .collect();
        write!(f, "{}", terms.join(" + "))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let len = self.coeffs.len().max(rhs.coeffs.len());
        let zero = Rational::zero();
        Polynomial::new(
            (0..len)
                .map(|k| {
                    self.coeffs.get(k).unwrap_or(&zero) + rhs.coeffs.get(k).unwrap_or(&zero)
                })
                .collect(),
        )
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| -c).collect())
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        if self.is_zero() || rhs.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![Rational::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $m(self, rhs: Polynomial) -> Polynomial {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_zeros_are_normalized() {
        let p = Polynomial::new(vec![int(1), int(0), int(0)]);
        assert_eq!(p.coeffs().len(), 1);
        assert_eq!(p, Polynomial::one());
        assert!(Polynomial::from_i64(&[0, 0]).is_zero());
    }

    #[test]
    fn antiderivative_of_one_is_x() {
        assert_eq!(Polynomial::one().integrate(), Polynomial::x());
    }

    #[test]
    fn definite_integrals() {
        assert_eq!(Polynomial::x().definite_integral(&int(0), &int(1)), rat(1, 2));
        let sq = Polynomial::one_minus_x_pow(2);
        assert_eq!(sq, Polynomial::from_i64(&[1, -2, 1]));
        assert_eq!(sq.definite_integral(&int(0), &int(1)), rat(1, 3));
        assert_eq!(sq.integral01(), rat(1, 3));
    }

    #[test]
    fn product_and_derivative() {
        let p = Polynomial::from_i64(&[1, 1]);
        let q = &p * &p;
        assert_eq!(q, Polynomial::from_i64(&[1, 2, 1]));
        assert_eq!(q.derivative(), Polynomial::from_i64(&[2, 2]));
        assert_eq!(q.eval(&rat(1, 2)), rat(9, 4));
    }

    #[test]
    fn float_round_trip_is_exact() {
        let p = Polynomial::from_f64(&[0.3, -1.25]);
        assert_eq!(p.eval_f64(0.0), 0.3);
        assert_eq!(to_f64(&p.coeffs()[1]), -1.25);
    }
}
