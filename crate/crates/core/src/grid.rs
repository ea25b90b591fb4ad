//! Uniform-grid functions on `[0,1]` with composite trapezoid quadrature.
//!
//! The grid always contains both endpoints, `x_i = i/(N-1)`, so `u(0)` and
//! `u(1)` are plain array reads.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::poly::Polynomial;

pub const MIN_POINTS: usize = 3;

/// Sampled real function `values[i] ≈ f(i/(N-1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < MIN_POINTS {
            return Err(Error::GridTooSmall {
                min: MIN_POINTS,
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    /// Samples a closure at the grid nodes.
    pub fn from_fn(n_points: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = spacing(n_points.max(2));
        Self::new((0..n_points).map(|i| f(i as f64 * h)).collect())
    }

    pub fn constant(n_points: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n_points])
    }

    pub fn zeros(n_points: usize) -> Result<Self> {
        Self::constant(n_points, 0.0)
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn h(&self) -> f64 {
        spacing(self.values.len())
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        nodes(self.n_points())
    }

    /// Value at `x = 0`.
    pub fn left(&self) -> f64 {
        self.values[0]
    }

    /// Value at `x = 1`.
    pub fn right(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        assert_eq!(self.n_points(), other.n_points(), "grid size mismatch");
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoid `∫₀¹ f g`.
    pub fn l2_inner(&self, other: &Self) -> f64 {
        assert_eq!(self.n_points(), other.n_points(), "grid size mismatch");
        let w = trapezoid_weights(self.n_points());
        w.iter()
            .zip(&self.values)
            .zip(&other.values)
            .map(|((w, a), b)| w * a * b)
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).sqrt()
    }
}

impl Add for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.axpy(-1.0, rhs)
    }
}

impl Mul<&GridFunction> for f64 {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        rhs.scale(self)
    }
}

pub fn spacing(n_points: usize) -> f64 {
    1.0 / (n_points - 1) as f64
}

pub fn nodes(n_points: usize) -> Vec<f64> {
    let h = spacing(n_points);
    let mut x: Vec<f64> = (0..n_points).map(|i| i as f64 * h).collect();
    x[n_points - 1] = 1.0;
    x
}

/// Composite trapezoid weights: `h/2` at the endpoints, `h` inside.
pub fn trapezoid_weights(n_points: usize) -> Vec<f64> {
    let h = spacing(n_points);
    let mut w = vec![h; n_points];
    w[0] = 0.5 * h;
    w[n_points - 1] = 0.5 * h;
    w
}

/// Composite trapezoid rule; exact on affine functions.
pub fn quadrature(f: &GridFunction) -> f64 {
    trapezoid_weights(f.n_points())
        .iter()
        .zip(f.values())
        .map(|(w, v)| w * v)
        .sum()
}

/// Second derivative: central differences inside, four-point one-sided
/// stencils at the endpoints. Second order on smooth data.
pub fn second_derivative(f: &GridFunction) -> Result<GridFunction> {
    let n = f.n_points();
    if n < 5 {
        return Err(Error::GridTooSmall { min: 5, got: n });
    }
    let u = f.values();
    let inv_h2 = 1.0 / (f.h() * f.h());
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        d2[i] = (u[i - 1] - 2.0 * u[i] + u[i + 1]) * inv_h2;
    }
    d2[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) * inv_h2;
    d2[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) * inv_h2;
    GridFunction::new(d2)
}

/// First derivative, second order everywhere (one-sided three-point stencils
/// at the endpoints).
pub fn first_derivative(f: &GridFunction) -> GridFunction {
    let n = f.n_points();
    let u = f.values();
    let inv_2h = 0.5 / f.h();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (u[i + 1] - u[i - 1]) * inv_2h;
    }
    d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) * inv_2h;
    d[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) * inv_2h;
    GridFunction { values: d }
}

pub fn poly_to_grid(p: &Polynomial, n_points: usize) -> Result<GridFunction> {
    if n_points < MIN_POINTS {
        return Err(Error::GridTooSmall {
            min: MIN_POINTS,
            got: n_points,
        });
    }
    GridFunction::new(nodes(n_points).into_iter().map(|x| p.eval_f64(x)).collect())
}

pub fn poly_integrate(p: &Polynomial) -> Polynomial {
    p.integrate()
}

pub fn poly_definite_integral(
    p: &Polynomial,
    a: &crate::poly::Rational,
    b: &crate::poly::Rational,
) -> crate::poly::Rational {
    p.definite_integral(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{int, rat};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn rejects_small_or_nonfinite_grids() {
        assert!(matches!(
            GridFunction::new(vec![0.0, 1.0]),
            Err(Error::GridTooSmall { .. })
        ));
        assert!(matches!(
            GridFunction::new(vec![0.0, f64::NAN, 1.0]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn quadrature_of_constants_and_affine() {
        for n in [3, 4, 17, 100] {
            assert_abs_diff_eq!(quadrature(&GridFunction::constant(n, 1.0).unwrap()), 1.0, epsilon = 1e-13);
        }
        let f = GridFunction::from_fn(101, |x| x).unwrap();
        assert_abs_diff_eq!(quadrature(&f), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn quadrature_of_square_converges() {
        let f = GridFunction::from_fn(1025, |x| x * x).unwrap();
        assert!((quadrature(&f) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn second_derivative_exact_on_quadratics() {
        let c = second_derivative(&GridFunction::constant(11, 3.0).unwrap()).unwrap();
        assert!(c.max_abs() < 1e-9);
        let f = GridFunction::from_fn(101, |x| x * x).unwrap();
        let d2 = second_derivative(&f).unwrap();
        for v in d2.values() {
            assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn second_derivative_is_second_order() {
        let err = |n: usize| {
            let f = GridFunction::from_fn(n, |x| (2.0 * PI * x).sin()).unwrap();
            let d2 = second_derivative(&f).unwrap();
            d2.values()
                .iter()
                .zip(f.nodes())
                .map(|(v, x)| (v + 4.0 * PI * PI * (2.0 * PI * x).sin()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(512) / err(1024);
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn second_derivative_needs_five_points() {
        let f = GridFunction::zeros(4).unwrap();
        assert!(second_derivative(&f).is_err());
    }

    #[test]
    fn poly_to_grid_examples() {
        let ones = poly_to_grid(&Polynomial::one(), 7).unwrap();
        assert!(ones.values().iter().all(|&v| v == 1.0));
        assert_eq!(poly_to_grid(&Polynomial::x(), 3).unwrap().values(), &[0.0, 0.5, 1.0]);
        let p = Polynomial::from_i64(&[-2, 6]);
        assert_eq!(
            poly_to_grid(&p, 5).unwrap().values(),
            &[-2.0, -0.5, 1.0, 2.5, 4.0]
        );
    }

    #[test]
    fn poly_integration_examples() {
        assert_eq!(poly_integrate(&Polynomial::one()), Polynomial::x());
        assert_eq!(
            poly_definite_integral(&Polynomial::x(), &int(0), &int(1)),
            rat(1, 2)
        );
    }

    #[test]
    fn quadrature_converges_to_exact_integral_at_second_order() {
        let p = Polynomial::from_i64(&[1, -3, 0, 5, -2]);
        let exact = crate::poly::to_f64(&p.integral01());
        let e1 = (quadrature(&poly_to_grid(&p, 65).unwrap()) - exact).abs();
        let e2 = (quadrature(&poly_to_grid(&p, 129).unwrap()) - exact).abs();
        assert!((e1 / e2 - 4.0).abs() < 0.2, "{}", e1 / e2);
    }

    #[test]
    fn second_derivative_is_linear() {
        let f = GridFunction::from_fn(33, |x| x.exp()).unwrap();
        let g = GridFunction::from_fn(33, |x| (3.0 * x).cos()).unwrap();
        let lhs = second_derivative(&f.scale(2.5).axpy(-1.5, &g)).unwrap();
        let rhs = second_derivative(&f)
            .unwrap()
            .scale(2.5)
            .axpy(-1.5, &second_derivative(&g).unwrap());
        let scale = rhs.max_abs();
        assert!((&lhs - &rhs).max_abs() <= 1e-12 * scale);
    }
}
