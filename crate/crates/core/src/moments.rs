//! Moments `μ_n(f) = ∫₀¹ (1-x)^n f`, the primitive `𝓘f = ∫₀ˣ f`, the
//! operators `P_n f = 𝓘f - μ_n(f)` and `J_n φ = ∫ₓ¹ φ - μ₀(φ)(1-x)^n`,
//! projections onto `span{1, (1-x)^n}` and moment prescription.
//!
//! Every operation exists on two carriers: [`Polynomial`] (exact rational
//! arithmetic) and [`GridFunction`] (trapezoid quadrature). The exact path is
//! the oracle for the grid path.

use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::grid::{self, GridFunction};
use crate::poly::{self, int, Polynomial, Rational};

/// Operator calculus shared by the exact and the sampled carriers.
pub trait Calculus: Sized + Clone {
    type Scalar: Clone
        + Zero
        + Add<Output = Self::Scalar>
        + Sub<Output = Self::Scalar>
        + Mul<Output = Self::Scalar>
        + Neg<Output = Self::Scalar>;

    /// `μ_n(f) = ∫₀¹ (1-x)^n f(x) dx`.
    fn moment(&self, n: u32) -> Self::Scalar;

    /// `𝓘f(x) = ∫₀ˣ f`; vanishes at `x = 0`.
    fn primitive(&self) -> Self;

    /// `P_n f = 𝓘f - μ_n(f)`.
    fn apply_pn(&self, n: u32) -> Self;

    /// `J_n φ(x) = ∫ₓ¹ φ - μ₀(φ)(1-x)^n`.
    fn apply_jn(&self, n: u32) -> Self;

    /// `∫₀¹ f g`.
    fn l2_inner(&self, other: &Self) -> Self::Scalar;

    /// `f(0)`.
    fn value_at_zero(&self) -> Self::Scalar;

    /// `f(1)`.
    fn value_at_one(&self) -> Self::Scalar;

    /// Integer embedded in the scalar type.
    fn from_int(v: i64) -> Self::Scalar;
}

impl Calculus for Polynomial {
    type Scalar = Rational;

    fn moment(&self, n: u32) -> Rational {
        (&Polynomial::one_minus_x_pow(n) * self).integral01()
    }

    fn primitive(&self) -> Self {
        self.integrate()
    }

    fn apply_pn(&self, n: u32) -> Self {
        &self.integrate() - &Polynomial::constant(self.moment(n))
    }

    fn apply_jn(&self, n: u32) -> Self {
        // ∫ₓ¹ φ = Φ(1) - Φ(x) with Φ the zero-based antiderivative.
        let anti = self.integrate();
        let tail = &Polynomial::constant(anti.eval(&Rational::one())) - &anti;
        &tail - &Polynomial::one_minus_x_pow(n).scale(&self.moment(0))
    }

    fn l2_inner(&self, other: &Self) -> Rational {
        (self * other).integral01()
    }

    fn value_at_zero(&self) -> Rational {
        self.eval(&Rational::zero())
    }

    fn value_at_one(&self) -> Rational {
        self.eval(&Rational::one())
    }

    fn from_int(v: i64) -> Rational {
        int(v)
    }
}

impl Calculus for GridFunction {
    type Scalar = f64;

    fn moment(&self, n: u32) -> f64 {
        moment_row(self.n_points(), n)
            .iter()
            .zip(self.values())
            .map(|(m, v)| m * v)
            .sum()
    }

    fn primitive(&self) -> Self {
        let u = self.values();
        let half_h = 0.5 * self.h();
        let mut out = Vec::with_capacity(u.len());
        let mut acc = 0.0;
        out.push(acc);
        for pair in u.windows(2) {
            acc += half_h * (pair[0] + pair[1]);
            out.push(acc);
        }
        GridFunction::new(out).expect("finite cumulative sum")
    }

    fn apply_pn(&self, n: u32) -> Self {
        let mu = self.moment(n);
        self.primitive().map(|v| v - mu)
    }

    fn apply_jn(&self, n: u32) -> Self {
        let u = self.values();
        let len = u.len();
        let half_h = 0.5 * self.h();
        let mut tail = vec![0.0; len];
        for i in (0..len - 1).rev() {
            tail[i] = tail[i + 1] + half_h * (u[i] + u[i + 1]);
        }
        let mass = tail[0];
        let x = grid::nodes(len);
        GridFunction::new(
            tail.iter()
                .zip(x)
                .map(|(t, x)| t - mass * (1.0 - x).powi(n as i32))
                .collect(),
        )
        .expect("finite")
    }

    fn l2_inner(&self, other: &Self) -> f64 {
        GridFunction::l2_inner(self, other)
    }

    fn value_at_zero(&self) -> f64 {
        self.left()
    }

    fn value_at_one(&self) -> f64 {
        self.right()
    }

    fn from_int(v: i64) -> f64 {
        v as f64
    }
}

/// Quadrature row of `μ_n`: `w_i (1 - x_i)^n` with trapezoid weights `w_i`.
pub fn moment_row(n_points: usize, n: u32) -> Vec<f64> {
    grid::trapezoid_weights(n_points)
        .into_iter()
        .zip(grid::nodes(n_points))
        .map(|(w, x)| w * (1.0 - x).powi(n as i32))
        .collect()
}

/// Moments of a fixed index list.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    indices: Vec<u32>,
    entries: Vec<f64>,
}

impl MomentVector {
    pub fn new(indices: Vec<u32>, entries: Vec<f64>) -> Result<Self> {
        if indices.len() != entries.len() {
            return Err(Error::SizeMismatch {
                left: indices.len(),
                right: entries.len(),
            });
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter {
                field: "indices",
                reason: "moment indices must be pairwise distinct".into(),
            });
        }
        if let Some(index) = entries.iter().position(|e| !e.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { indices, entries })
    }

    /// Targets for the consecutive indices `0..=m`.
    pub fn leading(entries: Vec<f64>) -> Result<Self> {
        Self::new((0..entries.len() as u32).collect(), entries)
    }

    pub fn of(f: &GridFunction, indices: &[u32]) -> Self {
        let entries = indices.iter().map(|&k| f.moment(k)).collect();
        Self {
            indices: indices.to_vec(),
            entries,
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Norm used to pick the best approximation in `span{1, (1-x)^n}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionMode {
    L2,
    Lq(f64),
}

/// Projection onto `span{1, (1-x)^n}` and the remainder `f - projection`.
#[derive(Debug, Clone)]
pub struct SpanProjection<F> {
    pub projection: F,
    pub remainder: F,
    /// Coefficients `(a, b)` of `a + b (1-x)^n`.
    pub coefficients: (f64, f64),
}

/// Exact `L²`-orthogonal projection of a polynomial onto `span{1,(1-x)^n}`.
pub fn project_span_poly(f: &Polynomial, n: u32) -> SpanProjection<Polynomial> {
    assert!(n >= 1, "n must be positive");
    let basis = [Polynomial::one(), Polynomial::one_minus_x_pow(n)];
    let gram: Vec<Vec<Rational>> = basis
        .iter()
        .map(|bi| basis.iter().map(|bj| bi.l2_inner(bj)).collect())
        .collect();
    let rhs: Vec<Rational> = basis.iter().map(|b| b.l2_inner(f)).collect();
    let coef = solve_rational(gram, rhs).expect("Gram matrix of {1,(1-x)^n} is invertible");
    let projection = &basis[0].scale(&coef[0]) + &basis[1].scale(&coef[1]);
    let remainder = f - &projection;
    SpanProjection {
        projection,
        remainder,
        coefficients: (poly::to_f64(&coef[0]), poly::to_f64(&coef[1])),
    }
}

/// Best approximation of a grid function in `span{1,(1-x)^n}`: orthogonal
/// (trapezoid `L²`) or in the `L^q` norm for `q ∈ (1,∞)`.
pub fn project_span(
    f: &GridFunction,
    n: u32,
    mode: ProjectionMode,
) -> Result<SpanProjection<GridFunction>> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            field: "n",
            reason: "must be at least 1".into(),
        });
    }
    let len = f.n_points();
    let one = GridFunction::constant(len, 1.0)?;
    let weight = GridFunction::from_fn(len, |x| (1.0 - x).powi(n as i32))?;
    let (a, b) = match mode {
        ProjectionMode::L2 => l2_coefficients(f, &one, &weight),
        ProjectionMode::Lq(q) => {
            if !(q > 1.0 && q.is_finite()) {
                return Err(Error::InvalidParameter {
                    field: "q",
                    reason: format!("must lie in (1, ∞), got {q}"),
                });
            }
            lq_coefficients(f, &one, &weight, q)
        }
    };
    let projection = one.scale(a).axpy(b, &weight);
    let remainder = f - &projection;
    Ok(SpanProjection {
        projection,
        remainder,
        coefficients: (a, b),
    })
}

fn l2_coefficients(f: &GridFunction, e0: &GridFunction, e1: &GridFunction) -> (f64, f64) {
    let g00 = e0.l2_inner(e0);
    let g01 = e0.l2_inner(e1);
    let g11 = e1.l2_inner(e1);
    let r0 = e0.l2_inner(f);
    let r1 = e1.l2_inner(f);
    let det = g00 * g11 - g01 * g01;
    assert!(det > 1e-14 * g00 * g11, "ill-conditioned Gram system");
    ((g11 * r0 - g01 * r1) / det, (g00 * r1 - g01 * r0) / det)
}

/// Damped Newton on the smooth convex map `(a,b) ↦ ∫|f - a - b e₁|^q`.
fn lq_coefficients(f: &GridFunction, e0: &GridFunction, e1: &GridFunction, q: f64) -> (f64, f64) {
    let w = grid::trapezoid_weights(f.n_points());
    let (e0, e1, fv) = (e0.values(), e1.values(), f.values());
    let scale = f.max_abs().max(1e-300);
    let objective = |a: f64, b: f64| -> f64 {
        (0..fv.len())
            .map(|i| w[i] * (fv[i] - a * e0[i] - b * e1[i]).abs().powf(q))
            .sum()
    };
    let (mut a, mut b) = l2_coefficients(f, &GridFunction::new(e0.to_vec()).unwrap(), &GridFunction::new(e1.to_vec()).unwrap());
    // |r|^(q-2) is unbounded at r = 0 for q < 2; floor |r| relative to the data.
    let floor = 1e-12 * scale;
    for _ in 0..200 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..fv.len() {
            let r = fv[i] - a * e0[i] - b * e1[i];
            let ar = r.abs().max(floor);
            let dphi = q * r.signum() * r.abs().powf(q - 1.0);
            let d2 = q * (q - 1.0) * ar.powf(q - 2.0);
            g0 -= w[i] * dphi * e0[i];
            g1 -= w[i] * dphi * e1[i];
            h00 += w[i] * d2 * e0[i] * e0[i];
            h01 += w[i] * d2 * e0[i] * e1[i];
            h11 += w[i] * d2 * e1[i] * e1[i];
        }
        let det = h00 * h11 - h01 * h01;
        let (da, db) = if det > 0.0 {
            (-(h11 * g0 - h01 * g1) / det, -(h00 * g1 - h01 * g0) / det)
        } else {
            (-g0, -g1)
        };
        let f0 = objective(a, b);
        let slope = g0 * da + g1 * db;
        let mut t = 1.0;
        while t > 1e-12 && objective(a + t * da, b + t * db) > f0 + 1e-4 * t * slope {
            t *= 0.5;
        }
        a += t * da;
        b += t * db;
        if (t * da).abs() + (t * db).abs() <= 1e-14 * (1.0 + a.abs() + b.abs()) {
            break;
        }
    }
    (a, b)
}

/// Shifted Legendre polynomial `Q_k(x) = P_k(2x - 1)`, built with the exact
/// three-term recurrence `(k+1)Q_{k+1} = (2k+1)(2x-1)Q_k - k Q_{k-1}`.
pub fn legendre_q(k: u32) -> Polynomial {
    let t = Polynomial::from_i64(&[-1, 2]);
    let mut prev = Polynomial::one();
    if k == 0 {
        return prev;
    }
    let mut cur = t.clone();
    for j in 1..k {
        let j = j as i64;
        let next = &(&t * &cur).scale(&int(2 * j + 1)) - &prev.scale(&int(j));
        prev = cur;
        cur = next.scale(&poly::rat(1, j + 1));
    }
    cur
}

/// Largest `m` for which moment prescription solves the monomial system.
pub const MONOMIAL_LIMIT: usize = 8;

/// Polynomial of degree `≤ m` whose moments `μ₀..μ_m` equal `targets`
/// exactly.
pub fn construct_with_moments_exact(targets: &[Rational]) -> Polynomial {
    if targets.is_empty() {
        return Polynomial::zero();
    }
    let m = targets.len() - 1;
    if m <= MONOMIAL_LIMIT {
        // μ_k(x^j) = B(j+1, k+1) = j! k! / (j+k+1)!
        let gram: Vec<Vec<Rational>> = (0..=m)
            .map(|k| (0..=m).map(|j| beta_integral(j as u32, k as u32)).collect())
            .collect();
        let coef = solve_rational(gram, targets.to_vec()).expect("moment matrix is invertible");
        Polynomial::new(coef)
    } else {
        construct_in_legendre_basis(targets)
    }
}

/// Same as [`construct_with_moments_exact`] but always through the Legendre
/// basis, where `μ_k(Q_j) = 0` for `j > k` makes the system lower triangular.
pub fn construct_in_legendre_basis(targets: &[Rational]) -> Polynomial {
    let m = targets.len();
    let basis: Vec<Polynomial> = (0..m as u32).map(legendre_q).collect();
    let mut coef: Vec<Rational> = Vec::with_capacity(m);
    for (k, target) in targets.iter().enumerate() {
        let mut acc = target.clone();
        for (j, c) in coef.iter().enumerate() {
            acc -= c * basis[j].moment(k as u32);
        }
        let diag = basis[k].moment(k as u32);
        assert!(!diag.is_zero(), "triangular moment matrix is invertible");
        coef.push(acc / diag);
    }
    basis
        .iter()
        .zip(&coef)
        .fold(Polynomial::zero(), |acc, (b, c)| &acc + &b.scale(c))
}

/// Floating-point front end of [`construct_with_moments_exact`]; targets are
/// converted exactly, so the result reproduces them to rounding.
pub fn construct_with_moments(targets: &MomentVector) -> Result<Polynomial> {
    if targets.indices().iter().enumerate().any(|(k, &i)| i as usize != k) {
        return Err(Error::InvalidParameter {
            field: "targets",
            reason: "moment prescription expects the indices 0..=m in order".into(),
        });
    }
    let exact: Vec<Rational> = targets.entries().iter().map(|&e| poly::from_f64(e)).collect();
    Ok(construct_with_moments_exact(&exact))
}

fn beta_integral(j: u32, k: u32) -> Rational {
    let fact = |n: u32| (1..=n as i64).fold(int(1), |acc, i| acc * int(i));
    fact(j) * fact(k) / fact(j + k + 1)
}

/// Gaussian elimination with exact arithmetic. Returns `None` when singular.
pub fn solve_rational(mut a: Vec<Vec<Rational>>, mut b: Vec<Rational>) -> Option<Vec<Rational>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            if a[row][col].is_zero() {
                continue;
            }
            let factor = &a[row][col] / &a[col][col];
            for c in col..n {
                let delta = &factor * &a[col][c];
                a[row][c] -= delta;
            }
            let delta = &factor * &b[col];
            b[row] -= delta;
        }
    }
    let mut x = vec![Rational::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row].clone();
        for c in row + 1..n {
            acc -= &a[row][c] * &x[c];
        }
        x[row] = acc / &a[row][row];
    }
    Some(x)
}

/// `max |p|` over the coefficients, used for exact-zero assertions.
pub fn exact_abs(q: &Rational) -> f64 {
    poly::to_f64(&q.abs())
}
