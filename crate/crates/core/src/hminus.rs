//! Elements of `H⁻¹(T)` as a density plus a `δ₁` atom, the identification
//! `Id_m⁻¹`, and the equivalent inner products
//! `(u|v)_n = ∫ P_n u · P_n v + μ₀(u) μ₀(v)`.
//!
//! On grids the primitive inside the metric lives on the dual (cell-face)
//! grid `ξ₀ = 0`, `ξ_{j+1} = x_j + h/2`, `ξ_N = 1`: `Φ_{j+1} = Σ_{i≤j} w_i f_i`.
//! This makes the discrete metric positive definite with the banded-plus-
//! low-rank structure exploited by [`StructuredSolver`].

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, GridFunction};
use crate::moments::{self, Calculus};
use crate::poly::{self, Polynomial, Rational};

/// Density plus the coefficient of the Dirac mass at `x = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualElement<F: Calculus> {
    pub regular: F,
    pub atom: F::Scalar,
}

impl<F: Calculus> DualElement<F> {
    pub fn new(regular: F, atom: F::Scalar) -> Self {
        Self { regular, atom }
    }

    pub fn regular(regular: F) -> Self {
        Self {
            regular,
            atom: F::Scalar::zero(),
        }
    }

    /// Total mass `∫ regular + atom`.
    pub fn mu0(&self) -> F::Scalar {
        self.regular.moment(0) + self.atom.clone()
    }

    /// `P_n` annihilates the atom.
    pub fn apply_pn(&self, n: u32) -> F {
        self.regular.apply_pn(n)
    }
}

impl DualElement<Polynomial> {
    pub fn atom_only(a: Rational) -> Self {
        Self::new(Polynomial::zero(), a)
    }
}

impl DualElement<GridFunction> {
    pub fn atom_only(n_points: usize, a: f64) -> Result<Self> {
        Ok(Self::new(GridFunction::zeros(n_points)?, a))
    }
}

/// `μ₀(u)` for a dual element.
pub fn mu0<F: Calculus>(u: &DualElement<F>) -> F::Scalar {
    u.mu0()
}

/// `Id_m⁻¹ g = g - μ₀(g) δ₁`, the zero-mass representative.
pub fn id_m_inverse<F: Calculus>(g: &F) -> DualElement<F> {
    DualElement::new(g.clone(), -g.moment(0))
}

/// Admissible set `Y ⊆ ℝ²` for the pair `(μ₀, μ_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSpace {
    /// `Y = {0}²`.
    ZeroZero,
    /// `Y = {0} × ℝ`.
    ZeroFree,
    /// `Y = span{(1, y)}`.
    Line(f64),
    /// `Y = ℝ²`.
    Full,
}

impl ConstraintSpace {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Line(y) if !y.is_finite() => Err(Error::InvalidParameter {
                field: "y",
                reason: "line slope must be finite".into(),
            }),
            _ => Ok(()),
        }
    }

    /// Number of independent linear conditions on `(μ₀, μ_n)`.
    pub fn constraint_count(&self) -> usize {
        match self {
            Self::ZeroZero => 2,
            Self::ZeroFree | Self::Line(_) => 1,
            Self::Full => 0,
        }
    }

    /// Coefficients `(a, b)` of each condition `a μ₀ + b μ_n = 0`.
    pub fn conditions(&self) -> Vec<(f64, f64)> {
        match *self {
            Self::ZeroZero => vec![(1.0, 0.0), (0.0, 1.0)],
            Self::ZeroFree => vec![(1.0, 0.0)],
            Self::Line(y) => vec![(-y, 1.0)],
            Self::Full => vec![],
        }
    }

    /// Quadrature rows of the conditions on a grid.
    pub fn rows(&self, n_points: usize, n: u32) -> Vec<Vec<f64>> {
        let m0 = moments::moment_row(n_points, 0);
        let mn = moments::moment_row(n_points, n);
        self.conditions()
            .into_iter()
            .map(|(a, b)| m0.iter().zip(&mn).map(|(p, q)| a * p + b * q).collect())
            .collect()
    }

    /// Largest condition residual `|a μ₀ + b μ_n|`.
    pub fn residual(&self, mu0: f64, mun: f64) -> f64 {
        self.conditions()
            .into_iter()
            .map(|(a, b)| (a * mu0 + b * mun).abs())
            .fold(0.0, f64::max)
    }

    /// Whether every admissible element has zero mass, so that `H_Y` is the
    /// zero-mass subspace.
    pub fn forces_zero_mass(&self) -> bool {
        matches!(self, Self::ZeroZero | Self::ZeroFree)
    }

    /// Subtracts `a + b(1-x)^n` so that `(μ₀, μ_n)` lands in `Y`, with
    /// quadrature moments; the correction has minimal `(a, b)` norm on lines.
    pub fn project_grid(&self, f: &GridFunction, n: u32) -> GridFunction {
        let len = f.n_points();
        let one = GridFunction::constant(len, 1.0).expect("grid size already validated");
        let wn = GridFunction::from_fn(len, |x| (1.0 - x).powi(n as i32)).expect("finite");
        let moments = |g: &GridFunction| (g.moment(0), g.moment(n));
        let (a, b) = self.correction(moments(f), moments(&one), moments(&wn));
        f.axpy(-a, &one).axpy(-b, &wn)
    }

    /// Exact counterpart of [`ConstraintSpace::project_grid`].
    pub fn project_poly(&self, f: &Polynomial, n: u32) -> Polynomial {
        let one = Polynomial::one();
        let wn = Polynomial::one_minus_x_pow(n);
        match *self {
            Self::Full => f.clone(),
            Self::ZeroFree => f - &Polynomial::constant(f.moment(0)),
            Self::ZeroZero => {
                let gram = vec![
                    vec![one.moment(0), wn.moment(0)],
                    vec![one.moment(n), wn.moment(n)],
                ];
                let c = moments::solve_rational(gram, vec![f.moment(0), f.moment(n)])
                    .expect("moment matrix of {1,(1-x)^n} is invertible");
                &(f - &one.scale(&c[0])) - &wn.scale(&c[1])
            }
            Self::Line(y) => {
                let y = poly::from_f64(y);
                let line = |g: &Polynomial| g.moment(n) - &y * g.moment(0);
                let r = line(f);
                let v = (line(&one), line(&wn));
                let nv = &v.0 * &v.0 + &v.1 * &v.1;
                let a = &r * &v.0 / &nv;
                let b = &r * &v.1 / &nv;
                &(f - &Polynomial::constant(a)) - &wn.scale(&b)
            }
        }
    }

    fn correction(
        &self,
        f: (f64, f64),
        one: (f64, f64),
        wn: (f64, f64),
    ) -> (f64, f64) {
        match *self {
            Self::Full => (0.0, 0.0),
            Self::ZeroFree => (f.0 / one.0, 0.0),
            Self::ZeroZero => {
                let det = one.0 * wn.1 - wn.0 * one.1;
                assert!(det.abs() > 0.0, "moment matrix of {{1,(1-x)^n}} is invertible");
                ((f.0 * wn.1 - wn.0 * f.1) / det, (one.0 * f.1 - one.1 * f.0) / det)
            }
            Self::Line(y) => {
                let r = f.1 - y * f.0;
                let v = (one.1 - y * one.0, wn.1 - y * wn.0);
                let nv = v.0 * v.0 + v.1 * v.1;
                (r * v.0 / nv, r * v.1 / nv)
            }
        }
    }

    /// Short name used in file names and CLI arguments.
    pub fn label(&self) -> String {
        match self {
            Self::ZeroZero => "zero_zero".into(),
            Self::ZeroFree => "zero_free".into(),
            Self::Line(y) => format!("line({y})"),
            Self::Full => "full".into(),
        }
    }
}

/// Carriers on which the `H_Y` inner product can be evaluated.
pub trait HyInner: Calculus {
    fn inner_hy(u: &DualElement<Self>, v: &DualElement<Self>, n: u32) -> Self::Scalar;
}

impl HyInner for Polynomial {
    fn inner_hy(u: &DualElement<Self>, v: &DualElement<Self>, n: u32) -> Rational {
        u.apply_pn(n).l2_inner(&v.apply_pn(n)) + u.mu0() * v.mu0()
    }
}

impl HyInner for GridFunction {
    fn inner_hy(u: &DualElement<Self>, v: &DualElement<Self>, n: u32) -> f64 {
        let metric = Metric::new(u.regular.n_points(), n);
        metric.inner_dual(u.regular.values(), u.atom, v.regular.values(), v.atom)
    }
}

/// `(u|v)_n = ∫ P_n u · P_n v + μ₀(u) μ₀(v)`.
pub fn inner_hy<F: HyInner>(u: &DualElement<F>, v: &DualElement<F>, n: u32) -> F::Scalar {
    F::inner_hy(u, v, n)
}

/// Discrete `H_Y` metric on an `N`-point grid for a fixed `n`.
#[derive(Debug, Clone)]
pub struct Metric {
    n: u32,
    w: Vec<f64>,
    m0: Vec<f64>,
    mn: Vec<f64>,
    /// Trapezoid weights of the `N + 1` dual nodes.
    omega: Vec<f64>,
}

impl Metric {
    pub fn new(n_points: usize, n: u32) -> Self {
        assert!(n_points >= grid::MIN_POINTS, "grid too small");
        let h = grid::spacing(n_points);
        let mut omega = vec![h; n_points + 1];
        omega[0] = 0.25 * h;
        omega[1] = 0.75 * h;
        omega[n_points - 1] = 0.75 * h;
        omega[n_points] = 0.25 * h;
        Self {
            n,
            w: grid::trapezoid_weights(n_points),
            m0: moments::moment_row(n_points, 0),
            mn: moments::moment_row(n_points, n),
            omega,
        }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn n_points(&self) -> usize {
        self.w.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn mu0_row(&self) -> &[f64] {
        &self.m0
    }

    pub fn mun_row(&self) -> &[f64] {
        &self.mn
    }

    /// Values of `P_n f` at the dual nodes.
    pub fn pn_dual(&self, f: &[f64]) -> Vec<f64> {
        let mu = dot(&self.mn, f);
        let mut out = Vec::with_capacity(f.len() + 1);
        let mut acc = 0.0;
        out.push(-mu);
        for (wi, fi) in self.w.iter().zip(f) {
            acc += wi * fi;
            out.push(acc - mu);
        }
        out
    }

    /// `(f | g)` for densities without atoms.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.inner_dual(f, 0.0, g, 0.0)
    }

    pub fn inner_dual(&self, f: &[f64], fa: f64, g: &[f64], ga: f64) -> f64 {
        let pf = self.pn_dual(f);
        let pg = self.pn_dual(g);
        let body: f64 = self
            .omega
            .iter()
            .zip(pf.iter().zip(&pg))
            .map(|(o, (a, b))| o * a * b)
            .sum();
        body + (dot(&self.m0, f) + fa) * (dot(&self.m0, g) + ga)
    }

    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        self.inner(f, f)
    }

    /// `M f`, where `gᵀ M f = (g | f)`; linear cost.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let len = f.len();
        let y: Vec<f64> = self
            .pn_dual(f)
            .iter()
            .zip(&self.omega)
            .map(|(p, o)| p * o)
            .collect();
        let total: f64 = y.iter().sum();
        let mass = dot(&self.m0, f);
        let mut out = vec![0.0; len];
        let mut suffix = 0.0;
        for i in (0..len).rev() {
            suffix += y[i + 1];
            out[i] = self.w[i] * suffix - self.mn[i] * total + self.m0[i] * mass;
        }
        out
    }

    /// Dense Gram matrix `M`.
    pub fn dense(&self) -> DMatrix<f64> {
        let len = self.n_points();
        let mut m = DMatrix::zeros(len, len);
        let mut e = vec![0.0; len];
        for j in 0..len {
            e[j] = 1.0;
            let col = self.apply(&e);
            m.set_column(j, &DVector::from_vec(col));
            e[j] = 0.0;
        }
        m.fill_lower_triangle_with_upper_triangle();
        m
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solver for the constrained system
/// `[αM + W diag(ψ), Bᵀ; B, 0] [x; λ] = [r; s]` in linear time.
///
/// With `L = (lower ones)·W` the metric splits as `M = Lᵀ Ω̂ L + U S Uᵀ`,
/// `U = [m_n, Lᵀω̂, m₀]`. In the variable `z = L x` the leading block becomes
/// a tridiagonal matrix plus a rank-3 term, handled by Woodbury; the
/// constraints are handled by a Schur complement.
#[derive(Debug, Clone)]
pub struct StructuredSolver {
    alpha: f64,
    psi: Vec<f64>,
    metric: Metric,
    rows: Vec<Vec<f64>>,
    tri: Tridiagonal,
    /// `T⁻¹ Ũ`, three columns.
    tu: Vec<Vec<f64>>,
    cap: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    u_tilde: Vec<Vec<f64>>,
    /// `A⁻¹ Bᵀ` columns and the Schur complement `B A⁻¹ Bᵀ`.
    a_inv_bt: Vec<Vec<f64>>,
    schur: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl StructuredSolver {
    pub fn new(metric: &Metric, alpha: f64, psi: &[f64], rows: &[Vec<f64>]) -> Result<Self> {
        let len = metric.n_points();
        if psi.len() != len {
            return Err(Error::SizeMismatch {
                left: psi.len(),
                right: len,
            });
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter {
                field: "alpha",
                reason: "must be positive".into(),
            });
        }
        let w = metric.weights();
        let omega_hat = &metric.omega[1..];
        let d: Vec<f64> = psi.iter().zip(w).map(|(p, wi)| p / wi).collect();
        let mut diag = vec![0.0; len];
        let mut off = vec![0.0; len - 1];
        for k in 0..len {
            diag[k] = alpha * omega_hat[k] + d[k] + if k + 1 < len { d[k + 1] } else { 0.0 };
            if k + 1 < len {
                off[k] = -d[k + 1];
            }
        }
        let tri = Tridiagonal::factor(diag, off)?;

        // q = Lᵀ ω̂ : q_i = w_i Σ_{k≥i} ω̂_k
        let mut q = vec![0.0; len];
        let mut suffix = 0.0;
        for i in (0..len).rev() {
            suffix += omega_hat[i];
            q[i] = w[i] * suffix;
        }
        let u_cols = [metric.mn.clone(), q, metric.m0.clone()];
        let u_tilde: Vec<Vec<f64>> = u_cols.iter().map(|c| l_inv_t(w, c)).collect();
        let tu: Vec<Vec<f64>> = u_tilde.iter().map(|c| tri.solve(c)).collect();
        // S⁻¹ for S = [[1,-1,0],[-1,0,0],[0,0,1]]
        let s_inv = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut cap = s_inv / alpha;
        for a in 0..3 {
            for b in 0..3 {
                cap[(a, b)] += dot(&u_tilde[a], &tu[b]);
            }
        }
        let cap = cap.lu();
        if !cap.is_invertible() {
            return Err(Error::Singular("capacitance matrix".into()));
        }
        let mut solver = Self {
            alpha,
            psi: psi.to_vec(),
            metric: metric.clone(),
            rows: rows.to_vec(),
            tri,
            tu,
            cap,
            u_tilde,
            a_inv_bt: Vec::new(),
            schur: None,
        };
        if !rows.is_empty() {
            solver.a_inv_bt = rows.iter().map(|r| solver.solve_unconstrained(r)).collect();
            let nc = rows.len();
            let mut s = DMatrix::zeros(nc, nc);
            for a in 0..nc {
                for b in 0..nc {
                    s[(a, b)] = dot(&rows[a], &solver.a_inv_bt[b]);
                }
            }
            let s = s.lu();
            if !s.is_invertible() {
                return Err(Error::Singular("constraint rows are dependent".into()));
            }
            solver.schur = Some(s);
        }
        Ok(solver)
    }

    /// `(αM + W diag ψ) x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mx = self.metric.apply(x);
        mx.iter()
            .zip(x)
            .zip(self.psi.iter().zip(self.metric.weights()))
            .map(|((m, xi), (p, wi))| self.alpha * m + wi * p * xi)
            .collect()
    }

    fn solve_unconstrained_once(&self, r: &[f64]) -> Vec<f64> {
        let w = self.metric.weights();
        let rhs = l_inv_t(w, r);
        let y = self.tri.solve(&rhs);
        let proj = DVector::from_iterator(3, self.u_tilde.iter().map(|c| dot(c, &y)));
        let coef = self.cap.solve(&proj).expect("invertible capacitance");
        let z: Vec<f64> = (0..y.len())
            .map(|i| y[i] - (0..3).map(|a| self.tu[a][i] * coef[a]).sum::<f64>())
            .collect();
        l_inv(w, &z)
    }

    /// `(αM + W diag ψ)⁻¹ r` with one refinement sweep.
    pub fn solve_unconstrained(&self, r: &[f64]) -> Vec<f64> {
        let mut x = self.solve_unconstrained_once(r);
        let ax = self.apply(&x);
        let res: Vec<f64> = r.iter().zip(&ax).map(|(a, b)| a - b).collect();
        let dx = self.solve_unconstrained_once(&res);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        x
    }

    /// Solves the constrained system; returns `(x, λ)`.
    pub fn solve(&self, r: &[f64], s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x0 = self.solve_unconstrained(r);
        let Some(schur) = &self.schur else {
            return (x0, Vec::new());
        };
        let nc = self.rows.len();
        let g = DVector::from_iterator(nc, (0..nc).map(|a| dot(&self.rows[a], &x0) - s[a]));
        let lambda = schur.solve(&g).expect("invertible Schur complement");
        let mut x = x0;
        for a in 0..nc {
            for (xi, c) in x.iter_mut().zip(&self.a_inv_bt[a]) {
                *xi -= lambda[a] * c;
            }
        }
        (x, lambda.iter().copied().collect())
    }
}

/// `L⁻ᵀ v = Δᵀ (W⁻¹ v)`.
fn l_inv_t(w: &[f64], v: &[f64]) -> Vec<f64> {
    let len = v.len();
    let s: Vec<f64> = v.iter().zip(w).map(|(a, b)| a / b).collect();
    (0..len)
        .map(|k| s[k] - if k + 1 < len { s[k + 1] } else { 0.0 })
        .collect()
}

/// `L⁻¹ z = W⁻¹ Δ z`.
fn l_inv(w: &[f64], z: &[f64]) -> Vec<f64> {
    (0..z.len())
        .map(|k| (z[k] - if k > 0 { z[k - 1] } else { 0.0 }) / w[k])
        .collect()
}

/// `LDLᵀ` factorization of a symmetric positive definite tridiagonal matrix.
#[derive(Debug, Clone)]
struct Tridiagonal {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl Tridiagonal {
    fn factor(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        let len = diag.len();
        let mut d = vec![0.0; len];
        let mut l = vec![0.0; len.saturating_sub(1)];
        d[0] = diag[0];
        for k in 1..len {
            l[k - 1] = off[k - 1] / d[k - 1];
            d[k] = diag[k] - l[k - 1] * off[k - 1];
            if !(d[k] > 0.0) {
                return Err(Error::Singular(format!("tridiagonal pivot {k} is {}", d[k])));
            }
        }
        Ok(Self { d, l })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let len = b.len();
        let mut y = b.to_vec();
        for k in 1..len {
            y[k] -= self.l[k - 1] * y[k - 1];
        }
        for k in 0..len {
            y[k] /= self.d[k];
        }
        for k in (0..len - 1).rev() {
            y[k] -= self.l[k] * y[k + 1];
        }
        y
    }
}

/// Extremes of `‖u‖_{H,n} / ‖u‖_{H,1}` over random polynomial densities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRatioRow {
    pub n: u32,
    pub samples: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Empirical equivalence constants between the `n`-products and the
/// `n = 1` product, from random polynomials of degree `≤ 6` (exact path).
pub fn norm_equivalence_report(samples: usize, n_list: &[u32], seed: u64) -> Result<Vec<NormRatioRow>> {
    if samples == 0 {
        return Err(Error::InvalidParameter {
            field: "samples",
            reason: "must be at least 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let polys: Vec<DualElement<Polynomial>> = std::iter::repeat_with(|| Polynomial::random(&mut rng, 6))
        .filter(|p| !p.is_zero())
        .take(samples)
        .map(DualElement::regular)
        .collect();
    let base: Vec<f64> = polys.iter().map(|u| poly::to_f64(&inner_hy(u, u, 1))).collect();
    Ok(n_list
        .iter()
        .map(|&n| {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for (u, b) in polys.iter().zip(&base) {
                let r = (poly::to_f64(&inner_hy(u, u, n)) / b).sqrt();
                lo = lo.min(r);
                hi = hi.max(r);
            }
            NormRatioRow {
                n,
                samples: polys.len(),
                min_ratio: lo,
                max_ratio: hi,
            }
        })
        .collect())
}

/// `|μ_n(g)|² / (‖g‖_{L²} ‖g‖_{H⁻¹})` with the `n = 1` product as the
/// `H⁻¹(T)` norm.
pub fn interpolation_ratio_poly(g: &Polynomial, n: u32) -> Option<f64> {
    if g.is_zero() {
        return None;
    }
    let mu = poly::to_f64(&g.moment(n));
    let l2 = poly::to_f64(&g.l2_inner(g)).sqrt();
    let u = DualElement::regular(g.clone());
    let hm = poly::to_f64(&inner_hy(&u, &u, 1)).sqrt();
    Some(mu * mu / (l2 * hm))
}

pub fn interpolation_ratio_grid(g: &GridFunction, n: u32) -> Option<f64> {
    let l2 = g.l2_norm();
    if l2 == 0.0 {
        return None;
    }
    let mu = g.moment(n);
    let hm = Metric::new(g.n_points(), 1).norm_sq(g.values()).sqrt();
    Some(mu * mu / (l2 * hm))
}

/// Largest interpolation ratio over `samples` random polynomials of degree
/// `≤ 6`; exact when `n_points` is `None`, sampled on that grid otherwise.
pub fn interpolation_constant_probe(
    n: u32,
    samples: usize,
    seed: u64,
    n_points: Option<usize>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    let mut taken = 0;
    while taken < samples {
        let p = Polynomial::random(&mut rng, 6);
        let r = match n_points {
            None => interpolation_ratio_poly(&p, n),
            Some(len) => interpolation_ratio_grid(&grid::poly_to_grid(&p, len)?, n),
        };
        if let Some(r) = r {
            best = best.max(r);
            taken += 1;
        }
    }
    Ok(best)
}
