//! The linear heat operator `A_Y u = Id_m⁻¹(-u″ + γ(u)(1-x)^{n-2}) - c(u)δ₁`.
//!
//! The discrete operator is Galerkin: for `f` in the constrained grid space
//! `V_h`, `A f ∈ V_h` solves `(A f | h)_{H_Y} = (f | h)_{L²}` for all
//! `h ∈ V_h`. The potential and the atom are never inserted; the strong form
//! lives in [`apply_strong`] and serves as a diagnostic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{self, GridFunction};
use crate::hminus::{dot, id_m_inverse, ConstraintSpace, DualElement, HyInner, Metric};
use crate::moments::{self, Calculus};
use crate::nonlinear::{self, FlowRecord};
use crate::poly::{self, Polynomial, Rational};

/// Smallest grid accepted by [`assemble`].
pub const MIN_ASSEMBLY_POINTS: usize = 17;

/// `γ(f) = (n-1)(2n-1) f(0) - (n-1)²(2n-1) μ_{n-2}(f)`, zero for `n = 1`.
pub fn gamma<F: Calculus>(f: &F, n: u32) -> F::Scalar {
    if n <= 1 {
        return F::from_int(0);
    }
    let n = n as i64;
    let a = (n - 1) * (2 * n - 1);
    let b = (n - 1) * (n - 1) * (2 * n - 1);
    F::from_int(a) * f.value_at_zero() - F::from_int(b) * f.moment(n as u32 - 2)
}

/// Row `r` with `r · f = γ(f)` on a grid.
pub fn gamma_row(n_points: usize, n: u32) -> Vec<f64> {
    let mut row = vec![0.0; n_points];
    if n <= 1 {
        return row;
    }
    let nf = n as f64;
    let mrow = moments::moment_row(n_points, n - 2);
    for (r, m) in row.iter_mut().zip(mrow) {
        *r = -(nf - 1.0).powi(2) * (2.0 * nf - 1.0) * m;
    }
    row[0] += (nf - 1.0) * (2.0 * nf - 1.0);
    row
}

/// Potential profile `(1-x)^{n-2}`; `None` for `n = 1`, where `γ ≡ 0`.
pub fn potential_profile(n_points: usize, n: u32) -> Option<GridFunction> {
    (n >= 2).then(|| GridFunction::from_fn(n_points, |x| (1.0 - x).powi(n as i32 - 2)).expect("finite"))
}

/// Atom coefficient `c(u)` fixed by `(c + u(1), u(0) - u(1)) ⊥ Y`.
///
/// For `Y = ℝ²` the orthogonal complement is trivial, so `c = -u(1)` and the
/// flag reports whether the remaining condition `u(0) = u(1)` holds.
pub fn c_of(f0: f64, f1: f64, y: ConstraintSpace) -> Result<(f64, bool)> {
    match y {
        ConstraintSpace::Line(slope) => Ok((-f1 - (f0 - f1) * slope, true)),
        ConstraintSpace::Full => {
            let scale = f0.abs().max(f1.abs()).max(1.0);
            Ok((-f1, (f0 - f1).abs() <= 1e-12 * scale))
        }
        ConstraintSpace::ZeroZero | ConstraintSpace::ZeroFree => Err(Error::NotApplicable("c(u)")),
    }
}

/// Relative tolerance on the moment conditions of operator inputs.
pub const CONSTRAINT_TOL: f64 = 1e-8;

fn check_admissible(u: &GridFunction, n: u32, y: ConstraintSpace) -> Result<()> {
    let residual = y.residual(u.moment(0), u.moment(n));
    let tolerance = CONSTRAINT_TOL * u.max_abs().max(1.0);
    if residual > tolerance {
        return Err(Error::ConstraintViolation { residual, tolerance });
    }
    Ok(())
}

/// Strong action `Id_m⁻¹(-D²u + γ(u)(1-x)^{n-2}) - c(u)δ₁`.
pub fn apply_strong(u: &GridFunction, n: u32, y: ConstraintSpace) -> Result<DualElement<GridFunction>> {
    check_admissible(u, n, y)?;
    let mut regular = grid::second_derivative(u)?.scale(-1.0);
    if let Some(rho) = potential_profile(u.n_points(), n) {
        regular = regular.axpy(gamma(u, n), &rho);
    }
    let mut out = id_m_inverse(&regular);
    if matches!(y, ConstraintSpace::Line(_) | ConstraintSpace::Full) {
        out.atom -= c_of(u.left(), u.right(), y)?.0;
    }
    Ok(out)
}

/// Both sides of the integration-by-parts identity
/// `(Id_m⁻¹ u″ | h)_n = -(u|h) + u(1)μ₀(h) + [n u(0) - n(n-1)μ_{n-2}(u)] μ₁(h)
///  + [(1-n)u(0) - u(1) + n(n-1)μ_{n-2}(u)] μ_n(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IbpSides<S> {
    pub lhs: S,
    pub rhs: S,
}

fn ibp_rhs<F: Calculus>(u: &F, h: &F, n: u32) -> F::Scalar {
    let k = F::from_int;
    let ni = n as i64;
    let tail = if n >= 2 {
        k(ni * (ni - 1)) * u.moment(n - 2)
    } else {
        k(0)
    };
    let c1 = k(ni) * u.value_at_zero() - tail.clone();
    let cn = k(1 - ni) * u.value_at_zero() - u.value_at_one() + tail;
    -u.l2_inner(h) + u.value_at_one() * h.moment(0) + c1 * h.moment(1) + cn * h.moment(n)
}

/// Exact sides of the identity on polynomials.
pub fn ibp_sides(u: &Polynomial, h: &Polynomial, n: u32) -> IbpSides<Rational> {
    let lhs = Polynomial::inner_hy(&id_m_inverse(&u.derivative().derivative()), &DualElement::regular(h.clone()), n);
    IbpSides {
        lhs,
        rhs: ibp_rhs(u, h, n),
    }
}

/// `|LHS - RHS|` of the integration-by-parts identity, exact path.
pub fn ibp_check(u: &Polynomial, h: &Polynomial, n: u32) -> f64 {
    let s = ibp_sides(u, h, n);
    poly::to_f64(&num_traits::Signed::abs(&(s.lhs - s.rhs)))
}

/// Grid counterpart of [`ibp_check`], with `u″` by finite differences.
pub fn ibp_check_grid(u: &GridFunction, h: &GridFunction, n: u32) -> Result<f64> {
    let d2 = grid::second_derivative(u)?;
    let lhs = GridFunction::inner_hy(&id_m_inverse(&d2), &DualElement::regular(h.clone()), n);
    Ok((lhs - ibp_rhs(u, h, n)).abs())
}

/// Discrete forms of the operator for fixed `(n, Y, N)`.
#[derive(Debug, Clone)]
pub struct OperatorAssembly {
    pub n: u32,
    pub y: ConstraintSpace,
    pub n_points: usize,
    /// Coefficient of the potential term; `1` is the variational operator.
    pub eta: f64,
    metric: Metric,
    m: DMatrix<f64>,
    w: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

pub fn assemble(n: u32, y: ConstraintSpace, n_points: usize) -> Result<OperatorAssembly> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            field: "n",
            reason: "must be at least 1".into(),
        });
    }
    if n_points < MIN_ASSEMBLY_POINTS {
        return Err(Error::GridTooSmall {
            min: MIN_ASSEMBLY_POINTS,
            got: n_points,
        });
    }
    y.validate()?;
    let metric = Metric::new(n_points, n);
    Ok(OperatorAssembly {
        n,
        y,
        n_points,
        eta: 1.0,
        m: metric.dense(),
        w: grid::trapezoid_weights(n_points),
        rows: y.rows(n_points, n),
        metric,
    })
}

impl OperatorAssembly {
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn metric_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn constraint_rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Smallest eigenvalue of the metric restricted to the constrained space.
    pub fn metric_min_eigenvalue(&self) -> f64 {
        let (reduced, _) = reduce_to_null_space(&self.m, &self.rows);
        reduced.symmetric_eigenvalues().min()
    }

    fn potential_coupling(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.eta == 1.0 || self.n < 2 {
            return None;
        }
        let rho = potential_profile(self.n_points, self.n)?;
        let mass = rho.moment(0);
        let e: Vec<f64> = self
            .metric
            .apply(rho.values())
            .iter()
            .zip(self.metric.mu0_row())
            .map(|(a, m)| (self.eta - 1.0) * (a - m * mass))
            .collect();
        Some((e, gamma_row(self.n_points, self.n)))
    }

    /// Galerkin action: `g ∈ V_h` with `(g|h)_{H_Y} = (u|h)_{L²}` on `V_h`.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        let len = self.n_points;
        let mut b = DVector::zeros(len + self.rows.len());
        for i in 0..len {
            b[i] = self.w[i] * u.values()[i];
        }
        if let Some((e, g)) = self.potential_coupling() {
            let gu = dot(&g, u.values());
            for i in 0..len {
                b[i] += e[i] * gu;
            }
        }
        let sol = bordered(&self.m, &self.rows)
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular("Galerkin system".into()))?;
        GridFunction::new(sol.rows(0, len).iter().copied().collect())
    }
}

fn bordered(block: &DMatrix<f64>, rows: &[Vec<f64>]) -> DMatrix<f64> {
    let len = block.nrows();
    let nc = rows.len();
    let mut k = DMatrix::zeros(len + nc, len + nc);
    k.view_mut((0, 0), (len, len)).copy_from(block);
    for (a, row) in rows.iter().enumerate() {
        for i in 0..len {
            k[(len + a, i)] = row[i];
            k[(i, len + a)] = row[i];
        }
    }
    k
}

/// Householder reflectors `v` with `H = I - 2vvᵀ/vᵀv`, applied in sequence.
#[derive(Debug, Clone)]
struct Reflectors {
    vs: Vec<(usize, Vec<f64>)>,
}

impl Reflectors {
    /// `Q [0; z]` with `Q = H₀H₁⋯`.
    fn lift(&self, z: &[f64], len: usize) -> Vec<f64> {
        let offset = self.vs.len();
        let mut y = vec![0.0; len];
        y[offset..].copy_from_slice(z);
        for (start, v) in self.vs.iter().rev() {
            reflect(&mut y[*start..], v);
        }
        y
    }
}

fn reflect(x: &mut [f64], v: &[f64]) {
    let vv: f64 = v.iter().map(|a| a * a).sum();
    if vv == 0.0 {
        return;
    }
    let s = 2.0 * dot(v, x) / vv;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
}

/// `Qᵀ S Q` restricted to the orthogonal complement of `cons`.
fn reduce_to_null_space(s: &DMatrix<f64>, cons: &[Vec<f64>]) -> (DMatrix<f64>, Reflectors) {
    let len = s.nrows();
    let mut mat = s.clone();
    let mut cons: Vec<Vec<f64>> = cons.to_vec();
    let mut vs = Vec::new();
    for k in 0..cons.len() {
        let x = &cons[k][k..];
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut v = x.to_vec();
        v[0] += if x[0] >= 0.0 { norm } else { -norm };
        for c in cons.iter_mut().skip(k) {
            reflect(&mut c[k..], &v);
        }
        // rows then columns
        for j in 0..len {
            let mut col: Vec<f64> = (k..len).map(|i| mat[(i, j)]).collect();
            reflect(&mut col, &v);
            for (i, val) in (k..len).zip(col) {
                mat[(i, j)] = val;
            }
        }
        for i in 0..len {
            let mut row: Vec<f64> = (k..len).map(|j| mat[(i, j)]).collect();
            reflect(&mut row, &v);
            for (j, val) in (k..len).zip(row) {
                mat[(i, j)] = val;
            }
        }
        vs.push((k, v));
    }
    let nc = vs.len();
    let reduced = mat.view((nc, nc), (len - nc, len - nc)).into_owned();
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    (reduced, Reflectors { vs })
}

/// Eigenpairs of the discrete operator: `λ` ascending and `W`-orthonormal
/// eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub eigenvalues: Vec<f64>,
    pub vectors: Option<DMatrix<f64>>,
}

fn eigen(asm: &OperatorAssembly, vectors: bool) -> Result<Eigensystem> {
    if asm.eta != 1.0 {
        return Err(Error::NotApplicable("spectrum with eta != 1"));
    }
    let len = asm.n_points;
    let inv_sqrt: Vec<f64> = asm.w.iter().map(|w| 1.0 / w.sqrt()).collect();
    let mut s = asm.m.clone();
    for j in 0..len {
        for i in 0..len {
            s[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let cons: Vec<Vec<f64>> = asm
        .rows
        .iter()
        .map(|r| r.iter().zip(&inv_sqrt).map(|(a, b)| a * b).collect())
        .collect();
    let (reduced, refl) = reduce_to_null_space(&s, &cons);
    let finite = |mu: f64| -> Result<f64> {
        if mu > 0.0 && mu.is_finite() {
            Ok(1.0 / mu)
        } else {
            Err(Error::Eigen(format!("non-positive metric eigenvalue {mu:e}")))
        }
    };
    if !vectors {
        let mut lambdas = reduced
            .symmetric_eigenvalues()
            .iter()
            .map(|&mu| finite(mu))
            .collect::<Result<Vec<f64>>>()?;
        lambdas.sort_by(|a, b| a.total_cmp(b));
        return Ok(Eigensystem {
            eigenvalues: lambdas,
            vectors: None,
        });
    }
    let eig = SymmetricEigen::try_new(reduced, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigen-solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut lambdas = Vec::with_capacity(order.len());
    let mut vecs = DMatrix::zeros(len, order.len());
    for (col, &k) in order.iter().enumerate() {
        lambdas.push(finite(eig.eigenvalues[k])?);
        let z: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let y = refl.lift(&z, len);
        for i in 0..len {
            vecs[(i, col)] = y[i] * inv_sqrt[i];
        }
    }
    Ok(Eigensystem {
        eigenvalues: lambdas,
        vectors: Some(vecs),
    })
}

/// The `k` smallest eigenvalues of the discrete operator, all positive.
pub fn spectrum(asm: &OperatorAssembly, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            field: "k",
            reason: "must be at least 1".into(),
        });
    }
    let mut all = eigen(asm, false)?.eigenvalues;
    all.truncate(k);
    Ok(all)
}

/// Full eigensystem with `W`-orthonormal eigenvectors.
pub fn eigensystem(asm: &OperatorAssembly) -> Result<Eigensystem> {
    eigen(asm, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImplicitEuler,
    Exponential,
}

/// Time stepper for `u' = -A u` with cached factorizations.
pub enum LinearStepper {
    ImplicitEuler {
        dt: f64,
        n_points: usize,
        metric: Metric,
        lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        nc: usize,
    },
    Exponential {
        factors: Vec<f64>,
        vectors: DMatrix<f64>,
        w: Vec<f64>,
    },
}

impl LinearStepper {
    pub fn new(asm: &OperatorAssembly, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "dt",
                reason: "must be positive".into(),
            });
        }
        match scheme {
            Scheme::ImplicitEuler => {
                let mut block = &asm.m / dt;
                for i in 0..asm.n_points {
                    block[(i, i)] += asm.w[i];
                }
                if let Some((e, g)) = asm.potential_coupling() {
                    for i in 0..asm.n_points {
                        for j in 0..asm.n_points {
                            block[(i, j)] += e[i] * g[j];
                        }
                    }
                }
                let lu = bordered(&block, &asm.rows).lu();
                if !lu.is_invertible() {
                    return Err(Error::Singular("implicit Euler KKT matrix".into()));
                }
                Ok(Self::ImplicitEuler {
                    dt,
                    n_points: asm.n_points,
                    metric: asm.metric.clone(),
                    lu,
                    nc: asm.rows.len(),
                })
            }
            Scheme::Exponential => {
                let sys = eigensystem(asm)?;
                Ok(Self::Exponential {
                    factors: sys.eigenvalues.iter().map(|l| (-l * dt).exp()).collect(),
                    vectors: sys.vectors.expect("requested"),
                    w: asm.w.clone(),
                })
            }
        }
    }

    pub fn step(&self, u: &GridFunction) -> Result<GridFunction> {
        match self {
            Self::ImplicitEuler {
                dt,
                n_points,
                metric,
                lu,
                nc,
            } => {
                let mu = metric.apply(u.values());
                let mut b = DVector::zeros(n_points + nc);
                for i in 0..*n_points {
                    b[i] = mu[i] / dt;
                }
                let sol = lu
                    .solve(&b)
                    .ok_or_else(|| Error::Singular("implicit Euler KKT matrix".into()))?;
                GridFunction::new(sol.rows(0, *n_points).iter().copied().collect())
            }
            Self::Exponential { factors, vectors, w } => {
                let wu = DVector::from_iterator(w.len(), u.values().iter().zip(w).map(|(a, b)| a * b));
                let mut c = vectors.tr_mul(&wu);
                for (ci, f) in c.iter_mut().zip(factors) {
                    *ci *= f;
                }
                GridFunction::new((vectors * c).iter().copied().collect())
            }
        }
    }
}

/// One step of `u' = -A u` from an admissible state.
pub fn semigroup_step(asm: &OperatorAssembly, u: &GridFunction, dt: f64, scheme: Scheme) -> Result<GridFunction> {
    check_admissible(u, asm.n, asm.y)?;
    LinearStepper::new(asm, dt, scheme)?.step(u)
}

/// Records of the linear flow (`p = 2`) from `u0` up to `t_final`.
pub fn run_linear_flow(
    asm: &OperatorAssembly,
    u0: &GridFunction,
    dt: f64,
    t_final: f64,
    scheme: Scheme,
) -> Result<Vec<FlowRecord>> {
    check_admissible(u0, asm.n, asm.y)?;
    let stepper = LinearStepper::new(asm, dt, scheme)?;
    let steps = (t_final / dt).round() as usize;
    let mut records = Vec::with_capacity(steps + 1);
    let mut u = u0.clone();
    records.push(nonlinear::record(&asm.metric, None, &u, 0.0, 2.0, dt));
    for k in 1..=steps {
        let next = stepper.step(&u)?;
        records.push(nonlinear::record(&asm.metric, Some(&u), &next, k as f64 * dt, 2.0, dt));
        u = next;
    }
    Ok(records)
}

/// Residuals of the two conditions characterizing `D(A_Y²)`, for
/// `w = D²u - γ(u)(1-x)^{n-2}`.
pub fn da2_diagnostic(u: &GridFunction, n: u32, y: ConstraintSpace) -> Result<(f64, f64)> {
    let mut w = grid::second_derivative(u)?;
    if let Some(rho) = potential_profile(u.n_points(), n) {
        w = w.axpy(-gamma(u, n), &rho);
    }
    let (m0, mn) = (w.moment(0), w.moment(n));
    Ok(match y {
        ConstraintSpace::ZeroZero => (m0, mn),
        ConstraintSpace::ZeroFree => (m0, w.left() - w.right()),
        ConstraintSpace::Line(slope) => (m0 - c_of(u.left(), u.right(), y)?.0, mn - slope * m0),
        ConstraintSpace::Full => (m0 + u.right(), w.left() - w.right()),
    })
}

/// Smooth admissible test functions: shifted Legendre polynomials
/// `Q_1..Q_count` projected onto `V`.
pub fn smooth_test_family(n_points: usize, n: u32, y: ConstraintSpace, count: u32) -> Result<Vec<GridFunction>> {
    (1..=count)
        .map(|k| Ok(y.project_grid(&grid::poly_to_grid(&moments::legendre_q(k), n_points)?, n)))
        .collect()
}

/// `max_k |(A_h u | h_k) - (A_strong u | h_k)| / ‖h_k‖` over a test family.
pub fn weak_residual(asm: &OperatorAssembly, u: &GridFunction, tests: &[GridFunction]) -> Result<f64> {
    let galerkin = asm.apply(u)?;
    let strong = apply_strong(u, asm.n, asm.y)?;
    let metric = &asm.metric;
    Ok(tests
        .iter()
        .map(|h| {
            let a = metric.inner(galerkin.values(), h.values());
            let b = metric.inner_dual(strong.regular.values(), strong.atom, h.values(), 0.0);
            (a - b).abs() / metric.norm_sq(h.values()).sqrt()
        })
        .fold(0.0, f64::max))
}

/// Least-squares reconstruction of `γ` and `c` from the weak form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialFit {
    pub gamma: Option<f64>,
    pub c: Option<f64>,
}

/// Fits `(u|h) - (Id_m⁻¹(-D²u) | h) = γ (Id_m⁻¹ρ | h) - c μ₀(h)` over the
/// tests, recovering the coefficients the variational operator produces.
pub fn fit_potential_and_atom(
    u: &GridFunction,
    n: u32,
    y: ConstraintSpace,
    tests: &[GridFunction],
) -> Result<PotentialFit> {
    let metric = Metric::new(u.n_points(), n);
    let base = id_m_inverse(&grid::second_derivative(u)?.scale(-1.0));
    let rho = potential_profile(u.n_points(), n).map(|r| id_m_inverse(&r));
    let with_atom = matches!(y, ConstraintSpace::Line(_) | ConstraintSpace::Full);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if let Some(r) = &rho {
        cols.push(tests.iter().map(|h| metric.inner_dual(r.regular.values(), r.atom, h.values(), 0.0)).collect());
    }
    if with_atom {
        cols.push(tests.iter().map(|h| -h.moment(0)).collect());
    }
    let target: Vec<f64> = tests
        .iter()
        .map(|h| u.l2_inner(h) - metric.inner_dual(base.regular.values(), base.atom, h.values(), 0.0))
        .collect();
    if cols.is_empty() {
        return Ok(PotentialFit { gamma: None, c: None });
    }
    let a = DMatrix::from_fn(tests.len(), cols.len(), |i, j| cols[j][i]);
    let b = DVector::from_vec(target);
    let coef = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let mut it = coef.iter().copied();
    Ok(PotentialFit {
        gamma: rho.as_ref().and_then(|_| it.next()),
        c: if with_atom { it.next() } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{int, rat};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn gamma_examples() {
        let f = Polynomial::from_i64(&[3, -1, 2]);
        assert_eq!(gamma(&f, 1), int(0));
        assert_eq!(gamma(&Polynomial::one(), 3), int(0));
        // zero mass, n = 2 → 3 f(0)
        let g = ConstraintSpace::ZeroFree.project_poly(&f, 2);
        assert_eq!(gamma(&g, 2), int(3) * g.value_at_zero());
        let grid_g = grid::poly_to_grid(&g, 257).unwrap();
        assert_abs_diff_eq!(gamma(&grid_g, 2), 3.0 * grid_g.left(), epsilon = 1e-4);
        assert_abs_diff_eq!(dot(&gamma_row(257, 2), grid_g.values()), gamma(&grid_g, 2), epsilon = 1e-12);
    }

    #[test]
    fn c_examples() {
        assert_eq!(c_of(0.0, 0.0, ConstraintSpace::Line(0.7)).unwrap().0, 0.0);
        assert_eq!(c_of(5.0, 2.0, ConstraintSpace::Line(0.0)).unwrap().0, -2.0);
        assert_eq!(c_of(1.0, 0.0, ConstraintSpace::Line(1.0)).unwrap().0, -1.0);
        assert_eq!(c_of(1.0, 1.0, ConstraintSpace::Full).unwrap(), (-1.0, true));
        assert!(!c_of(1.0, 0.0, ConstraintSpace::Full).unwrap().1);
        assert!(matches!(c_of(1.0, 0.0, ConstraintSpace::ZeroZero), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn ibp_worked_case() {
        let u = Polynomial::from_i64(&[0, 0, 1]);
        let s = ibp_sides(&u, &Polynomial::one(), 2);
        assert_eq!(s.lhs, rat(2, 9));
        assert_eq!(s.rhs, rat(2, 9));
        let affine = Polynomial::from_i64(&[2, -3]);
        let h = Polynomial::from_i64(&[1, 4, -2]);
        for n in 1..5 {
            let s = ibp_sides(&affine, &h, n);
            assert_eq!(s.lhs, int(0));
            assert_eq!(s.rhs, int(0));
        }
    }

    #[test]
    fn ibp_grid_path_converges() {
        let u = GridFunction::from_fn(257, |x| (2.0 * x).sin()).unwrap();
        let h = GridFunction::from_fn(257, |x| x.exp()).unwrap();
        let u2 = GridFunction::from_fn(513, |x| (2.0 * x).sin()).unwrap();
        let h2 = GridFunction::from_fn(513, |x| x.exp()).unwrap();
        let (a, b) = (ibp_check_grid(&u, &h, 3).unwrap(), ibp_check_grid(&u2, &h2, 3).unwrap());
        assert!(a < 1e-4 && a / b > 3.0, "{a} {b}");
    }

    #[test]
    fn apply_strong_examples() {
        let z = GridFunction::zeros(33).unwrap();
        let s = apply_strong(&z, 2, ConstraintSpace::ZeroZero).unwrap();
        assert_eq!(s.regular.max_abs(), 0.0);
        assert_eq!(s.atom, 0.0);

        let cube = GridFunction::from_fn(129, |x| x.powi(3)).unwrap();
        let u = ConstraintSpace::ZeroZero.project_grid(&cube, 2);
        let s = apply_strong(&u, 2, ConstraintSpace::ZeroZero).unwrap();
        let d2 = grid::second_derivative(&u).unwrap();
        for i in 0..u.n_points() {
            assert_abs_diff_eq!(s.regular.values()[i], -d2.values()[i] + 3.0 * u.left(), epsilon = 1e-9);
        }
        assert_abs_diff_eq!(s.mu0(), 0.0, epsilon = 1e-12);

        let u = ConstraintSpace::ZeroFree.project_grid(&GridFunction::from_fn(65, |x| x * x).unwrap(), 1);
        let s = apply_strong(&u, 1, ConstraintSpace::ZeroFree).unwrap();
        assert_abs_diff_eq!(s.regular.values()[10], -2.0, epsilon = 1e-9);

        let bad = GridFunction::constant(33, 1.0).unwrap();
        assert!(matches!(
            apply_strong(&bad, 2, ConstraintSpace::ZeroZero),
            Err(Error::ConstraintViolation { .. })
        ));
    }

    #[test]
    fn assembly_shapes_and_coercivity() {
        for y in [ConstraintSpace::ZeroZero, ConstraintSpace::ZeroFree, ConstraintSpace::Line(0.3), ConstraintSpace::Full] {
            let asm = assemble(2, y, 33).unwrap();
            assert_eq!(asm.constraint_rows().len(), y.constraint_count());
            assert!(asm.metric_min_eigenvalue() > 0.0);
        }
        assert!(assemble(2, ConstraintSpace::Full, 16).is_err());
    }

    #[test]
    fn eigenvectors_are_w_orthonormal_eigenpairs() {
        let asm = assemble(2, ConstraintSpace::ZeroZero, 41).unwrap();
        let sys = eigensystem(&asm).unwrap();
        let v = sys.vectors.unwrap();
        assert_eq!(v.ncols(), 39);
        let w = DMatrix::from_diagonal(&DVector::from_vec(asm.weights().to_vec()));
        let gram = v.transpose() * &w * &v;
        assert!((gram - DMatrix::identity(39, 39)).amax() < 1e-10);
        for k in [0, 5, 20] {
            let f = v.column(k).into_owned();
            let lhs = &w * &f;
            let rhs = asm.metric_matrix() * &f * sys.eigenvalues[k];
            // equality holds on V_h, i.e. up to multiples of the constraint rows
            let resid = lhs - rhs;
            let rows = asm.constraint_rows();
            let b = DMatrix::from_fn(41, 2, |i, j| rows[j][i]);
            let coef = b.clone().svd(true, true).solve(&resid, 1e-15).unwrap();
            assert!((resid - b * coef).amax() < 1e-8 * sys.eigenvalues[k] * f.amax());
            for row in rows {
                assert!(dot(row, f.as_slice()).abs() < 1e-12);
            }
        }
        let k3 = spectrum(&asm, 3).unwrap();
        assert_eq!(k3, sys.eigenvalues[..3].to_vec());
    }

    #[test]
    fn periodic_spectrum_approaches_four_pi_squared() {
        let target = 4.0 * PI * PI;
        let errs: Vec<f64> = [65, 129]
            .iter()
            .map(|&len| {
                let asm = assemble(1, ConstraintSpace::ZeroFree, len).unwrap();
                (spectrum(&asm, 1).unwrap()[0] - target).abs() / target
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[1] < 0.01, "{errs:?}");
    }

    #[test]
    fn smaller_constrained_space_has_larger_eigenvalues() {
        let full = spectrum(&assemble(2, ConstraintSpace::Full, 65).unwrap(), 4).unwrap();
        let zf = spectrum(&assemble(2, ConstraintSpace::ZeroFree, 65).unwrap(), 4).unwrap();
        let zz = spectrum(&assemble(2, ConstraintSpace::ZeroZero, 65).unwrap(), 4).unwrap();
        for k in 0..4 {
            assert!(full[k] <= zf[k] * (1.0 + 1e-12) && zf[k] <= zz[k] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn exponential_step_scales_eigenvectors() {
        let asm = assemble(2, ConstraintSpace::ZeroZero, 49).unwrap();
        let sys = eigensystem(&asm).unwrap();
        let v = sys.vectors.unwrap();
        let dt = 1e-3;
        let u = GridFunction::new(v.column(2).iter().copied().collect()).unwrap();
        let next = semigroup_step(&asm, &u, dt, Scheme::Exponential).unwrap();
        let expected = u.scale((-sys.eigenvalues[2] * dt).exp());
        assert!((&next - &expected).max_abs() < 1e-10 * u.max_abs());
        let z = GridFunction::zeros(49).unwrap();
        assert_eq!(semigroup_step(&asm, &z, dt, Scheme::ImplicitEuler).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn schemes_agree_to_first_order() {
        let asm = assemble(2, ConstraintSpace::ZeroZero, 65).unwrap();
        let u0 = ConstraintSpace::ZeroZero.project_grid(&GridFunction::from_fn(65, |x| (3.0 * x).cos() + x).unwrap(), 2);
        let gap = |dt: f64, steps: usize| {
            let ie = LinearStepper::new(&asm, dt, Scheme::ImplicitEuler).unwrap();
            let ex = LinearStepper::new(&asm, dt, Scheme::Exponential).unwrap();
            let (mut a, mut b) = (u0.clone(), u0.clone());
            for _ in 0..steps {
                a = ie.step(&a).unwrap();
                b = ex.step(&b).unwrap();
            }
            (&a - &b).max_abs() / b.max_abs()
        };
        let g1 = gap(1e-3, 100);
        let g2 = gap(5e-4, 200);
        assert!((1.7..2.3).contains(&(g1 / g2)), "{g1} {g2}");
    }

    #[test]
    fn implicit_euler_conserves_moments() {
        let asm = assemble(3, ConstraintSpace::ZeroZero, 129).unwrap();
        let u0 = ConstraintSpace::ZeroZero.project_grid(&GridFunction::from_fn(129, |x| (5.0 * x).sin()).unwrap(), 3);
        let rec = run_linear_flow(&asm, &u0, 1e-3, 0.2, Scheme::ImplicitEuler).unwrap();
        for r in &rec {
            assert!(r.mu0.abs() < 1e-12 && r.mun.abs() < 1e-12);
        }
        assert!(rec.windows(2).all(|w| w[1].hy_norm_sq < w[0].hy_norm_sq));
    }

    #[test]
    fn eta_zero_is_a_different_operator() {
        let asm = assemble(2, ConstraintSpace::ZeroZero, 65).unwrap();
        let heat = asm.clone().with_eta(0.0);
        let u0 = ConstraintSpace::ZeroZero.project_grid(&GridFunction::from_fn(65, |x| x * x * x).unwrap(), 2);
        let a = semigroup_step(&asm, &u0, 1e-2, Scheme::ImplicitEuler).unwrap();
        let b = semigroup_step(&heat, &u0, 1e-2, Scheme::ImplicitEuler).unwrap();
        assert!((&a - &b).max_abs() > 1e-6);
        assert!(b.moment(0).abs() < 1e-12 && b.moment(2).abs() < 1e-12);
        assert!(matches!(spectrum(&heat, 1), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn weak_residual_is_second_order() {
        let n = 2;
        let y = ConstraintSpace::ZeroZero;
        let res: Vec<f64> = [65, 129, 257]
            .iter()
            .map(|&len| {
                let asm = assemble(n, y, len).unwrap();
                let u = y.project_grid(&GridFunction::from_fn(len, |x| (2.0 * x).sin() + x * x).unwrap(), n);
                let tests = smooth_test_family(len, n, y, 6).unwrap();
                weak_residual(&asm, &u, &tests).unwrap()
            })
            .collect();
        let o1 = (res[0] / res[1]).log2();
        let o2 = (res[1] / res[2]).log2();
        assert!(o1 > 1.8 && o2 > 1.8, "{res:?}");
    }

    #[test]
    fn fitted_potential_and_atom_match_formulas() {
        let len = 257;
        let n = 3;
        let y = ConstraintSpace::Line(0.5);
        let u = y.project_grid(&GridFunction::from_fn(len, |x| (1.5 * x).cos() + 0.2 * x).unwrap(), n);
        let tests = smooth_test_family(len, n, y, 8).unwrap();
        let fit = fit_potential_and_atom(&u, n, y, &tests).unwrap();
        let g = gamma(&u, n);
        let c = c_of(u.left(), u.right(), y).unwrap().0;
        assert!((fit.gamma.unwrap() - g).abs() < 1e-3 * g.abs().max(1.0), "{fit:?} {g}");
        assert!((fit.c.unwrap() - c).abs() < 1e-3 * c.abs().max(1.0), "{fit:?} {c}");
    }

    #[test]
    fn da2_examples() {
        let z = GridFunction::zeros(65).unwrap();
        assert_eq!(da2_diagnostic(&z, 2, ConstraintSpace::ZeroZero).unwrap(), (0.0, 0.0));
        let u = GridFunction::from_fn(513, |x| (2.0 * PI * x).cos()).unwrap();
        let (r0, rn) = da2_diagnostic(&u, 1, ConstraintSpace::ZeroFree).unwrap();
        assert!(r0.abs() < 1e-3 && rn.abs() < 1e-3, "{r0} {rn}");
    }
}
