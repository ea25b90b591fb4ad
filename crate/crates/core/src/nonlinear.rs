//! Gradient flow of `E(f) = (1/p)∫|f|^p` in the `H_Y` metric under moment
//! constraints, by implicit Euler (proximal) steps.
//!
//! Each step minimizes `E(f) + ‖f - u‖²_{H_Y}/(2 dt)` over `{B f = 0}` with
//! a damped Newton method whose linear systems go through
//! [`StructuredSolver`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, GridFunction};
use crate::hminus::{dot, id_m_inverse, ConstraintSpace, Metric, StructuredSolver};
use crate::linear;
use crate::moments::Calculus;
use crate::poly::Polynomial;

/// Parameters of one flow run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub p: f64,
    pub n: u32,
    pub y: ConstraintSpace,
    pub n_points: usize,
    pub dt: f64,
    pub t_final: f64,
    pub prox_tol: f64,
    pub eps_reg: f64,
    pub max_newton: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            p: 4.0,
            n: 2,
            y: ConstraintSpace::ZeroZero,
            n_points: 513,
            dt: 1e-3,
            t_final: 5.0,
            prox_tol: 1e-10,
            eps_reg: 1e-8,
            max_newton: 60,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(Error::InvalidParameter {
                field,
                reason: reason.into(),
            })
        };
        if !(self.p > 1.0 && self.p.is_finite()) {
            return bad("p", "must be a finite number greater than 1");
        }
        if self.n == 0 {
            return bad("n", "must be at least 1");
        }
        self.y.validate()?;
        if self.n_points < grid::MIN_POINTS.max(5) {
            return bad("n_points", "must be at least 5");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", "must be positive");
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad("t_final", "must be nonnegative");
        }
        if !(self.prox_tol > 0.0) {
            return bad("prox_tol", "must be positive");
        }
        if !(self.eps_reg >= 0.0 && self.eps_reg.is_finite()) {
            return bad("eps_reg", "must be nonnegative");
        }
        if self.max_newton == 0 {
            return bad("max_newton", "must be at least 1");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Snapshot written after every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub t: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub mun: f64,
    pub lp_energy: f64,
    pub hy_norm_sq: f64,
    pub dissipation_residual: f64,
}

/// Builds the record of `u` at time `t`; the dissipation residual compares
/// `Δ(½‖u‖²)/dt` with `-p E(u)` and is zero for the first record.
pub fn record(metric: &Metric, prev: Option<&GridFunction>, u: &GridFunction, t: f64, p: f64, dt: f64) -> FlowRecord {
    let hy = metric.norm_sq(u.values());
    let e = energy(u, p);
    let dissipation_residual = match prev {
        Some(prev) => {
            let hy_prev = metric.norm_sq(prev.values());
            (0.5 * (hy - hy_prev) / dt + p * e).abs()
        }
        None => 0.0,
    };
    FlowRecord {
        t,
        mu0: u.moment(0),
        mu1: u.moment(1),
        mun: u.moment(metric.n()),
        lp_energy: e,
        hy_norm_sq: hy,
        dissipation_residual,
    }
}

/// `(1/p)∫|f|^p`.
pub fn energy(f: &GridFunction, p: f64) -> f64 {
    grid::quadrature(&f.map(|v| v.abs().powf(p))) / p
}

/// Pointwise `|f|^{p-2} f`, with `|f|` replaced by `√(f² + ε²)` for `p < 2`.
pub fn energy_gradient_l2(f: &GridFunction, p: f64, eps_reg: f64) -> GridFunction {
    f.map(|v| gradient_density(v, p, eps_reg))
}

fn gradient_density(v: f64, p: f64, eps: f64) -> f64 {
    if p < 2.0 {
        (v * v + eps * eps).powf(0.5 * p - 1.0) * v
    } else if p == 2.0 {
        v
    } else {
        v.abs().powf(p - 2.0) * v
    }
}

fn hessian_density(v: f64, p: f64, eps: f64) -> f64 {
    if p < 2.0 {
        let s = v * v + eps * eps;
        s.powf(0.5 * p - 2.0) * ((p - 1.0) * v * v + eps * eps)
    } else if p == 2.0 {
        1.0
    } else {
        (p - 1.0) * v.abs().powf(p - 2.0)
    }
}

fn energy_density(v: f64, p: f64, eps: f64) -> f64 {
    if p < 2.0 {
        (v * v + eps * eps).powf(0.5 * p) / p
    } else {
        v.abs().powf(p) / p
    }
}

/// Admissible initial datum: subtracts `a + b(1-x)^n` so that
/// `(μ₀, μ_n) ∈ Y`.
pub fn project_initial(f: &GridFunction, n: u32, y: ConstraintSpace) -> GridFunction {
    y.project_grid(f, n)
}

pub fn project_initial_poly(f: &Polynomial, n: u32, y: ConstraintSpace) -> Polynomial {
    y.project_poly(f, n)
}

/// Convergence statistics of one proximal step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxStats {
    pub iterations: usize,
    pub residual: f64,
    pub substeps: usize,
}

/// Proximal map of the (regularized) energy for a fixed configuration.
#[derive(Debug, Clone)]
pub struct ProxSolver {
    cfg: FlowConfig,
    metric: Metric,
    rows: Vec<Vec<f64>>,
}

impl ProxSolver {
    pub fn new(cfg: FlowConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            metric: Metric::new(cfg.n_points, cfg.n),
            rows: cfg.y.rows(cfg.n_points, cfg.n),
            cfg,
        })
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    /// One step of length `cfg.dt`; on Newton failure the step is retried
    /// as two half steps before giving up.
    pub fn step(&self, u_prev: &GridFunction, t: f64) -> Result<(GridFunction, ProxStats)> {
        self.step_dt(u_prev, self.cfg.dt, t)
    }

    pub fn step_dt(&self, u_prev: &GridFunction, dt: f64, t: f64) -> Result<(GridFunction, ProxStats)> {
        match self.newton(u_prev.values(), dt) {
            Ok((f, iterations, residual)) => Ok((
                GridFunction::new(f)?,
                ProxStats {
                    iterations,
                    residual,
                    substeps: 1,
                },
            )),
            Err((residual, iterations)) => {
                let half = 0.5 * dt;
                let retry = self
                    .newton(u_prev.values(), half)
                    .and_then(|(mid, i1, _)| self.newton(&mid, half).map(|(f, i2, r)| (f, i1 + i2, r)));
                match retry {
                    Ok((f, iterations, residual)) => Ok((
                        GridFunction::new(f)?,
                        ProxStats {
                            iterations,
                            residual,
                            substeps: 2,
                        },
                    )),
                    Err(_) => Err(Error::NewtonFailure {
                        t: t + dt,
                        residual,
                        iterations,
                    }),
                }
            }
        }
    }

    fn objective(&self, f: &[f64], u: &[f64], alpha: f64, eps: f64) -> f64 {
        let p = self.cfg.p;
        let e: f64 = self
            .metric
            .weights()
            .iter()
            .zip(f)
            .map(|(w, v)| w * energy_density(*v, p, eps))
            .sum();
        let d: Vec<f64> = f.iter().zip(u).map(|(a, b)| a - b).collect();
        e + 0.5 * alpha * self.metric.norm_sq(&d)
    }

    /// Relative KKT residual: `L²` norm of the density of `∇F + Bᵀλ*` with
    /// the best multipliers, against the sizes of the two gradient parts.
    fn kkt_residual(&self, grad_e: &[f64], grad_m: &[f64]) -> f64 {
        let w = self.metric.weights();
        let g: Vec<f64> = grad_e.iter().zip(grad_m).map(|(a, b)| a + b).collect();
        let nc = self.rows.len();
        let mut r = g.clone();
        if nc > 0 {
            let mut a = nalgebra::DMatrix::zeros(nc, nc);
            let mut b = nalgebra::DVector::zeros(nc);
            for i in 0..nc {
                for j in 0..nc {
                    a[(i, j)] = (0..w.len()).map(|k| self.rows[i][k] * self.rows[j][k] / w[k]).sum();
                }
                b[i] = -(0..w.len()).map(|k| self.rows[i][k] * g[k] / w[k]).sum::<f64>();
            }
            if let Some(lambda) = a.lu().solve(&b) {
                for (j, row) in self.rows.iter().enumerate() {
                    for k in 0..w.len() {
                        r[k] += lambda[j] * row[k];
                    }
                }
            }
        }
        let density_norm = |v: &[f64]| v.iter().zip(w).map(|(a, wi)| a * a / wi).sum::<f64>().sqrt();
        let scale = density_norm(grad_e) + density_norm(grad_m);
        if scale == 0.0 {
            return 0.0;
        }
        density_norm(&r) / scale
    }

    /// Damped Newton; `Err((residual, iterations))` on failure.
    #[allow(clippy::type_complexity)]
    fn newton(&self, u: &[f64], dt: f64) -> std::result::Result<(Vec<f64>, usize, f64), (f64, usize)> {
        let mut f = u.to_vec();
        let mut total = 0;
        for eps in self.eps_schedule() {
            let tol = if eps == self.cfg.eps_reg { self.cfg.prox_tol } else { self.cfg.prox_tol.max(1e-6) };
            let (g, it, residual) = self.newton_eps(u, &f, dt, eps, tol).map_err(|(r, it)| (r, total + it))?;
            f = g;
            total += it;
            if eps == self.cfg.eps_reg {
                return Ok((f, total, residual));
            }
        }
        unreachable!("schedule ends at eps_reg")
    }

    /// Regularization levels: for `p < 2` Newton is warm-started along
    /// `1e-2, 1e-3, …` down to `eps_reg`.
    fn eps_schedule(&self) -> Vec<f64> {
        let target = self.cfg.eps_reg;
        let mut out = Vec::new();
        if self.cfg.p < 2.0 {
            let mut e = 1e-2;
            while e > target * 10.0 {
                out.push(e);
                e *= 0.1;
            }
        }
        out.push(target);
        out
    }

    #[allow(clippy::type_complexity)]
    fn newton_eps(
        &self,
        u: &[f64],
        start: &[f64],
        dt: f64,
        eps: f64,
        tol: f64,
    ) -> std::result::Result<(Vec<f64>, usize, f64), (f64, usize)> {
        let p = self.cfg.p;
        let alpha = 1.0 / dt;
        let w = self.metric.weights();
        let mut f = start.to_vec();
        let mut residual = f64::INFINITY;
        for it in 0..=self.cfg.max_newton {
            let grad_e: Vec<f64> = f.iter().zip(w).map(|(v, wi)| wi * gradient_density(*v, p, eps)).collect();
            let d: Vec<f64> = f.iter().zip(u).map(|(a, b)| a - b).collect();
            let grad_m: Vec<f64> = self.metric.apply(&d).iter().map(|v| alpha * v).collect();
            residual = self.kkt_residual(&grad_e, &grad_m);
            if !residual.is_finite() {
                return Err((residual, it));
            }
            if residual <= tol {
                return Ok((f, it, residual));
            }
            if it == self.cfg.max_newton {
                break;
            }
            let psi: Vec<f64> = f.iter().map(|v| hessian_density(*v, p, eps)).collect();
            let solver = StructuredSolver::new(&self.metric, alpha, &psi, &self.rows).map_err(|_| (residual, it))?;
            let neg: Vec<f64> = grad_e.iter().zip(&grad_m).map(|(a, b)| -(a + b)).collect();
            let (step, _) = solver.solve(&neg, &vec![0.0; self.rows.len()]);
            let slope = -dot(&neg, &step);
            let f0 = self.objective(&f, u, alpha, eps);
            let slack = 1e-14 * f0.abs();
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = f.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                let ft = self.objective(&trial, u, alpha, eps);
                if ft <= f0 + 1e-4 * t * slope + slack {
                    f = trial;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    return Err((residual, it));
                }
            }
        }
        Err((residual, self.cfg.max_newton))
    }
}

/// Minimizer of `E(f) + ‖f - u_prev‖²/(2 dt)` over admissible `f`.
pub fn prox_step(u_prev: &GridFunction, cfg: &FlowConfig) -> Result<GridFunction> {
    check_input(u_prev, cfg)?;
    Ok(ProxSolver::new(*cfg)?.step(u_prev, 0.0)?.0)
}

fn check_input(u: &GridFunction, cfg: &FlowConfig) -> Result<()> {
    if u.n_points() != cfg.n_points {
        return Err(Error::SizeMismatch {
            left: u.n_points(),
            right: cfg.n_points,
        });
    }
    let residual = cfg.y.residual(u.moment(0), u.moment(cfg.n));
    let tolerance = linear::CONSTRAINT_TOL * u.max_abs().max(1.0);
    if residual > tolerance {
        return Err(Error::ConstraintViolation { residual, tolerance });
    }
    Ok(())
}

/// Runs the flow, calling `observe` with each record and state.
pub fn run_flow_observed(
    u0: &GridFunction,
    cfg: &FlowConfig,
    mut observe: impl FnMut(&FlowRecord, &GridFunction),
) -> Result<Vec<FlowRecord>> {
    check_input(u0, cfg)?;
    let solver = ProxSolver::new(*cfg)?;
    let steps = cfg.steps();
    let mut records = Vec::with_capacity(steps + 1);
    let mut u = u0.clone();
    let first = record(&solver.metric, None, &u, 0.0, cfg.p, cfg.dt);
    observe(&first, &u);
    records.push(first);
    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * cfg.dt;
        let (next, _) = solver.step(&u, t_prev)?;
        let rec = record(&solver.metric, Some(&u), &next, k as f64 * cfg.dt, cfg.p, cfg.dt);
        observe(&rec, &next);
        records.push(rec);
        u = next;
    }
    Ok(records)
}

pub fn run_flow(u0: &GridFunction, cfg: &FlowConfig) -> Result<Vec<FlowRecord>> {
    run_flow_observed(u0, cfg, |_, _| {})
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    /// `log v` against `log t`.
    Polynomial,
    /// `log v` against `t`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Slope of `log v` vs `log t` (polynomial) or minus the slope vs `t`
    /// (exponential).
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub points: usize,
}

pub const MIN_FIT_RECORDS: usize = 20;
pub const UNDERFLOW: f64 = 1e-28;

/// Records of `[t_start, t_end]` before the first `hy_norm_sq` underflow.
pub fn fit_window(records: &[FlowRecord], t_start: f64, t_end: f64) -> Vec<FlowRecord> {
    records
        .iter()
        .take_while(|r| r.hy_norm_sq >= UNDERFLOW)
        .filter(|r| r.t >= t_start && r.t <= t_end && r.t > 0.0)
        .copied()
        .collect()
}

/// Least-squares decay fit over the second half of the run.
pub fn fit_decay(records: &[FlowRecord], model: DecayModel) -> Result<DecayFit> {
    let t_final = records.last().map_or(0.0, |r| r.t);
    fit_decay_window(records, model, 0.5 * t_final, t_final)
}

pub fn fit_decay_window(records: &[FlowRecord], model: DecayModel, t_start: f64, t_end: f64) -> Result<DecayFit> {
    let window = fit_window(records, t_start, t_end);
    if window.len() < MIN_FIT_RECORDS {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_RECORDS,
            found: window.len(),
        });
    }
    let xs: Vec<f64> = window
        .iter()
        .map(|r| match model {
            DecayModel::Polynomial => r.t.ln(),
            DecayModel::Exponential => r.t,
        })
        .collect();
    let ys: Vec<f64> = window.iter().map(|r| r.hy_norm_sq.ln()).collect();
    let (slope, intercept, r_squared) = linear_regression(&xs, &ys);
    Ok(DecayFit {
        rate: match model {
            DecayModel::Polynomial => slope,
            DecayModel::Exponential => -slope,
        },
        intercept,
        r_squared,
        t_start: window[0].t,
        t_end: window[window.len() - 1].t,
        points: window.len(),
    })
}

fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Outcome of the check `v′ ≤ -C v^{p/2}` on `v = ‖u‖²_{H_Y}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DifferentialInequality {
    /// Largest positive central difference of `v`; zero when `v` decreases.
    pub max_violation: f64,
    /// `min -v′/v^{p/2}` over the records; `None` for the zero flow.
    pub c_empirical: Option<f64>,
}

pub fn differential_inequality_check(records: &[FlowRecord], p: f64) -> Result<DifferentialInequality> {
    if records.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            found: records.len(),
        });
    }
    let alpha = 0.5 * p;
    let mut max_violation = 0.0f64;
    let mut c: Option<f64> = None;
    for k in 1..records.len() - 1 {
        let (a, b, m) = (&records[k - 1], &records[k + 1], &records[k]);
        if m.hy_norm_sq < UNDERFLOW {
            continue;
        }
        let dv = (b.hy_norm_sq - a.hy_norm_sq) / (b.t - a.t);
        max_violation = max_violation.max(dv);
        let ck = -dv / m.hy_norm_sq.powf(alpha);
        c = Some(c.map_or(ck, |c: f64| c.min(ck)));
    }
    Ok(DifferentialInequality {
        max_violation,
        c_empirical: c,
    })
}

/// `‖u‖^p_{L^p} / ‖u‖^p_{H_Y}`; its infimum over the constrained space is
/// the embedding constant `C₀`.
pub fn rayleigh_ratio(metric: &Metric, u: &GridFunction, p: f64) -> Option<f64> {
    let hy = metric.norm_sq(u.values());
    (hy > 0.0).then(|| p * energy(u, p) / hy.powf(0.5 * p))
}

/// Estimate of `C₀` by normalized proximal iteration from the given starts:
/// each iterate is a prox step of length `cfg.dt` rescaled to unit norm.
/// Returns the smallest ratio met; a start is abandoned when a step fails.
pub fn minimize_rayleigh(cfg: &FlowConfig, starts: &[GridFunction], iterations: usize) -> Result<f64> {
    let solver = ProxSolver::new(*cfg)?;
    let metric = solver.metric();
    let mut best = f64::INFINITY;
    for start in starts {
        let mut u = project_initial(start, cfg.n, cfg.y);
        for _ in 0..=iterations {
            let norm = metric.norm_sq(u.values()).sqrt();
            if norm == 0.0 {
                break;
            }
            u = u.scale(1.0 / norm);
            if let Some(r) = rayleigh_ratio(metric, &u, cfg.p) {
                best = best.min(r);
            }
            match solver.step(&u, 0.0) {
                Ok((next, _)) => u = project_initial(&next, cfg.n, cfg.y),
                Err(_) => break,
            }
        }
    }
    Ok(best)
}

/// Check of `v(t) ≤ K t^{-2/(p-2)}` for `p > 2`, with
/// `K = ((p-2) C₀)^{-2/(p-2)}` from `v′ ≤ -2 C₀ v^{p/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayBound {
    pub c0: f64,
    pub k: f64,
    pub exponent: f64,
    /// `max v(t) t^{2/(p-2)} / K` over the window; `≤ 1` means satisfied.
    pub max_ratio: f64,
}

pub fn polynomial_decay_bound(records: &[FlowRecord], p: f64, c0: f64, t_start: f64, t_end: f64) -> Result<DecayBound> {
    if p <= 2.0 {
        return Err(Error::InvalidParameter {
            field: "p",
            reason: "polynomial decay bound needs p > 2".into(),
        });
    }
    let alpha = 0.5 * p;
    let k = (2.0 * c0 * (alpha - 1.0)).powf(-1.0 / (alpha - 1.0));
    let exponent = -1.0 / (alpha - 1.0);
    let window = fit_window(records, t_start, t_end);
    if window.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let max_ratio = window
        .iter()
        .map(|r| r.hy_norm_sq / (k * r.t.powf(exponent)))
        .fold(0.0, f64::max);
    Ok(DecayBound {
        c0,
        k,
        exponent,
        max_ratio,
    })
}

/// Predicted exponential rate `2 C₀ ‖u(0)‖^{p-2}` for `p ≤ 2`.
pub fn predicted_exponential_rate(c0: f64, p: f64, hy_norm_sq0: f64) -> f64 {
    2.0 * c0 * hy_norm_sq0.powf(0.5 * (p - 2.0))
}

/// Reconstructs `γ` from one converged step `u_prev → u`: the discrete
/// velocity satisfies `((u_prev - u)/dt | h) = (φ | h)` with
/// `φ = |u|^{p-2}u`; the part not explained by `-φ″` is fitted against
/// `Id_m⁻¹(1-x)^{n-2}`. Returns `(fitted, formula)`; `None` for `n = 1`.
pub fn potential_diagnostic(
    u_prev: &GridFunction,
    u: &GridFunction,
    cfg: &FlowConfig,
    tests: &[GridFunction],
) -> Result<Option<(f64, f64)>> {
    let Some(rho) = linear::potential_profile(u.n_points(), cfg.n) else {
        return Ok(None);
    };
    let metric = Metric::new(u.n_points(), cfg.n);
    let phi = energy_gradient_l2(u, cfg.p, cfg.eps_reg);
    let velocity = (u_prev - u).scale(1.0 / cfg.dt);
    let base = id_m_inverse(&grid::second_derivative(&phi)?.scale(-1.0));
    let rho = id_m_inverse(&rho);
    let (mut num, mut den) = (0.0, 0.0);
    for h in tests {
        let target = metric.inner(velocity.values(), h.values())
            - metric.inner_dual(base.regular.values(), base.atom, h.values(), 0.0);
        let a = metric.inner_dual(rho.regular.values(), rho.atom, h.values(), 0.0);
        num += a * target;
        den += a * a;
    }
    if den == 0.0 {
        return Err(Error::Singular("test family does not see the potential".into()));
    }
    Ok(Some((num / den, linear::gamma(&phi, cfg.n))))
}
