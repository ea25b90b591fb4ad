//! Configuration loading, experiment orchestration and result files.
//!
//! A run is described by a JSON object; see [`parse_config`] for the
//! accepted fields. Time series are written as CSV, scalar results as JSON,
//! and every file starts with the resolved manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::Error;
use crate::grid::{self, GridFunction};
use crate::hminus::ConstraintSpace;
use crate::linear::{self, Scheme};
use crate::moments::Calculus;
use crate::nonlinear::{self, DecayModel, FlowConfig, FlowRecord};
use crate::poly::{self, rat, Polynomial, Rational};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Numerical(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} identity check(s) failed")]
    ChecksFailed(usize),
}

impl RunError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            _ => 1,
        }
    }

    fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

type RunResult<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    IdentitySuite,
    LinearFlow,
    NonlinearFlow,
    Spectrum,
    DecaySweep,
}

/// Initial datum, projected onto the constraints before use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    /// Ascending coefficients.
    Polynomial(Vec<f64>),
    /// Rational coefficients `a/b`, `a ∈ [-9, 9]`, `b ∈ [1, 9]`, drawn from
    /// ChaCha8 seeded with `seed`.
    Random { seed: u64, degree: usize },
    /// `sin(4x) + 2x²`.
    Default,
}

impl InitialData {
    pub fn sample(&self, n_points: usize) -> RunResult<GridFunction> {
        Ok(match self {
            Self::Polynomial(c) => grid::poly_to_grid(&Polynomial::from_f64(c), n_points)?,
            Self::Random { seed, degree } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                grid::poly_to_grid(&Polynomial::random(&mut rng, *degree), n_points)?
            }
            Self::Default => GridFunction::from_fn(n_points, |x| (4.0 * x).sin() + 2.0 * x * x)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub p: Vec<f64>,
    pub n: Vec<u32>,
    pub y: Vec<ConstraintSpace>,
}

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    pub n: u32,
    pub y: ConstraintSpace,
    pub p: f64,
    pub n_points: usize,
    pub dt: f64,
    pub t_final: f64,
    pub prox_tol: f64,
    pub eps_reg: f64,
    pub max_newton: usize,
    pub initial: InitialData,
    pub seed: u64,
    pub output: String,
    pub scheme: Scheme,
    pub eta: f64,
    pub k: usize,
    pub samples: usize,
    pub sweep: Option<Sweep>,
    pub parallel: usize,
}

impl RunManifest {
    /// Defaults for `kind`; `n` defaults to 2.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let f = FlowConfig::default();
        Self {
            kind,
            n: f.n,
            y: f.y,
            p: if kind == ExperimentKind::LinearFlow { 2.0 } else { f.p },
            n_points: f.n_points,
            dt: f.dt,
            t_final: f.t_final,
            prox_tol: f.prox_tol,
            eps_reg: f.eps_reg,
            max_newton: f.max_newton,
            initial: InitialData::Default,
            seed: 0,
            output: "out".into(),
            scheme: Scheme::ImplicitEuler,
            eta: 1.0,
            k: 10,
            samples: 200,
            sweep: None,
            parallel: 1,
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        self.flow_config_for(self.p, self.n, self.y)
    }

    fn flow_config_for(&self, p: f64, n: u32, y: ConstraintSpace) -> FlowConfig {
        FlowConfig {
            p,
            n,
            y,
            n_points: self.n_points,
            dt: self.dt,
            t_final: self.t_final,
            prox_tol: self.prox_tol,
            eps_reg: self.eps_reg,
            max_newton: self.max_newton,
        }
    }

    /// Checks every invariant; errors name the offending field.
    pub fn validate(&self) -> RunResult<()> {
        let as_config = |e: Error| match e {
            Error::InvalidParameter { field, reason } => RunError::config(field, reason),
            other => RunError::config("config", other.to_string()),
        };
        match self.kind {
            ExperimentKind::IdentitySuite => {
                if self.samples == 0 {
                    return Err(RunError::config("samples", "must be at least 1"));
                }
            }
            ExperimentKind::Spectrum => {
                if self.n == 0 {
                    return Err(RunError::config("n", "must be at least 1"));
                }
                self.y.validate().map_err(as_config)?;
                if self.n_points < linear::MIN_ASSEMBLY_POINTS {
                    return Err(RunError::config(
                        "n_points",
                        format!("must be at least {}", linear::MIN_ASSEMBLY_POINTS),
                    ));
                }
                if self.k == 0 {
                    return Err(RunError::config("k", "must be at least 1"));
                }
            }
            ExperimentKind::LinearFlow => {
                self.flow_config().validate().map_err(as_config)?;
                if self.n_points < linear::MIN_ASSEMBLY_POINTS {
                    return Err(RunError::config(
                        "n_points",
                        format!("must be at least {}", linear::MIN_ASSEMBLY_POINTS),
                    ));
                }
                if !self.eta.is_finite() {
                    return Err(RunError::config("eta", "must be finite"));
                }
            }
            ExperimentKind::NonlinearFlow => self.flow_config().validate().map_err(as_config)?,
            ExperimentKind::DecaySweep => {
                let sweep = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| RunError::config("sweep", "required for decay_sweep"))?;
                if sweep.p.is_empty() || sweep.n.is_empty() || sweep.y.is_empty() {
                    return Err(RunError::config("sweep", "lists must be nonempty"));
                }
                for (p, n, y) in sweep_jobs(sweep) {
                    self.flow_config_for(p, n, y).validate().map_err(as_config)?;
                }
            }
        }
        if let InitialData::Random { degree, .. } = self.initial {
            if degree > 40 {
                return Err(RunError::config("initial", "random degree must be at most 40"));
            }
        }
        if self.parallel == 0 {
            return Err(RunError::config("parallel", "must be at least 1"));
        }
        Ok(())
    }
}

const FIELDS: &[&str] = &[
    "kind",
    "n",
    "y",
    "p",
    "n_points",
    "dt",
    "t_final",
    "prox_tol",
    "eps_reg",
    "max_newton",
    "initial",
    "seed",
    "output",
    "scheme",
    "eta",
    "k",
    "samples",
    "sweep",
    "parallel",
];

fn field<T: DeserializeOwned>(map: &Map<String, Value>, key: &'static str) -> RunResult<Option<T>> {
    map.get(key)
        .map(|v| serde_json::from_value(v.clone()).map_err(|e| RunError::config(key, e.to_string())))
        .transpose()
}

/// Parses and validates a JSON configuration.
///
/// `kind` is always required, `n` for every kind except `identity_suite`;
/// the remaining fields fall back to [`RunManifest::defaults`].
pub fn parse_config(text: &str) -> RunResult<RunManifest> {
    let value: Value = serde_json::from_str(text).map_err(|e| RunError::config("config", e.to_string()))?;
    let map = value
        .as_object()
        .ok_or_else(|| RunError::config("config", "expected a JSON object"))?;
    if let Some(key) = map.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(RunError::config(key.clone(), "unknown field"));
    }
    let kind: ExperimentKind = field(map, "kind")?.ok_or_else(|| RunError::config("kind", "missing"))?;
    let mut m = RunManifest::defaults(kind);
    match field(map, "n")? {
        Some(n) => m.n = n,
        None if kind != ExperimentKind::IdentitySuite && kind != ExperimentKind::DecaySweep => {
            return Err(RunError::config("n", "missing"));
        }
        None => {}
    }
    macro_rules! fill {
        ($($name:ident),*) => {
            $(if let Some(v) = field(map, stringify!($name))? { m.$name = v; })*
        };
    }
    fill!(y, p, n_points, dt, t_final, prox_tol, eps_reg, max_newton, initial, seed, output, scheme, eta, k, samples, parallel);
    m.sweep = field(map, "sweep")?;
    if kind == ExperimentKind::LinearFlow && m.p != 2.0 {
        return Err(RunError::config("p", "linear_flow is the p = 2 flow"));
    }
    m.validate()?;
    Ok(m)
}

pub fn load_config(path: &Path) -> RunResult<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| RunError::config("config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// `zero_zero`, `zero_free`, `full` or `line:<slope>`.
pub fn parse_constraint(s: &str) -> RunResult<ConstraintSpace> {
    let y = match s {
        "zero_zero" => ConstraintSpace::ZeroZero,
        "zero_free" => ConstraintSpace::ZeroFree,
        "full" => ConstraintSpace::Full,
        _ => {
            let slope = s
                .strip_prefix("line:")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| RunError::config("y", format!("unknown constraint space `{s}`")))?;
            ConstraintSpace::Line(slope)
        }
    };
    y.validate().map_err(|e| RunError::config("y", e.to_string()))?;
    Ok(y)
}

/// Files written by a run, plus a human-readable report.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub report: String,
}

fn write_file(path: &Path, contents: &str) -> RunResult<()> {
    fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub const CSV_HEADER: &str = "t,mu0,mu1,mun,lp_energy,hy_norm_sq,dissipation_residual";

/// CSV with the manifest as a leading `#` comment line.
pub fn records_csv(manifest: &Value, records: &[FlowRecord]) -> String {
    let mut s = format!("# manifest: {}\n{CSV_HEADER}\n", serde_json::to_string(manifest).expect("serializable"));
    for r in records {
        let row = [r.t, r.mu0, r.mu1, r.mun, r.lp_energy, r.hy_norm_sq, r.dissipation_residual];
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(s, "{}", cells.join(",")).expect("string write");
    }
    s
}

/// Executes the manifest, writing into `out_dir`.
pub fn run(manifest: &RunManifest, out_dir: &Path) -> RunResult<RunOutput> {
    manifest.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    match manifest.kind {
        ExperimentKind::IdentitySuite => run_identity_suite(manifest, out_dir),
        ExperimentKind::LinearFlow => run_linear(manifest, out_dir),
        ExperimentKind::NonlinearFlow => run_nonlinear(manifest, out_dir),
        ExperimentKind::Spectrum => run_spectrum(manifest, out_dir),
        ExperimentKind::DecaySweep => run_sweep(manifest, out_dir),
    }
}

/// One row of the identity suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub cases: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const IDENTITY_TOL: f64 = 1e-12;

fn residual(a: &Rational, b: &Rational) -> f64 {
    poly::to_f64(&num_traits::Signed::abs(&(a - b)))
}

/// Exact-arithmetic identities for `P_n`, `J_n` and integration by parts on
/// random polynomials of degree at most 6.
pub fn identity_suite(seed: u64, samples: usize) -> Vec<IdentityCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "mu_{n-1}(P_n f) = 0",
        "P_n f(0) = -mu_n(f)",
        "P_n f(1) = mu_0(f) - mu_n(f)",
        "mu_0(P_n f) = mu_1(f) - mu_n(f)",
        "mu_n(f) = n mu_{n-1}(I f)",
        "<P_n u, phi> = <u, J_n phi>",
        "integration by parts",
    ];
    let mut worst = [0.0f64; 7];
    let mut cases = [0usize; 7];
    for n in 1..=5u32 {
        for _ in 0..samples {
            let f = random_poly(&mut rng);
            let g = random_poly(&mut rng);
            let pf = f.apply_pn(n);
            let mn = f.moment(n);
            let zero = rat(0, 1);
            let r = [
                residual(&pf.moment(n - 1), &zero),
                residual(&pf.value_at_zero(), &-mn.clone()),
                residual(&pf.value_at_one(), &(f.moment(0) - &mn)),
                residual(&pf.moment(0), &(f.moment(1) - &mn)),
                residual(&mn, &(poly::int(n as i64) * f.primitive().moment(n - 1))),
                residual(&pf.l2_inner(&g), &f.l2_inner(&g.apply_jn(n))),
            ];
            for (i, v) in r.iter().enumerate() {
                worst[i] = worst[i].max(*v);
                cases[i] += 1;
            }
            if n <= 4 {
                worst[6] = worst[6].max(linear::ibp_check(&f, &g, n));
                cases[6] += 1;
            }
        }
    }
    let mut checks: Vec<IdentityCheck> = names
        .iter()
        .zip(worst.iter().zip(cases))
        .map(|(name, (w, c))| IdentityCheck {
            name: (*name).into(),
            cases: c,
            max_residual: *w,
            tolerance: IDENTITY_TOL,
            passed: *w <= IDENTITY_TOL,
        })
        .collect();
    let worked = linear::ibp_sides(&Polynomial::from_i64(&[0, 0, 1]), &Polynomial::one(), 2);
    let two_ninths = rat(2, 9);
    let w = residual(&worked.lhs, &two_ninths).max(residual(&worked.rhs, &two_ninths));
    checks.push(IdentityCheck {
        name: "u = x^2, h = 1, n = 2: both sides 2/9".into(),
        cases: 1,
        max_residual: w,
        tolerance: IDENTITY_TOL,
        passed: w <= IDENTITY_TOL,
    });
    checks
}

fn random_poly(rng: &mut ChaCha8Rng) -> Polynomial {
    let degree = rng.gen_range(0..=6);
    Polynomial::random(rng, degree)
}

fn run_identity_suite(m: &RunManifest, out_dir: &Path) -> RunResult<RunOutput> {
    let checks = identity_suite(m.seed, m.samples);
    let failed = checks.iter().filter(|c| !c.passed).count();
    let mut report = String::new();
    for c in &checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        writeln!(report, "{verdict} {} (cases {}, max residual {:.3e})", c.name, c.cases, c.max_residual).unwrap();
    }
    let path = out_dir.join("identity_suite.json");
    write_file(
        &path,
        &to_json(&json!({ "manifest": m, "checks": checks, "passed": failed == 0 })),
    )?;
    if failed > 0 {
        return Err(RunError::ChecksFailed(failed));
    }
    Ok(RunOutput {
        files: vec![path],
        report,
    })
}

fn initial_state(m: &RunManifest, n: u32, y: ConstraintSpace) -> RunResult<GridFunction> {
    Ok(nonlinear::project_initial(&m.initial.sample(m.n_points)?, n, y))
}

fn run_linear(m: &RunManifest, out_dir: &Path) -> RunResult<RunOutput> {
    let asm = linear::assemble(m.n, m.y, m.n_points)?.with_eta(m.eta);
    let u0 = initial_state(m, m.n, m.y)?;
    let records = linear::run_linear_flow(&asm, &u0, m.dt, m.t_final, m.scheme)?;
    let manifest = serde_json::to_value(m).expect("serializable");
    let csv = out_dir.join("linear_flow.csv");
    write_file(&csv, &records_csv(&manifest, &records))?;
    let fit = nonlinear::fit_decay(&records, DecayModel::Exponential).ok();
    let lambda1 = if m.eta == 1.0 {
        Some(linear::spectrum(&asm, 1)?[0])
    } else {
        None
    };
    let summary = out_dir.join("linear_flow.json");
    write_file(
        &summary,
        &to_json(&json!({
            "manifest": manifest,
            "records": records.len(),
            "final": records.last(),
            "exponential_fit": fit,
            "lambda1": lambda1,
        })),
    )?;
    let report = format!(
        "linear flow: {} records, final hy_norm_sq {:.6e}\n",
        records.len(),
        records.last().map_or(0.0, |r| r.hy_norm_sq)
    );
    Ok(RunOutput {
        files: vec![csv, summary],
        report,
    })
}

/// Flow plus decay analysis for one `(p, n, Y)`.
fn flow_analysis(m: &RunManifest, cfg: &FlowConfig) -> RunResult<(Vec<FlowRecord>, Value)> {
    let u0 = initial_state(m, cfg.n, cfg.y)?;
    let records = nonlinear::run_flow(&u0, cfg)?;
    let metric = crate::hminus::Metric::new(cfg.n_points, cfg.n);
    let trajectory_c0 = records
        .iter()
        .filter(|r| r.hy_norm_sq >= nonlinear::UNDERFLOW)
        .map(|r| cfg.p * r.lp_energy / r.hy_norm_sq.powf(0.5 * cfg.p))
        .fold(f64::INFINITY, f64::min);
    let rayleigh_c0 = nonlinear::minimize_rayleigh(&FlowConfig { dt: 1.0, ..*cfg }, std::slice::from_ref(&u0), 50)?;
    let c0 = trajectory_c0.min(rayleigh_c0);
    let t_final = records.last().map_or(0.0, |r| r.t);
    let fit = |model| match nonlinear::fit_decay(&records, model) {
        Ok(f) => json!(f),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let bound = if cfg.p > 2.0 && c0.is_finite() {
        nonlinear::polynomial_decay_bound(&records, cfg.p, c0, 0.5 * t_final, t_final)
            .map(|b| json!(b))
            .unwrap_or(Value::Null)
    } else if c0.is_finite() {
        json!({ "predicted_rate": nonlinear::predicted_exponential_rate(c0, cfg.p, records[0].hy_norm_sq) })
    } else {
        Value::Null
    };
    let inequality = nonlinear::differential_inequality_check(&records, cfg.p)
        .map(|d| json!(d))
        .unwrap_or(Value::Null);
    let mean_residual = if records.len() > 1 {
        records.iter().map(|r| r.dissipation_residual).sum::<f64>() / (records.len() - 1) as f64
    } else {
        0.0
    };
    let initial_ratio = nonlinear::rayleigh_ratio(&metric, &u0, cfg.p);
    let analysis = json!({
        "p": cfg.p,
        "n": cfg.n,
        "y": cfg.y,
        "records": records.len(),
        "final": records.last(),
        "polynomial_fit": fit(DecayModel::Polynomial),
        "exponential_fit": fit(DecayModel::Exponential),
        "embedding_constant": {
            "c0": if c0.is_finite() { json!(c0) } else { Value::Null },
            "trajectory": if trajectory_c0.is_finite() { json!(trajectory_c0) } else { Value::Null },
            "rayleigh": if rayleigh_c0.is_finite() { json!(rayleigh_c0) } else { Value::Null },
            "initial_ratio": initial_ratio,
        },
        "decay_bound": bound,
        "differential_inequality": inequality,
        "mean_dissipation_residual": mean_residual,
    });
    Ok((records, analysis))
}

fn run_nonlinear(m: &RunManifest, out_dir: &Path) -> RunResult<RunOutput> {
    let manifest = serde_json::to_value(m).expect("serializable");
    let (records, analysis) = flow_analysis(m, &m.flow_config())?;
    let csv = out_dir.join("nonlinear_flow.csv");
    write_file(&csv, &records_csv(&manifest, &records))?;
    let summary = out_dir.join("nonlinear_flow.json");
    write_file(&summary, &to_json(&json!({ "manifest": manifest, "analysis": analysis })))?;
    let report = format!(
        "nonlinear flow p = {}: {} records, final hy_norm_sq {:.6e}\n",
        m.p,
        records.len(),
        records.last().map_or(0.0, |r| r.hy_norm_sq)
    );
    Ok(RunOutput {
        files: vec![csv, summary],
        report,
    })
}

fn run_spectrum(m: &RunManifest, out_dir: &Path) -> RunResult<RunOutput> {
    let value = spectrum_json(m)?;
    let path = out_dir.join("spectrum.json");
    write_file(&path, &to_json(&value))?;
    Ok(RunOutput {
        files: vec![path],
        report: to_json(&value["eigenvalues"]),
    })
}

/// Smallest `k` eigenvalues with the manifest.
pub fn spectrum_json(m: &RunManifest) -> RunResult<Value> {
    let asm = linear::assemble(m.n, m.y, m.n_points)?;
    let eig = linear::spectrum(&asm, usize::MAX)?;
    let all_positive = eig.iter().all(|&l| l > 0.0);
    let shown: Vec<f64> = eig.iter().take(m.k).copied().collect();
    Ok(json!({
        "manifest": m,
        "dimension": eig.len(),
        "smallest": shown.first(),
        "all_positive": all_positive,
        "eigenvalues": shown,
    }))
}

fn sweep_jobs(s: &Sweep) -> Vec<(f64, u32, ConstraintSpace)> {
    let mut jobs = Vec::new();
    for &p in &s.p {
        for &n in &s.n {
            for &y in &s.y {
                jobs.push((p, n, y));
            }
        }
    }
    jobs
}

fn run_sweep(m: &RunManifest, out_dir: &Path) -> RunResult<RunOutput> {
    let sweep = m.sweep.as_ref().expect("validated");
    let jobs = sweep_jobs(sweep);
    let manifest = serde_json::to_value(m).expect("serializable");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(m.parallel)
        .build()
        .map_err(|e| RunError::config("parallel", e.to_string()))?;
    let results: Vec<RunResult<(PathBuf, Value)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, n, y)| {
                let cfg = m.flow_config_for(p, n, y);
                let (records, analysis) = flow_analysis(m, &cfg)?;
                let name = format!("decay_p{p}_n{n}_{}.csv", y.label().replace(['(', ')'], "_"));
                let path = out_dir.join(name);
                let mut run_manifest = manifest.clone();
                run_manifest["p"] = json!(p);
                run_manifest["n"] = json!(n);
                run_manifest["y"] = json!(y);
                write_file(&path, &records_csv(&run_manifest, &records))?;
                Ok((path, analysis))
            })
            .collect()
    });
    let mut files = Vec::new();
    let mut runs = Vec::new();
    let mut report = String::new();
    for r in results {
        let (path, analysis) = r?;
        writeln!(
            report,
            "p = {}, n = {}, y = {}: {}",
            analysis["p"],
            analysis["n"],
            analysis["y"],
            path.display()
        )
        .unwrap();
        files.push(path);
        runs.push(analysis);
    }
    let summary = out_dir.join("decay_sweep.json");
    write_file(&summary, &to_json(&json!({ "manifest": manifest, "runs": runs })))?;
    files.push(summary);
    Ok(RunOutput { files, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_identity_config_fills_defaults() {
        let m = parse_config(r#"{"kind": "identity_suite"}"#).unwrap();
        assert_eq!(m, RunManifest::defaults(ExperimentKind::IdentitySuite));
    }

    #[test]
    fn rejects_p_at_most_one() {
        let err = parse_config(r#"{"kind": "nonlinear_flow", "n": 2, "p": 0.5}"#).unwrap_err();
        assert!(matches!(&err, RunError::Config { field, .. } if field == "p"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_n_names_the_field() {
        let err = parse_config(r#"{"kind": "nonlinear_flow", "p": 3}"#).unwrap_err();
        assert!(err.to_string().contains("`n`"), "{err}");
    }

    #[test]
    fn bad_values_name_the_field() {
        for (text, name) in [
            (r#"{"kind": "spectrum", "n": 1, "y": "sideways"}"#, "y"),
            (r#"{"kind": "nonlinear_flow", "n": 2, "dt": -1}"#, "dt"),
            (r#"{"kind": "nonlinear_flow", "n": 2, "colour": 1}"#, "colour"),
            (r#"{"kind": "linear_flow", "n": 2, "p": 3}"#, "p"),
            (r#"{"kind": "decay_sweep"}"#, "sweep"),
            (r#"{"n": 2}"#, "kind"),
        ] {
            match parse_config(text) {
                Err(RunError::Config { field, .. }) => assert_eq!(field, name, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn parses_tagged_fields() {
        let m = parse_config(
            r#"{"kind": "nonlinear_flow", "n": 3, "y": {"line": 0.5},
                "initial": {"random": {"seed": 7, "degree": 4}}, "scheme": "exponential"}"#,
        )
        .unwrap();
        assert_eq!(m.y, ConstraintSpace::Line(0.5));
        assert_eq!(m.initial, InitialData::Random { seed: 7, degree: 4 });
        let m = parse_config(r#"{"kind": "linear_flow", "n": 1, "initial": {"polynomial": [0, 1]}}"#).unwrap();
        assert_eq!(m.initial, InitialData::Polynomial(vec![0.0, 1.0]));
    }

    #[test]
    fn constraint_strings() {
        assert_eq!(parse_constraint("zero_free").unwrap(), ConstraintSpace::ZeroFree);
        assert_eq!(parse_constraint("line:-2").unwrap(), ConstraintSpace::Line(-2.0));
        assert!(parse_constraint("line:x").is_err());
    }

    #[test]
    fn csv_has_manifest_header_and_rows() {
        let r = FlowRecord {
            t: 0.5,
            mu0: 0.0,
            mu1: 1.0,
            mun: 0.0,
            lp_energy: 2.0,
            hy_norm_sq: 3.0,
            dissipation_residual: 0.0,
        };
        let csv = records_csv(&json!({"kind": "x"}), &[r]);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# manifest: "));
        assert_eq!(lines[1], CSV_HEADER);
        assert_eq!(lines[2].split(',').count(), 7);
        assert!(lines[2].starts_with("5.0000000000000000e-1,"));
    }

    #[test]
    fn identity_suite_passes_and_is_deterministic() {
        let a = identity_suite(42, 20);
        assert!(a.iter().all(|c| c.passed), "{a:?}");
        assert_eq!(a, identity_suite(42, 20));
    }

    #[test]
    fn nonlinear_run_writes_expected_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = parse_config(r#"{"kind": "nonlinear_flow", "n": 2, "n_points": 65, "dt": 0.01, "t_final": 0.3}"#).unwrap();
        let out = run(&m, dir.path()).unwrap();
        let csv = fs::read_to_string(&out.files[0]).unwrap();
        assert_eq!(csv.lines().count(), 2 + 31);
    }
}
