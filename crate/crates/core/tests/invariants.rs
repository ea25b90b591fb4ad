use momentflow::grid::{self, GridFunction};
use momentflow::hminus::{ConstraintSpace, Metric};
use momentflow::linear::{self, Scheme};
use momentflow::moments::{self, Calculus};
use momentflow::nonlinear::{self, DecayModel, FlowConfig};
use momentflow::poly::{rat, Polynomial};
use proptest::prelude::*;

fn poly_strategy() -> impl Strategy<Value = Polynomial> {
    prop::collection::vec((-30i64..=30, 1i64..=15), 1..=7)
        .prop_map(|c| Polynomial::new(c.into_iter().map(|(a, b)| rat(a, b)).collect()))
}

fn grid_strategy(len: usize) -> impl Strategy<Value = GridFunction> {
    prop::collection::vec(-3.0f64..3.0, 4).prop_map(move |c| {
        GridFunction::from_fn(len, |x| c[0] + c[1] * x + c[2] * (5.0 * x).sin() + c[3] * (3.0 * x * x).cos()).unwrap()
    })
}

fn constraint_strategy() -> impl Strategy<Value = ConstraintSpace> {
    prop_oneof![
        Just(ConstraintSpace::ZeroZero),
        Just(ConstraintSpace::ZeroFree),
        (-2.0f64..2.0).prop_map(ConstraintSpace::Line),
        Just(ConstraintSpace::Full),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pn_kills_the_previous_moment(f in poly_strategy(), n in 1u32..=6) {
        prop_assert_eq!(f.apply_pn(n).moment(n - 1), rat(0, 1));
    }

    #[test]
    fn pn_and_jn_are_adjoint(u in poly_strategy(), phi in poly_strategy(), n in 1u32..=5) {
        prop_assert_eq!(u.apply_pn(n).l2_inner(&phi), u.l2_inner(&phi.apply_jn(n)));
    }

    #[test]
    fn jn_vanishes_at_both_ends(phi in poly_strategy(), n in 1u32..=5) {
        let j = phi.apply_jn(n);
        prop_assert_eq!(j.value_at_zero(), rat(0, 1));
        prop_assert_eq!(j.value_at_one(), rat(0, 1));
    }

    #[test]
    fn constructed_polynomials_have_the_requested_moments(
        targets in prop::collection::vec((-20i64..=20, 1i64..=9), 1..=6)
    ) {
        let t: Vec<_> = targets.into_iter().map(|(a, b)| rat(a, b)).collect();
        let p = moments::construct_with_moments_exact(&t);
        for (k, target) in t.iter().enumerate() {
            prop_assert_eq!(&p.moment(k as u32), target);
        }
    }

    #[test]
    fn exact_projection_lands_in_y(f in poly_strategy(), n in 1u32..=4, y in constraint_strategy()) {
        let q = y.project_poly(&f, n);
        let m0 = momentflow::poly::to_f64(&q.moment(0));
        let mn = momentflow::poly::to_f64(&q.moment(n));
        prop_assert!(y.residual(m0, mn) <= 1e-12 * (1.0 + f.max_abs_coeff()));
        prop_assert_eq!(y.project_poly(&q, n), q);
    }

    #[test]
    fn grid_projection_is_idempotent(f in grid_strategy(65), n in 1u32..=4, y in constraint_strategy()) {
        let q = y.project_grid(&f, n);
        prop_assert!(y.residual(q.moment(0), q.moment(n)) <= 1e-12 * (1.0 + f.max_abs()));
        let qq = y.project_grid(&q, n);
        prop_assert!((&qq - &q).max_abs() <= 1e-12 * (1.0 + f.max_abs()));
    }

    #[test]
    fn metric_is_symmetric_and_positive(f in grid_strategy(33), g in grid_strategy(33), n in 1u32..=4) {
        let m = Metric::new(33, n);
        let (a, b) = (m.inner(f.values(), g.values()), m.inner(g.values(), f.values()));
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        prop_assert!(m.norm_sq(f.values()) >= 0.0);
        let mf = m.apply(f.values());
        let direct: f64 = mf.iter().zip(g.values()).map(|(x, y)| x * y).sum();
        prop_assert!((direct - a).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn gradient_matches_central_differences(f in grid_strategy(129), h in grid_strategy(129), pi in 0usize..4) {
        let p = [1.5, 2.0, 3.0, 4.0][pi];
        let f = f.map(|v| v + if v >= 0.0 { 0.5 } else { -0.5 });
        let delta = 1e-6;
        let fd = (nonlinear::energy(&f.axpy(delta, &h), p) - nonlinear::energy(&f.axpy(-delta, &h), p)) / (2.0 * delta);
        let an = nonlinear::energy_gradient_l2(&f, p, 1e-8).l2_inner(&h);
        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "p={} fd={} an={}", p, fd, an);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn prox_step_decreases_energy(f in grid_strategy(65), pi in 0usize..3) {
        let p = [1.5, 3.0, 4.0][pi];
        let cfg = FlowConfig { p, n_points: 65, dt: 1e-2, prox_tol: 1e-10, ..FlowConfig::default() };
        let u = nonlinear::project_initial(&f, cfg.n, cfg.y);
        let v = nonlinear::prox_step(&u, &cfg).unwrap();
        prop_assert!(nonlinear::energy(&v, p) <= nonlinear::energy(&u, p) * (1.0 + 1e-12));
        prop_assert!(cfg.y.residual(v.moment(0), v.moment(2)) <= 1e-10);
    }
}

#[test]
fn zero_free_flow_keeps_its_moment_conditions() {
    let cfg = FlowConfig {
        p: 3.0,
        y: ConstraintSpace::ZeroFree,
        n_points: 257,
        t_final: 0.5,
        ..FlowConfig::default()
    };
    let u0 = nonlinear::project_initial(&GridFunction::from_fn(257, |x| (3.0 * x).exp()).unwrap(), 2, cfg.y);
    let rec = nonlinear::run_flow(&u0, &cfg).unwrap();
    assert!(rec.iter().all(|r| r.mu0.abs() <= 1e-8));
    assert!(rec.windows(2).all(|w| w[1].t > w[0].t && w[1].hy_norm_sq < w[0].hy_norm_sq));
}

#[test]
fn linear_flow_constant_is_twice_the_first_eigenvalue() {
    let len = 129;
    let y = ConstraintSpace::ZeroZero;
    let asm = linear::assemble(2, y, len).unwrap();
    let lambda1 = linear::spectrum(&asm, 1).unwrap()[0];
    let u0 = nonlinear::project_initial(&GridFunction::from_fn(len, |x| x.powi(3)).unwrap(), 2, y);
    let rec = linear::run_linear_flow(&asm, &u0, 1e-4, 0.4, Scheme::Exponential).unwrap();
    let check = nonlinear::differential_inequality_check(&rec, 2.0).unwrap();
    assert_eq!(check.max_violation, 0.0);
    let c = check.c_empirical.unwrap();
    assert!((c - 2.0 * lambda1).abs() < 0.01 * 2.0 * lambda1, "{c} {lambda1}");
    let fit = nonlinear::fit_decay(&rec, DecayModel::Exponential).unwrap();
    assert!(fit.r_squared > 0.999);
    assert!((fit.rate - 2.0 * lambda1).abs() < 0.01 * 2.0 * lambda1, "{} {}", fit.rate, lambda1);
}

#[test]
fn p3_flow_from_random_data_strictly_decreases() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let cfg = FlowConfig { p: 3.0, n_points: 129, t_final: 0.3, ..FlowConfig::default() };
    let f = grid::poly_to_grid(&Polynomial::random(&mut rng, 6), 129).unwrap();
    let rec = nonlinear::run_flow(&nonlinear::project_initial(&f, 2, cfg.y), &cfg).unwrap();
    let check = nonlinear::differential_inequality_check(&rec, 3.0).unwrap();
    assert_eq!(check.max_violation, 0.0);
    assert!(rec.windows(2).all(|w| w[1].hy_norm_sq < w[0].hy_norm_sq));
}

#[test]
fn zero_flow_is_vacuous() {
    let cfg = FlowConfig { p: 3.0, n_points: 33, t_final: 0.01, ..FlowConfig::default() };
    let rec = nonlinear::run_flow(&GridFunction::zeros(33).unwrap(), &cfg).unwrap();
    let check = nonlinear::differential_inequality_check(&rec, 3.0).unwrap();
    assert_eq!(check.max_violation, 0.0);
    assert_eq!(check.c_empirical, None);
}
