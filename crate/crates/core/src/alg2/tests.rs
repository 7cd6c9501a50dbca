use super::*;
use crate::costs::prox_alpha_objective;
use crate::mesh::{build_spacetime_mesh, build_spatial_mesh};

fn unit_mesh(d: usize, cells: usize, n_time: usize) -> SpaceTimeMesh {
    let sp = build_spatial_mesh(&vec![0.0; d], &vec![1.0; d], &vec![cells; d], &[]).unwrap();
    build_spacetime_mesh(sp, n_time).unwrap()
}

fn gaussian(center: f64) -> DensityData {
    DensityData::sampler(move |x: &[f64]| (-50.0 * x.iter().map(|v| (v - center).powi(2)).sum::<f64>()).exp())
}

fn zero_density() -> DensityData {
    DensityData::sampler(|_| 0.0)
}

#[test]
fn validation() {
    let mut s = ProblemSpec::ot(gaussian(0.5), gaussian(0.5), 1.0);
    assert!(s.validate().is_ok());
    s.r1 = 0.0;
    assert!(matches!(s.validate(), Err(Error::InvalidArgument(_))));
    let s = ProblemSpec {
        cost: CostModel::quadratic(0.1),
        ..ProblemSpec::ot(gaussian(0.5), gaussian(0.5), 1.0)
    };
    assert!(s.validate().is_err());
    let mut s = ProblemSpec::mfg(CostModel::quadratic(0.1), gaussian(0.5), gaussian(0.5), 1.0, 1.0);
    assert!(s.validate().is_ok());
    s.terminal = None;
    let msg = s.validate().unwrap_err().to_string();
    assert!(msg.contains("terminal_cost required"), "{msg}");
    let mut s = ProblemSpec::mfp(CostModel::quadratic(0.1), gaussian(0.5), gaussian(0.5), 1.0);
    s.rho1 = None;
    assert!(s.validate().is_err());
}

#[test]
fn values_must_match_mesh() {
    let s = ProblemSpec::ot(DensityData::Values(vec![1.0; 3]), gaussian(0.5), 1.0);
    assert!(System::new(&s, &unit_mesh(1, 2, 2), 0).is_err());
    let s = ProblemSpec::ot(DensityData::Values(vec![1.0; 4]), gaussian(0.5), 1.0);
    assert!(System::new(&s, &unit_mesh(1, 2, 2), 1).is_ok());
}

#[test]
fn step_a_zero_rhs_mfg() {
    let spec = ProblemSpec::mfg(CostModel::quadratic(0.1), zero_density(), zero_density(), 1.0, 1.0);
    let sys = System::new(&spec, &unit_mesh(2, 3, 3), 1).unwrap();
    let mut st = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
    st.phi.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
    step_a(&mut st, &sys, &spec.solver).unwrap();
    assert!(st.phi.iter().all(|v| v.abs() < 1e-9), "{:?}", st.phi.iter().fold(0.0f64, |m, v| m.max(v.abs())));
}

#[test]
fn step_a_mfp_equal_densities_zero_multipliers() {
    let spec = ProblemSpec::mfp(CostModel::quadratic(0.1), gaussian(0.4), gaussian(0.4), 1.0);
    let sys = System::new(&spec, &unit_mesh(1, 4, 4), 2).unwrap();
    let mut st = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
    st.alpha.values.iter_mut().for_each(|v| *v = 0.0);
    // With α = 0 the load reduces to (ρ1, ψ(1)) − (ρ0, ψ(0)), which vanishes only on
    // spatially constant tests; use ρ0 = ρ1 = 0 for the exact zero case.
    let zero = ProblemSpec::mfp(CostModel::quadratic(0.1), zero_density(), zero_density(), 1.0);
    let sys0 = System::new(&zero, &unit_mesh(1, 4, 4), 2).unwrap();
    let mut st0 = Alg2State::initial(&sys0.disc, zero.mode, &sys0.data);
    step_a(&mut st0, &sys0, &zero.solver).unwrap();
    assert!(st0.phi.iter().all(|v| v.abs() < 1e-12));
    // Time-independent α0 = ρ0 is also an equilibrium: ⟨ρ0, ∂tψ⟩ = (ρ0, ψ(1) − ψ(0)).
    let mut st = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
    step_a(&mut st, &sys, &spec.solver).unwrap();
    assert!(st.phi.iter().all(|v| v.abs() < 1e-9));
    let mean: f64 = st.phi.iter().sum::<f64>() / st.phi.len() as f64;
    assert!(mean.abs() < 1e-14);
}

#[test]
fn step_a_manufactured_gradient() {
    // α* = ∇g, α = 0, r1 = 1, homogeneous data: φ = g up to a constant, modulo
    // discretization error that falls with refinement.
    let g = |t: f64, x: &[f64]| (std::f64::consts::PI * t).sin() * (std::f64::consts::PI * x[0]).cos() + t * x[0];
    let dg = |t: f64, x: &[f64]| {
        let pi = std::f64::consts::PI;
        vec![
            pi * (pi * t).cos() * (pi * x[0]).cos() + x[0],
            -pi * (pi * t).sin() * (pi * x[0]).sin() + t,
        ]
    };
    let mut errs = Vec::new();
    for n in [4, 8] {
        let spec = ProblemSpec::ot(zero_density(), zero_density(), 1.0);
        let sys = System::new(&spec, &unit_mesh(1, n, n), 1).unwrap();
        let mut st = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
        st.alpha.values.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..sys.disc.w.n_dofs() {
            let c = sys.disc.w.coords(p);
            st.alpha_star.values[2 * p..2 * p + 2].copy_from_slice(&dg(c[0], &c[1..]));
        }
        step_a(&mut st, &sys, &spec.solver).unwrap();
        let gi = sys.disc.v.interpolate(g);
        let shift = (gi.iter().sum::<f64>() - st.phi.iter().sum::<f64>()) / gi.len() as f64;
        let e = st
            .phi
            .iter()
            .zip(&gi)
            .map(|(a, b)| (a + shift - b).abs())
            .fold(0.0, f64::max);
        errs.push(e);
    }
    assert!(errs[1] < 1e-3, "{errs:?}");
    assert!(errs[1] < errs[0] / 4.0, "{errs:?}");
}

#[test]
fn step_b_zero_input_case_1() {
    let spec = ProblemSpec::ot(zero_density(), zero_density(), 1.0);
    let sys = System::new(&spec, &unit_mesh(1, 2, 2), 1).unwrap();
    let mut st = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
    st.alpha_star.values.iter_mut().for_each(|v| *v = 3.0);
    let grad = sys.disc.gradv_at_points(&st.phi);
    step_b(&mut st, &sys, &spec, &grad, None).unwrap();
    assert!(st.alpha_star.values.iter().all(|&v| v == 0.0));
}

#[test]
fn step_b_single_point_quadratic_matches_grid_search() {
    let cost = CostModel::quadratic(0.1);
    let spec = ProblemSpec::mfp(cost, DensityData::Values(vec![0.7]), DensityData::Values(vec![0.3]), 1.5);
    let sys = System::new(&spec, &unit_mesh(1, 1, 1), 0).unwrap();
    assert_eq!(sys.disc.w.n_dofs(), 1);
    let mut st = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
    st.alpha.values = vec![0.9, -0.4];
    let grad = vec![0.2, 0.1];
    step_b(&mut st, &sys, &spec, &grad, None).unwrap();
    let b = [0.9 + 1.5 * 0.2, -0.4 + 1.5 * 0.1];
    // Coarse-to-fine grid search of the prox objective.
    let f = |a: &[f64]| prox_alpha_objective(&cost, a, &b, 1.5);
    let (mut c, mut h) = ([0.0, 0.0], 1.0);
    while h > 1e-9 {
        let mut best = (f(&c), c);
        for i in -10..=10 {
            for j in -10..=10 {
                let p = [c[0] + i as f64 * h / 10.0, c[1] + j as f64 * h / 10.0];
                let v = f(&p);
                if v < best.0 {
                    best = (v, p);
                }
            }
        }
        c = best.1;
        h *= 0.5;
    }
    let a = &st.alpha_star.values;
    assert!((a[0] - c[0]).abs() < 1e-6 && (a[1] - c[1]).abs() < 1e-6, "{a:?} vs {c:?}");
    assert!(f(a) <= f(&c) + 1e-12);
}

#[test]
fn step_b_is_schedule_independent() {
    let spec = ProblemSpec::mfp(CostModel::entropy(0.1), gaussian(0.3), gaussian(0.7), 1.0);
    let sys = System::new(&spec, &unit_mesh(2, 4, 4), 1).unwrap();
    let mut st = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
    st.phi = sys.disc.v.interpolate(|t, x| (3.0 * t).sin() + x[0] * x[1] - x[1]);
    let grad = sys.disc.gradv_at_points(&st.phi);
    let mut a = st.clone();
    step_b(&mut a, &sys, &spec, &grad, None).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut b = st.clone();
    pool.install(|| step_b(&mut b, &sys, &spec, &grad, None)).unwrap();
    assert_eq!(a.alpha_star.values, b.alpha_star.values);
}

#[test]
fn step_b_reports_failure_coordinates() {
    let spec = ProblemSpec::mfp(CostModel::quadratic(0.1), gaussian(0.3), gaussian(0.7), 1.0);
    let sys = System::new(&spec, &unit_mesh(1, 2, 2), 0).unwrap();
    let mut st = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
    let mut grad = vec![0.0; st.alpha.values.len()];
    grad[2] = f64::NAN;
    match step_b(&mut st, &sys, &spec, &grad, None) {
        Err(Error::Prox { failures }) => {
            assert_eq!(failures.len(), 1);
            assert_eq!(failures[0].coords, sys.disc.w.coords(1));
        }
        other => panic!("expected prox failure, got {:?}", other.err()),
    }
}

#[test]
fn step_c_zero_residual_and_monitor_scan() {
    let spec = ProblemSpec::mfg(CostModel::quadratic(0.1), gaussian(0.3), gaussian(0.6), 1.3, 0.7);
    let sys = System::new(&spec, &unit_mesh(2, 3, 2), 1).unwrap();
    let mut st = Alg2State::initial(&sys.disc, spec.mode, &sys.data);
    st.phi = sys.disc.v.interpolate(|t, x| t * t - x[0] + 0.3 * x[1] * t);
    let grad = sys.disc.gradv_at_points(&st.phi);
    let phi1 = sys.disc.end.eval_at_m_points(&sys.disc.v, &sys.disc.m, &st.phi);

    // α* = ∇φ and ρ1* = −φ(1): no change.
    let mut z = st.clone();
    z.alpha_star.values = grad.clone();
    z.rho1_star = phi1.iter().map(|v| -v).collect();
    let before = z.clone();
    let (ea, er) = step_c(&mut z, &sys, &grad, Some(&phi1));
    assert_eq!((ea, er), (0.0, 0.0));
    assert_eq!(z.alpha, before.alpha);
    assert_eq!(z.rho1, before.rho1);

    step_b(&mut st, &sys, &spec, &grad, Some(&phi1)).unwrap();
    let before = st.clone();
    let (ea, er) = step_c(&mut st, &sys, &grad, Some(&phi1));
    let mut scan_a = 0.0f64;
    for i in 0..st.alpha.values.len() {
        scan_a = scan_a.max((st.alpha.values[i] - before.alpha.values[i]).abs());
    }
    let mut scan_r = 0.0f64;
    for i in 0..st.rho1.len() {
        scan_r = scan_r.max((st.rho1[i] - before.rho1[i]).abs());
    }
    // Each delta is formed once and added; the scan recomputes it by subtraction, so
    // compare against the deltas directly for exact equality.
    let mut exact_a = 0.0f64;
    for i in 0..grad.len() {
        exact_a = exact_a.max((1.3 * (grad[i] - st.alpha_star.values[i])).abs());
    }
    assert_eq!(ea, exact_a);
    assert!((ea - scan_a).abs() <= 1e-12 * ea.max(1.0));
    assert!((er - scan_r).abs() <= 1e-12 * er.max(1.0));
    assert_eq!((st.err_a, st.err_r), (ea, er));
}

#[test]
fn identity_transport_converges_immediately() {
    let spec = ProblemSpec {
        tol: 1e-8,
        ..ProblemSpec::ot(gaussian(0.5), gaussian(0.5), 1.0)
    };
    let res = run(&spec, &unit_mesh(1, 8, 4), 1).unwrap();
    assert!(res.converged);
    assert!(res.metrics.w2 <= 1e-6);
    let m_inf = (0..res.state.alpha.n_dofs())
        .map(|p| res.state.alpha.at(p)[1].abs())
        .fold(0.0, f64::max);
    assert!(m_inf <= 1e-3);
    assert!(res.metrics.mass_drift < 1e-12);
    assert!(res.metrics.l2_rho.is_none());

    // Fixed point: another Step A leaves φ unchanged.
    let sys = System::new(&spec, &unit_mesh(1, 8, 4), 1).unwrap();
    let mut st = res.state.clone();
    step_a(&mut st, &sys, &spec.solver).unwrap();
    for (a, b) in st.phi.iter().zip(&res.state.phi) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn traveling_wave_coarse_run() {
    let mut spec = traveling_wave(1);
    spec.tol = 1e-8;
    let res = run(&spec, &unit_mesh(1, 4, 4), 0).unwrap();
    assert!(res.converged, "{} iterations", res.iterations());
    let e = res.metrics.l2_rho.unwrap();
    // Coarsest row of the k = 0 family.
    assert!(e > 0.2068 / 2.0 && e < 0.2068 * 2.0, "{e}");
    assert_eq!(res.log.len(), res.iterations());
    assert!(res.log.windows(2).all(|w| w[1].iter == w[0].iter + 1));
}

#[test]
fn deterministic_flag_matches_parallel_run() {
    let mut spec = ProblemSpec::mfg(CostModel::quadratic(0.1), gaussian(0.3), gaussian(0.6), 1.0, 1.0);
    spec.tol = 1e-4;
    let mesh = unit_mesh(2, 4, 4);
    let a = run(&spec, &mesh, 1).unwrap();
    spec.deterministic = true;
    let b = run(&spec, &mesh, 1).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn mfg_terminal_kkt_bounded_by_monitor() {
    let mut spec = ProblemSpec::mfg(CostModel::quadratic(0.1), gaussian(0.3), gaussian(0.7), 1.0, 1.0);
    spec.tol = 1e-5;
    let res = run(&spec, &unit_mesh(1, 6, 6), 1).unwrap();
    assert!(res.converged);
    let kkt = res.metrics.kkt_terminal.unwrap();
    assert!(kkt <= res.state.err_r / spec.r2 + 1e-12, "{kkt} vs {}", res.state.err_r);
}

#[test]
fn iteration_cap_flags_non_convergence() {
    let mut spec = traveling_wave(1);
    spec.tol = 1e-14;
    spec.max_iter = 3;
    let res = run(&spec, &unit_mesh(1, 4, 4), 0).unwrap();
    assert!(!res.converged);
    assert_eq!(res.iterations(), 3);
    assert!(res.metrics.l2_rho.is_some());
}
