//! Invariants of the discretization, checked on randomized inputs.

use std::f64::consts::PI;

use proptest::prelude::*;

use levy_homog::bellman::{Control, DiscreteBellman, ProblemData};
use levy_homog::cell::{CellAssembler, CellOptions};
use levy_homog::effective::{solve_effective_parabolic, EffectiveSolver};
use levy_homog::grid::{GridFunction, TorusGrid};
use levy_homog::homog::{reference_initial, reference_instance, run_convergence_study, StudyOptions};
use levy_homog::kernels::{drift_correction, CheckOptions, KernelClass, KernelFamily, LevyKernel, ZFactor};
use levy_homog::trig::TrigSeries;

fn small_reference() -> ProblemData {
    reference_instance(16, 32, 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_csv_round_trip(values in prop::collection::vec(-1e3f64..1e3, 12)) {
        let g = TorusGrid::new(1, 12).unwrap();
        let f = GridFunction::new(g, values).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = GridFunction::read_csv(g, buf.as_slice()).unwrap();
        prop_assert_eq!(f.values(), back.values());
    }

    #[test]
    fn cache_purity_and_translation_invariance(node in 0usize..16, p in -2.0f64..2.0, c in -5.0f64..5.0) {
        let data = small_reference();
        let u = GridFunction::from_fn(data.slow, reference_initial).unwrap();
        let cached = EffectiveSolver::new(&data, CellOptions::default()).unwrap();
        let mut fresh = EffectiveSolver::new(&data, CellOptions::default()).unwrap();
        fresh.use_cache = false;
        let a = cached.eval(node, [p, 0.0], &u).unwrap();
        let b = cached.eval(node, [p, 0.0], &u).unwrap();
        let f = fresh.eval(node, [p, 0.0], &u).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(a.to_bits(), f.to_bits());
        let shifted = u.map(|v| v + c).unwrap();
        let s = cached.eval(node, [p, 0.0], &shifted).unwrap();
        prop_assert!((a - s).abs() <= 2.0 * 1e-6, "{} vs {}", a, s);
    }

    #[test]
    fn effective_step_is_monotone(node in 0usize..16, bump in 0.01f64..0.5) {
        let data = small_reference();
        let solver = EffectiveSolver::new(&data, CellOptions::default()).unwrap();
        let u = GridFunction::from_fn(data.slow, reference_initial).unwrap();
        let mut vals = u.values().to_vec();
        vals[node] += bump;
        let v = GridFunction::new(data.slow, vals).unwrap();
        // one explicit step at the largest admissible time step
        let probe = solve_effective_parabolic(&solver, &u, 1e-3, None, &[1e-3]).unwrap();
        let tau = probe.cfl.bound;
        let su = solve_effective_parabolic(&solver, &u, tau, Some(tau), &[tau]).unwrap();
        let sv = solve_effective_parabolic(&solver, &v, tau, Some(tau), &[tau]).unwrap();
        prop_assert_eq!(su.steps, 1);
        for i in 0..data.slow.len() {
            prop_assert!(sv.snapshots[0].at(i) >= su.snapshots[0].at(i) - 1e-6);
        }
    }

    #[test]
    fn oscillatory_scheme_is_nonexpansive(shift in prop::collection::vec(-0.5f64..0.5, 64)) {
        let data = small_reference();
        let g = TorusGrid::new(1, 64).unwrap();
        let scheme = DiscreteBellman::oscillatory(&data, g, 4).unwrap();
        let u = GridFunction::from_fn(g, reference_initial).unwrap();
        let v = u.axpby(1.0, &GridFunction::new(g, shift).unwrap(), 1.0).unwrap();
        let su = scheme.solve_parabolic(&u, 0.02, None, &[0.02]).unwrap();
        let sv = scheme.solve_parabolic(&v, 0.02, None, &[0.02]).unwrap();
        let before = u.values().iter().zip(v.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let after = su.snapshots[0].values().iter().zip(sv.snapshots[0].values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(after <= before + 1e-10);
    }
}

#[test]
fn study_errors_ignore_constant_shift_of_the_datum() {
    let data = small_reference();
    let opts = StudyOptions { points_per_period: 16, ..StudyOptions::default() };
    let a = run_convergence_study(&data, reference_initial, 0.05, &[0.25, 0.125], &opts).unwrap();
    let b = run_convergence_study(&data, |x| reference_initial(x) + 2.5, 0.05, &[0.25, 0.125], &opts).unwrap();
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        for (ea, eb) in ra.errors.iter().zip(&rb.errors) {
            assert!((ea - eb).abs() < 1e-5, "{ea} vs {eb}");
        }
    }
}

#[test]
fn identical_pair_keeps_zero_gap() {
    let data = small_reference();
    let solver = EffectiveSolver::new(&data, CellOptions::default()).unwrap();
    let u = GridFunction::from_fn(data.slow, reference_initial).unwrap();
    let a = solve_effective_parabolic(&solver, &u, 0.02, None, &[0.02]).unwrap();
    let b = solve_effective_parabolic(&solver, &u, 0.02, None, &[0.02]).unwrap();
    assert_eq!(a.snapshots[0].values(), b.snapshots[0].values());
}

/// For `K(z) = (1 + c z 1_{|z|<1}) / z²` the rescaled operator satisfies
/// `ε 𝓛_ε[ψ(·/ε)] = 𝓛₀ψ + D` with `D = c ε ∫_{|y|<1/ε} (ψ(ξ+y) − ψ(ξ) − ψ'(ξ) y)/y dy`.
/// Integrating `D` directly gives the extra drift `β` with `D ≈ −β ψ'`, which
/// must equal `b_K` and enter the cell drift as `b − b_K`.
#[test]
fn nonsymmetric_cell_drift_matches_the_rescaled_operator() {
    let c = 0.5;
    let eps = 1e-3;
    let psi = |x: f64| (2.0 * PI * x).sin();
    let dpsi = |x: f64| 2.0 * PI * (2.0 * PI * x).cos();
    let xi = 0.1;
    let half = 1.0 / eps;
    let steps = 2_000_000usize;
    let hstep = 2.0 * half / steps as f64;
    let mut d = 0.0;
    for k in 0..steps {
        let y = -half + (k as f64 + 0.5) * hstep;
        d += (psi(xi + y) - psi(xi) - dpsi(xi) * y) / y * hstep;
    }
    d *= c * eps;
    let beta = -d / dpsi(xi);

    let kernel = LevyKernel::new(
        1,
        KernelFamily::Separable { factors: vec![TrigSeries::constant(1.0)], z_factors: vec![ZFactor::Linear { axis: 0, c }] },
        1.0,
        4.0,
        1.0,
    )
    .unwrap();
    assert_eq!(kernel.class(), KernelClass::Kns);
    let b_k = drift_correction(&kernel, 0, &[0.0, 0.0], &CheckOptions::default()).unwrap().value[0];
    assert!((beta - b_k).abs() < 0.01 * b_k.abs(), "rescaled β = {beta}, b_K = {b_k}");

    let b = 0.3;
    let g = TorusGrid::new(1, 16).unwrap();
    let data = ProblemData::new(
        vec![Control::new(vec![TrigSeries::constant(b)], TrigSeries::constant(0.0))],
        kernel,
        g,
        TorusGrid::new(1, 32).unwrap(),
    )
    .unwrap();
    let cp = CellAssembler::new(&data).unwrap().build(0, [0.0, 0.0], &GridFunction::constant(g, 0.0), 0.5).unwrap();
    for drift in &cp.drifts[0] {
        assert!((drift[0] - (b - beta)).abs() < 0.01, "cell drift {} vs b − β = {}", drift[0], b - beta);
    }
}
