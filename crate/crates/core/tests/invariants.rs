//! Module-level invariants on small deterministic instances.

use landscape_core::counting::{count_eigenvalues_sweep, cube_counting, dyadic_n0, DyadicParams};
use landscape_core::grid::{Grid, ScalarField};
use landscape_core::landscape::{fit_lower_bound, landscape_bounded, landscape_exhaustion_spec, ExhaustionSpec};
use landscape_core::maximal::{maximal_function, slow_variation};
use landscape_core::operators::{assemble_magnetic, assemble_real, build_magnetic, MatrixField};
use landscape_core::potentials::{generate_potential, PotentialSpec, VectorPotentialSpec, Well};
use landscape_core::solvers::{lowest_eigenpairs, solve_linear};
use landscape_core::verify::{check_uncertainty_nonmagnetic, TestFunctionSet};

fn quadratic() -> PotentialSpec {
    PotentialSpec::Power { alpha: 2.0, amplitude: 1.0, center: None }
}

#[test]
fn cg_energy_decreases() {
    let g = Grid::centered_cube(2, 2.0, 0.05).unwrap();
    let v = generate_potential(&quadratic(), &g).unwrap();
    let m = assemble_real(&g, &MatrixField::identity(2), &v).unwrap();
    let rhs = vec![1.0; m.dim()];
    let (_, rep) = solve_linear(&m, &rhs, 1e-12, 10_000).unwrap();
    assert!(rep.converged && !rep.fallback);
    assert!(rep.energy_log.len() > 10);
    for w in rep.energy_log.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn eigenpair_residuals_meet_tolerance() {
    let g = Grid::centered_cube(2, 3.0, 0.1).unwrap();
    let v = generate_potential(&quadratic(), &g).unwrap();
    let m = assemble_real(&g, &MatrixField::identity(2), &v).unwrap();
    let tol = 1e-8;
    let res = lowest_eigenpairs(&m, 6, tol).unwrap();
    assert!(res.converged);
    assert!(res.residuals.iter().all(|&r| r <= tol), "{:?}", res.residuals);
    // Two-dimensional oscillator levels 2, 4, 4, 6, 6, 6 up to O(h²) and box effects.
    for (mu, exact) in res.eigenvalues.iter().zip([2.0, 4.0, 4.0, 6.0, 6.0, 6.0]) {
        assert!((mu - exact).abs() < 0.02 * exact, "{mu} vs {exact}");
    }
}

#[test]
fn landau_ground_level() {
    let b = 0.2;
    let g = Grid::new(&[48, 48], 0.5, &[-11.75, -11.75]).unwrap();
    let mag = build_magnetic(&VectorPotentialSpec::ConstantField { b: vec![b] }, &g, None).unwrap();
    let m = assemble_magnetic(&g, &mag.phases, &ScalarField::constant(g, 0.0)).unwrap();
    let res = lowest_eigenpairs(&m, 1, 1e-8).unwrap();
    let mu = res.eigenvalues[0];
    assert!((mu - b).abs() <= 0.1 * b, "lowest eigenvalue {mu}");
}

#[test]
fn exhaustion_is_monotone_and_positive() {
    let spec = ExhaustionSpec { center: vec![0.0; 2], r0: 1.0, h: 0.125, stop_tol: 1e-6, max_stages: 4 };
    let res = landscape_exhaustion_spec(&spec, &MatrixField::identity(2), &quadratic()).unwrap();
    assert!(!res.diverged);
    assert!(res.monotonicity_defects.iter().all(|&d| d <= 1e-10), "{:?}", res.monotonicity_defects);
    assert!(res.min_interior > 0.0);
}

#[test]
fn landscape_lower_bound_fit_is_positive() {
    let g = Grid::centered_cube(2, 3.0, 0.1).unwrap();
    let v = generate_potential(
        &PotentialSpec::Wells { wells: vec![Well { center: vec![0.0, 0.0], radius: 1.0 }], inside: 0.5, outside: 4.0 },
        &g,
    )
    .unwrap();
    let u = landscape_bounded(&g, &MatrixField::identity(2), &v).unwrap().u;
    let fit = fit_lower_bound(&u, &v).unwrap();
    assert!(fit.positive && fit.balls > 0);
}

#[test]
fn maximal_function_scales_with_the_domain() {
    // w_s(x) = s² w(s x) on the grid shrunk by s has m_s(x) = s m(s x).
    let s = 2.0;
    let g = Grid::centered_cube(2, 4.0, 0.125).unwrap();
    let gs = Grid::centered_cube(2, 4.0 / s, 0.125 / s).unwrap();
    let w = ScalarField::from_fn(g, |x| 1.0 + x[0] * x[0] + 0.5 * x[1] * x[1]).unwrap();
    let ws = ScalarField::from_fn(gs, |x| s * s * (1.0 + s * s * x[0] * x[0] + 0.5 * s * s * x[1] * x[1])).unwrap();
    let m = maximal_function(&w, 1.0).unwrap();
    let ms = maximal_function(&ws, 1.0).unwrap();
    let mut compared = 0;
    for n in 0..g.len() {
        if m.capped[n] || ms.capped[n] {
            continue;
        }
        compared += 1;
        let rel = (ms.m.get(n) - s * m.m.get(n)).abs() / (s * m.m.get(n));
        assert!(rel < 1e-6, "node {n}: {} vs {}", ms.m.get(n), s * m.m.get(n));
    }
    assert!(compared > g.len() / 2);
}

#[test]
fn slow_variation_is_stable_for_a_polynomial_weight() {
    let mut constants = Vec::new();
    for h in [0.1, 0.05] {
        let g = Grid::centered_cube(2, 4.0, h).unwrap();
        let w = generate_potential(&quadratic(), &g).unwrap();
        let m = maximal_function(&w, 1.0).unwrap();
        let sv = slow_variation(&m.m, &m.capped, 400, 1);
        assert!(sv.balls > 0 && sv.constant.is_finite());
        constants.push(sv.constant);
    }
    let drift = (constants[1] - constants[0]).abs() / constants[0];
    assert!(drift <= 0.25, "{constants:?}");
}

#[test]
fn counts_are_monotone_along_the_sweep() {
    let g = Grid::centered_cube(2, 4.0, 0.2).unwrap();
    let v = generate_potential(&quadratic(), &g).unwrap();
    let m = assemble_real(&g, &MatrixField::identity(2), &v).unwrap();
    let mus = [1.0, 3.0, 5.0, 7.0, 11.0];
    let n: Vec<usize> = count_eigenvalues_sweep(&m, &mus).unwrap().iter().map(|c| c.count).collect();
    assert!(n.windows(2).all(|w| w[0] <= w[1]), "{n:?}");
    // Oscillator levels 2k + 2 with multiplicity k + 1.
    assert_eq!(n, vec![0, 1, 3, 6, 15]);
    let zero = ScalarField::constant(g, 0.0);
    for mu in [0.25, 0.5, 1.0, 2.0, 3.0] {
        let a = cube_counting(&zero, &v, mu).unwrap().count;
        let b = cube_counting(&zero, &v, 2.0 * mu).unwrap().count;
        assert!(a <= b, "mu {mu}: {a} > {b}");
    }
}

#[test]
fn dyadic_count_monotonicity() {
    let g = Grid::centered_cube(2, 4.0, 0.125).unwrap();
    let v = generate_potential(
        &PotentialSpec::Wells {
            wells: vec![Well { center: vec![-1.5, 0.0], radius: 0.8 }, Well { center: vec![1.5, 0.5], radius: 0.6 }],
            inside: -3.0,
            outside: 1.0,
        },
        &g,
    )
    .unwrap();
    let b_abs = ScalarField::from_fn(g, |x| 1.0 + x[0] * x[0] + x[1] * x[1]).unwrap();
    let m = maximal_function(&b_abs, 1.0).unwrap();
    let count = |c: f64, alpha: f64| dyadic_n0(&v, Some(&m), DyadicParams { mu: 0.0, p: 2.0, c, alpha }).unwrap();
    let cs = [0.25, 0.5, 1.0, 2.0, 4.0];
    let by_c: Vec<usize> = cs.iter().map(|&c| count(c, 2.0)).collect();
    assert!(by_c.windows(2).all(|w| w[0] >= w[1]), "{by_c:?}");
    let alphas = [0.5, 1.0, 2.0, 4.0, 8.0];
    let by_alpha: Vec<usize> = alphas.iter().map(|&a| count(1.0, a)).collect();
    assert!(by_alpha.windows(2).all(|w| w[0] <= w[1]), "{by_alpha:?}");
    assert!(by_c[0] > by_c[4] && by_alpha[4] > by_alpha[0], "{by_c:?} {by_alpha:?}");
}

#[test]
fn verification_reports_are_reproducible() {
    let g = Grid::centered_cube(2, 2.0, 0.125).unwrap();
    let v = generate_potential(&quadratic(), &g).unwrap();
    let a = MatrixField::identity(2);
    let u = landscape_bounded(&g, &a, &v).unwrap().u;
    let run = || {
        let fs = TestFunctionSet::bumps(&g, 10, 3, false, None).unwrap();
        check_uncertainty_nonmagnetic(&u, &a, &v, &fs, 1.0).unwrap().to_json().unwrap()
    };
    assert_eq!(run(), run());
}
