//! Randomized invariants of the building blocks.

use landscape_core::agmon::{agmon_distance, agmon_distance_field};
use landscape_core::grid::{Grid, Region, ScalarField};
use landscape_core::operators::{assemble_magnetic, assemble_real, build_magnetic, MatrixField, Selection};
use landscape_core::potentials::{generate_example1_field, generate_potential, PotentialSpec, VectorPotentialSpec};
use landscape_core::solvers::apply_resolvent;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(g: Grid, seed: u64, lo: f64, hi: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn grid2(nx: usize, ny: usize) -> Grid {
    Grid::new(&[nx, ny], 0.25, &[-1.0, -0.5]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn integration_is_linear(nx in 3usize..12, ny in 3usize..12, s in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = grid2(nx, ny);
        let f = random_field(g, s, -1.0, 1.0);
        let h = random_field(g, s ^ 1, -1.0, 1.0);
        let comb = f.zip_map(&h, |x, y| a * x + b * y).unwrap();
        let r = Region::new(&[-0.8, -0.4], &[0.6, 1.7]);
        let lhs = comb.integrate(&r).value;
        let rhs = a * f.integrate(&r).value + b * h.integrate(&r).value;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn integration_is_additive_over_a_split(s in any::<u64>(), cut in -0.9f64..1.4) {
        let g = grid2(11, 9);
        let f = random_field(g, s, 0.0, 2.0);
        let whole = f.integrate(&Region::new(&[-1.0, -0.5], &[1.5, 1.5])).value;
        let left = f.integrate(&Region::new(&[-1.0, -0.5], &[cut, 1.5])).value;
        let right = f.integrate(&Region::new(&[cut, -0.5], &[1.5, 1.5])).value;
        prop_assert!((whole - left - right).abs() <= 1e-12 * whole.abs());
    }

    #[test]
    fn ball_average_of_constant(c in -5.0f64..5.0, x in -0.5f64..0.5, y in -0.5f64..0.5, r in 0.25f64..2.0) {
        let g = Grid::centered_cube(2, 1.0, 0.125).unwrap();
        let f = ScalarField::constant(g, c);
        let avg = f.ball_average(&[x, y], r).unwrap();
        prop_assert!((avg - c).abs() <= 1e-12 * (1.0 + c.abs()));
    }

    #[test]
    fn discrete_diamagnetic_inequality(re in prop::array::uniform4(-10.0f64..10.0), theta in -10.0f64..10.0) {
        let fx = Complex64::new(re[0], re[1]);
        let fy = Complex64::new(re[2], re[3]);
        let link = (fx - Complex64::from_polar(1.0, theta) * fy).norm();
        prop_assert!((fx.norm() - fy.norm()).abs() <= link + 1e-12 * (fx.norm() + fy.norm()));
    }

    #[test]
    fn magnetic_operator_is_exactly_hermitian(b in -3.0f64..3.0, s in any::<u64>()) {
        let g = Grid::centered_cube(2, 1.0, 0.2).unwrap();
        let mag = build_magnetic(&VectorPotentialSpec::ConstantField { b: vec![b] }, &g, None).unwrap();
        let m = assemble_magnetic(&g, &mag.phases, &random_field(g, s, 0.0, 4.0)).unwrap();
        prop_assert_eq!(m.hermitian_defect(), 0.0);
    }

    #[test]
    fn agmon_distance_is_symmetric(s in any::<u64>(), x in 0usize..81, y in 0usize..81) {
        let g = Grid::centered_cube(2, 1.0, 0.25).unwrap();
        let w = random_field(g, s, 0.1, 5.0);
        let xy = agmon_distance(&w, None, x, y).unwrap();
        let yx = agmon_distance(&w, None, y, x).unwrap();
        prop_assert!((xy - yx).abs() <= 1e-10);
    }

    #[test]
    fn agmon_distance_is_monotone_in_the_weight(s in any::<u64>(), src in 0usize..81) {
        let g = Grid::centered_cube(2, 1.0, 0.25).unwrap();
        let w1 = random_field(g, s, 0.0, 3.0);
        let w2 = w1.zip_map(&random_field(g, s ^ 7, 0.0, 2.0), |a, b| a + b).unwrap();
        let r1 = agmon_distance_field(&w1, None, &[src]).unwrap().rho;
        let r2 = agmon_distance_field(&w2, None, &[src]).unwrap().rho;
        for n in 0..g.len() {
            prop_assert!(r1.get(n) <= r2.get(n) + 1e-10);
        }
    }

    #[test]
    fn distance_to_a_set_is_the_minimum(s in any::<u64>(), set in prop::collection::vec(0usize..81, 1..5)) {
        let g = Grid::centered_cube(2, 1.0, 0.25).unwrap();
        let w = random_field(g, s, 0.1, 5.0);
        let joint = agmon_distance_field(&w, None, &set).unwrap().rho;
        let singles: Vec<ScalarField> = set.iter().map(|&e| agmon_distance_field(&w, None, &[e]).unwrap().rho).collect();
        for n in 0..g.len() {
            let best = singles.iter().map(|r| r.get(n)).fold(f64::INFINITY, f64::min);
            prop_assert!((joint.get(n) - best).abs() <= 1e-10);
        }
    }
}

#[test]
fn agmon_triangle_inequality_on_random_triples() {
    let g = Grid::centered_cube(2, 1.5, 0.25).unwrap();
    let w = random_field(g, 3, 0.1, 5.0);
    let fields: Vec<ScalarField> = (0..g.len()).map(|s| agmon_distance_field(&w, None, &[s]).unwrap().rho).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let (x, y, z) = (rng.gen_range(0..g.len()), rng.gen_range(0..g.len()), rng.gen_range(0..g.len()));
        // Exact shortest paths on one graph: no quadrature slack is needed.
        assert!(fields[x].get(z) <= fields[x].get(y) + fields[y].get(z) + 1e-10);
    }
}

#[test]
fn resolvent_is_a_contraction() {
    let g = Grid::centered_cube(2, 1.0, 0.1).unwrap();
    let v = random_field(g, 9, 0.0, 10.0);
    let m = assemble_real(&g, &MatrixField::identity(2), &v).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let f: Vec<f64> = (0..m.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = rng.gen_range(0.01..3.0);
        let (x, rep) = apply_resolvent(&m, t, &f, 1e-12).unwrap();
        assert!(rep.converged);
        let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nf: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(nx <= nf * (1.0 + 1e-10), "t = {t}: {nx} > {nf}");
    }
}

#[test]
fn generated_field_is_antisymmetric() {
    let g = Grid::centered_cube(3, 1.0, 0.25).unwrap();
    let b = generate_example1_field(0.7, &g).unwrap().b;
    for n in 0..g.len() {
        for j in 0..3 {
            assert_eq!(b.get(n, j, j), 0.0);
            for k in 0..3 {
                assert_eq!(b.get(n, j, k), -b.get(n, k, j));
            }
        }
    }
}

#[test]
fn selection_count_is_a_power_of_two() {
    for (dim, expected) in [(2, 2), (3, 8)] {
        assert_eq!(Selection::count(dim), expected);
    }
}

#[test]
fn random_potentials_are_reproducible() {
    let g = Grid::centered_cube(3, 1.0, 0.25).unwrap();
    let spec = PotentialSpec::RandomUniform { low: 0.0, high: 2.0, seed: 42, density: 0.3 };
    assert_eq!(generate_potential(&spec, &g).unwrap(), generate_potential(&spec, &g).unwrap());
}
