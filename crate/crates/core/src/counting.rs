//! Eigenvalue counting `N(μ)`, the cube-counting proxy `Ñ(μ)`, the
//! sandwich fit `Ñ(c₁μ) ≤ N(μ) ≤ Ñ(c₂μ)`, and the dyadic cube count `N₀`.

use std::io::Write;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::maximal::MaximalField;
use crate::operators::{Scalar, SparseOperator};
use crate::solvers::{lowest_eigenpairs, DEFAULT_EIGEN_TOL};

/// Operators up to this size are counted by a full dense decomposition.
pub const DENSE_COUNT_LIMIT: usize = 1500;
/// Largest number of eigenpairs requested from the iterative solver.
pub const MAX_COUNT_PAIRS: usize = 600;
/// Work budget (`n·b²`, with `b` the half-bandwidth) below which larger
/// operators are counted by inertia instead of by eigenpairs.
pub const INERTIA_WORK_LIMIT: f64 = 2.0e11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct EigenCount {
    pub count: usize,
    /// Set when the cap was reached before an eigenvalue `≥ μ` was seen; the
    /// count is then a lower bound.
    pub lower_bound_only: bool,
}

fn all_eigenvalues<T: Scalar>(m: &SparseOperator<T>) -> Vec<f64> {
    let d = m.to_dense();
    let herm = (&d + d.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = SymmetricEigen::new(herm).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Counts for several thresholds from one spectrum computation.
pub fn count_eigenvalues_sweep<T: Scalar>(m: &SparseOperator<T>, mus: &[f64]) -> Result<Vec<EigenCount>> {
    if !m.is_self_adjoint() {
        return Err(Error::InvalidParameter("counting needs a symmetric or Hermitian operator".into()));
    }
    let top = mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = m.dim();
    let b = half_bandwidth(m) as f64;
    if n > DENSE_COUNT_LIMIT && n as f64 * b * b <= INERTIA_WORK_LIMIT {
        return Ok(mus
            .iter()
            .map(|&mu| EigenCount { count: inertia_count(m, mu), lower_bound_only: false })
            .collect());
    }
    let (values, complete) = if n <= DENSE_COUNT_LIMIT {
        (all_eigenvalues(m), true)
    } else {
        let mut k = 16.min(n);
        loop {
            let res = lowest_eigenpairs(m, k, DEFAULT_EIGEN_TOL)?;
            if !res.converged {
                log::warn!("eigensolver did not fully converge while counting ({k} pairs)");
            }
            let last = *res.eigenvalues.last().expect("k ≥ 1");
            if last >= top || k == n {
                break (res.eigenvalues, true);
            }
            if k >= MAX_COUNT_PAIRS.min(n) {
                break (res.eigenvalues, false);
            }
            k = (2 * k).min(MAX_COUNT_PAIRS).min(n);
        }
    };
    Ok(mus
        .iter()
        .map(|&mu| {
            let count = values.iter().filter(|&&e| e < mu).count();
            EigenCount { count, lower_bound_only: !complete && count == values.len() }
        })
        .collect())
}

/// Largest `|i − j|` over the stored entries.
pub fn half_bandwidth<T: Scalar>(m: &SparseOperator<T>) -> usize {
    (0..m.dim()).flat_map(|i| m.row(i).map(move |(j, _)| i.abs_diff(j))).max().unwrap_or(0)
}

/// Number of eigenvalues strictly below `mu`, read off as the number of
/// negative pivots of a banded `LDL*` factorization of `M − μ` (Sylvester's
/// law of inertia). No pivoting is done; exactly vanishing pivots are nudged
/// to a tiny positive value.
pub fn inertia_count<T: Scalar>(m: &SparseOperator<T>, mu: f64) -> usize {
    let n = m.dim();
    if n == 0 {
        return 0;
    }
    let b = half_bandwidth(m);
    let w = b + 1;
    let scale = (0..n)
        .map(|i| m.row(i).map(|(_, v)| v.modulus()).sum::<f64>())
        .fold(mu.abs(), f64::max)
        .max(f64::MIN_POSITIVE);
    let tiny = 1e-14 * scale;
    // Ring buffer of `b + 1` rows; row `i` stores columns `i − b ..= i` at
    // offsets `0 ..= b`.
    let load = |i: usize, row: &mut Vec<T>| {
        row.iter_mut().for_each(|x| *x = T::zero());
        for (j, v) in m.row(i) {
            if j <= i {
                row[j + b - i] = v;
            }
        }
        row[b] -= T::from_real(mu);
    };
    let mut rows: Vec<Vec<T>> = vec![vec![T::zero(); w]; w];
    for i in 0..w.min(n) {
        load(i, &mut rows[i % w]);
    }
    let mut negative = 0;
    let mut l = vec![T::zero(); w];
    for j in 0..n {
        let mut d = rows[j % w][b].real();
        if d.abs() < tiny {
            d = tiny;
        }
        if d < 0.0 {
            negative += 1;
        }
        let last = (j + b).min(n - 1);
        // l[i − j] = a(i, j) / d for the rows below the pivot.
        for i in j + 1..=last {
            l[i - j] = rows[i % w][j + b - i].unscale(d);
        }
        let lref = &l;
        rows.par_iter_mut().enumerate().for_each(|(slot, row)| {
            // Recover the row index held in this slot within (j, last].
            let i = j + 1 + (slot + w - (j + 1) % w) % w;
            if i > last {
                return;
            }
            let li = lref[i - j].scale(d);
            if li == T::zero() {
                return;
            }
            for k in j + 1..=i {
                let lk = lref[k - j];
                row[k + b - i] -= li * lk.conjugate();
            }
        });
        if j + w < n {
            load(j + w, &mut rows[j % w]);
        }
    }
    negative
}

/// Number of eigenvalues strictly below `mu`.
pub fn count_eigenvalues<T: Scalar>(m: &SparseOperator<T>, mu: f64) -> Result<EigenCount> {
    Ok(count_eigenvalues_sweep(m, &[mu])?[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CubeCount {
    pub count: usize,
    pub cubes: usize,
    /// Partial cubes at the far edges, excluded from the tiling.
    pub discarded: usize,
}

/// `Ñ(μ)`: tiles the grid box from its lower corner by disjoint half-open
/// cubes of side `1/√μ` and counts those with
/// `(⨍|B|^{n/2})^{2/n} + (⨍V^{n/2})^{2/n} < μ`, averages taken over the nodes
/// inside each cube.
pub fn cube_counting(b_abs: &ScalarField, v: &ScalarField, mu: f64) -> Result<CubeCount> {
    let g = *v.grid();
    if b_abs.grid() != &g {
        return Err(Error::InvalidField("|B| and V live on different grids".into()));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("threshold {mu} must be positive")));
    }
    if v.min() < 0.0 || b_abs.min() < 0.0 {
        return Err(Error::InvalidField("cube counting needs nonnegative fields".into()));
    }
    let side = 1.0 / mu.sqrt();
    if side < 2.0 * g.h() * (1.0 - 1e-12) {
        return Err(Error::BelowResolution(format!("cube side {side:.4e} below 2h = {:.4e}", 2.0 * g.h())));
    }
    let dim = g.dim();
    let p = dim as f64 / 2.0;
    let up = g.upper();
    let mut per_axis = [1usize; 3];
    let mut partial = [false; 3];
    for a in 0..dim {
        let ext = (up[a] - g.origin()[a]) / side;
        per_axis[a] = (ext + 1e-9).floor() as usize;
        partial[a] = ext - per_axis[a] as f64 > 1e-9;
    }
    let cubes: usize = per_axis.iter().product();
    let with_partial: usize = (0..3).map(|a| per_axis[a] + partial[a] as usize).product();
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); cubes.max(1)];
    for node in 0..g.len() {
        let x = g.coords(node);
        let mut flat = 0usize;
        let mut inside = true;
        for a in 0..dim {
            let t = ((x[a] - g.origin()[a]) / side + 1e-9).floor() as usize;
            if t >= per_axis[a] {
                inside = false;
                break;
            }
            flat = flat * per_axis[a] + t;
        }
        if inside {
            let s = &mut sums[flat];
            s.0 += b_abs.get(node).powf(p);
            s.1 += v.get(node).powf(p);
            s.2 += 1;
        }
    }
    let count = sums
        .iter()
        .take(cubes)
        .filter(|s| s.2 > 0 && (s.0 / s.2 as f64).powf(1.0 / p) + (s.1 / s.2 as f64).powf(1.0 / p) < mu)
        .count();
    Ok(CubeCount { count, cubes, discarded: with_partial - cubes })
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichFit {
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub feasible: bool,
    /// Thresholds where no candidate constant worked.
    pub violations: Vec<f64>,
}

/// Candidate constants `2^{k/4}` for `k = -16..=16`.
pub fn sandwich_ladder() -> Vec<f64> {
    (-16..=16).map(|k| 2f64.powf(k as f64 / 4.0)).collect()
}

/// Largest `c₁` and smallest `c₂` on the ladder with
/// `Ñ(c₁μ) ≤ N(μ) ≤ Ñ(c₂μ)` at every sweep point. Candidates for which `Ñ`
/// cannot be evaluated at some point are skipped.
pub fn fit_sandwich_constants(mus: &[f64], counts: &[usize], ntilde: &dyn Fn(f64) -> Result<usize>) -> SandwichFit {
    let ladder = sandwich_ladder();
    let table: Vec<Vec<Option<usize>>> = ladder
        .iter()
        .map(|c| mus.iter().map(|mu| ntilde(c * mu).ok()).collect())
        .collect();
    let holds = |ci: usize, lower: bool| {
        table[ci].iter().zip(counts).all(|(t, &n)| match t {
            Some(t) if lower => *t <= n,
            Some(t) => n <= *t,
            None => false,
        })
    };
    let c1 = (0..ladder.len()).rev().find(|&i| holds(i, true)).map(|i| ladder[i]);
    let c2 = (0..ladder.len()).find(|&i| holds(i, false)).map(|i| ladder[i]);
    let mut violations = Vec::new();
    if c1.is_none() || c2.is_none() {
        for (j, &mu) in mus.iter().enumerate() {
            let lower_ok = (0..ladder.len()).any(|i| table[i][j].is_some_and(|t| t <= counts[j]));
            let upper_ok = (0..ladder.len()).any(|i| table[i][j].is_some_and(|t| counts[j] <= t));
            if !(lower_ok && upper_ok) {
                violations.push(mu);
            }
        }
    }
    SandwichFit { c1, c2, feasible: c1.is_some() && c2.is_some(), violations }
}

#[derive(Clone, Debug, Serialize)]
pub struct CountingReport {
    pub mu_grid: Vec<f64>,
    pub n: Vec<EigenCount>,
    pub ntilde: Vec<Option<usize>>,
    pub fit: SandwichFit,
    /// `Ñ` along the sweep must not decrease; thresholds where it does.
    pub ntilde_monotonicity_flags: Vec<f64>,
}

impl CountingReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# counting schema=1")?;
        writeln!(w, "mu,N,N_lower_bound_only,Ntilde")?;
        for ((mu, n), t) in self.mu_grid.iter().zip(&self.n).zip(&self.ntilde) {
            let t = t.map_or(String::from("NA"), |t| t.to_string());
            writeln!(w, "{mu},{},{},{t}", n.count, n.lower_bound_only)?;
        }
        Ok(())
    }
}

/// Runs the full sweep: `N` from the operator, `Ñ` from `ntilde`.
pub fn counting_report<T: Scalar>(m: &SparseOperator<T>, mus: &[f64], ntilde: &dyn Fn(f64) -> Result<usize>) -> Result<CountingReport> {
    let n = count_eigenvalues_sweep(m, mus)?;
    let counts: Vec<usize> = n.iter().map(|c| c.count).collect();
    let nt: Vec<Option<usize>> = mus.iter().map(|&mu| ntilde(mu).ok()).collect();
    let mut flags = Vec::new();
    for j in 1..mus.len() {
        if let (Some(a), Some(b)) = (nt[j - 1], nt[j]) {
            if mus[j] >= mus[j - 1] && b < a {
                flags.push(mus[j]);
            }
        }
    }
    let fit = fit_sandwich_constants(mus, &counts, ntilde);
    Ok(CountingReport { mu_grid: mus.to_vec(), n, ntilde: nt, fit, ntilde_monotonicity_flags: flags })
}

/// Parameters of the dyadic count.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DyadicParams {
    pub mu: f64,
    pub p: f64,
    pub c: f64,
    pub alpha: f64,
}

impl Default for DyadicParams {
    fn default() -> Self {
        DyadicParams { mu: 0.0, p: 2.0, c: 1.0, alpha: 0.5 }
    }
}

struct Cube {
    lower: [f64; 3],
    side: f64,
}

/// Node index range `[lo, hi)` of a half-open interval, closed at the grid's top.
fn node_range(g: &Grid, axis: usize, a: f64, b: f64) -> (usize, usize) {
    let h = g.h();
    let o = g.origin()[axis];
    let n = g.shape()[axis];
    let lo = ((a - o) / h - 1e-9).ceil().max(0.0) as usize;
    let top = g.upper()[axis];
    let hi = if (b - top).abs() <= 1e-9 * h.max(1.0) {
        n
    } else {
        (((b - o) / h - 1e-9).ceil().max(0.0) as usize).min(n)
    };
    (lo.min(n), hi)
}

fn nodes_in(g: &Grid, q: &Cube) -> Vec<usize> {
    let dim = g.dim();
    let mut ranges = [(0usize, 1usize); 3];
    for (a, r) in ranges.iter_mut().enumerate().take(dim) {
        *r = node_range(g, a, q.lower[a], q.lower[a] + q.side);
    }
    let mut out = Vec::new();
    for i in ranges[0].0..ranges[0].1 {
        for j in ranges[1].0..ranges[1].1 {
            for k in ranges[2].0..ranges[2].1 {
                out.push(g.index([i, j, k]));
            }
        }
    }
    out
}

/// `N₀`: number of minimal dyadic cubes (descendants of the grid box, side at
/// least `2h`) with `ℓ²(⨍|V|^p)^{1/p} ≥ c`, `ℓ < 1/√|μ|` for `μ < 0`, and
/// `ℓ < α / sup_Q m(·,|B|)`. A cube counts its satisfying descendants when it
/// has any, and itself otherwise. Without a maximal field (`|B| ≡ 0`) the last
/// condition is vacuous.
pub fn dyadic_n0(v: &ScalarField, m_of_b: Option<&MaximalField>, params: DyadicParams) -> Result<usize> {
    let g = *v.grid();
    if params.mu > 0.0 {
        return Err(Error::InvalidParameter("dyadic count needs mu ≤ 0".into()));
    }
    if !(params.p > 1.0) {
        return Err(Error::InvalidParameter("p must exceed 1".into()));
    }
    if let Some(m) = m_of_b {
        if m.m.grid() != &g {
            return Err(Error::InvalidField("maximal field lives on a different grid".into()));
        }
    }
    let up = g.upper();
    let side = up[0] - g.origin()[0];
    if (0..g.dim()).any(|a| ((up[a] - g.origin()[a]) - side).abs() > 1e-9 * side) {
        return Err(Error::InvalidGrid("dyadic count needs a cubic grid box".into()));
    }
    let mut lower = [0.0; 3];
    lower[..g.dim()].copy_from_slice(g.origin());
    let root = Cube { lower, side };
    Ok(count_cube(&g, v, m_of_b, &params, root))
}

fn satisfies(v: &ScalarField, m: Option<&MaximalField>, p: &DyadicParams, q: &Cube, nodes: &[usize]) -> bool {
    if nodes.is_empty() {
        return false;
    }
    let avg = nodes.iter().map(|&n| v.get(n).abs().powf(p.p)).sum::<f64>() / nodes.len() as f64;
    if q.side * q.side * avg.powf(1.0 / p.p) < p.c {
        return false;
    }
    if p.mu < 0.0 && q.side >= 1.0 / (-p.mu).sqrt() {
        return false;
    }
    if let Some(m) = m {
        let sup = nodes.iter().map(|&n| m.m.get(n)).fold(0.0, f64::max);
        if q.side >= p.alpha / sup {
            return false;
        }
    }
    true
}

fn count_cube(g: &Grid, v: &ScalarField, m: Option<&MaximalField>, p: &DyadicParams, q: Cube) -> usize {
    let half = 0.5 * q.side;
    let children: usize = if half >= 2.0 * g.h() * (1.0 - 1e-12) {
        let dim = g.dim();
        let corners: Vec<Cube> = (0..1usize << dim)
            .map(|bits| {
                let mut lower = q.lower;
                for (a, l) in lower.iter_mut().enumerate().take(dim) {
                    if bits >> a & 1 == 1 {
                        *l += half;
                    }
                }
                Cube { lower, side: half }
            })
            .collect();
        corners.into_par_iter().map(|c| count_cube(g, v, m, p, c)).sum()
    } else {
        0
    };
    if children > 0 {
        return children;
    }
    let nodes = nodes_in(g, &q);
    satisfies(v, m, p, &q, &nodes) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{assemble_real, MatrixField, RealOperator};

    #[test]
    fn diagonal_count() {
        let m = RealOperator::diagonal(&[1.0, 2.0, 3.0]);
        assert_eq!(count_eigenvalues(&m, 2.5).unwrap().count, 2);
    }

    #[test]
    fn dirichlet_laplacian_count() {
        let pi = std::f64::consts::PI;
        let g = Grid::new(&[201], pi / 200.0, &[0.0]).unwrap();
        let m = assemble_real(&g, &MatrixField::identity(1), &ScalarField::constant(g, 0.0)).unwrap();
        assert_eq!(count_eigenvalues(&m, 20.0).unwrap().count, 4);
    }

    #[test]
    fn inertia_matches_dense_spectrum() {
        let g = Grid::centered_cube(2, 2.0, 0.25).unwrap();
        let v = ScalarField::from_fn(g, |x| 3.0 * (x[0] * x[0] + 2.0 * x[1] * x[1])).unwrap();
        let m = assemble_real(&g, &MatrixField::identity(2), &v).unwrap();
        let ev = all_eigenvalues(&m);
        for mu in [0.0, 5.0, 20.0, 47.3, 150.0, 600.0] {
            let dense = ev.iter().filter(|&&e| e < mu).count();
            assert_eq!(inertia_count(&m, mu), dense, "mu = {mu}");
        }
    }

    #[test]
    fn zero_fields_count_every_cube() {
        let g = Grid::centered_cube(3, 2.0, 0.125).unwrap();
        let z = ScalarField::constant(g, 0.0);
        let r = cube_counting(&z, &z, 1.0).unwrap();
        assert_eq!(r, CubeCount { count: 64, cubes: 64, discarded: 0 });
        let r = cube_counting(&z, &z, 2.0).unwrap();
        // Side 1/√2: five cubes per axis, the sixth partial.
        assert_eq!(r.cubes, 125);
        assert_eq!(r.discarded, 216 - 125);
    }

    #[test]
    fn constant_potential_threshold() {
        let g = Grid::centered_cube(3, 2.0, 0.125).unwrap();
        let z = ScalarField::constant(g, 0.0);
        let v = ScalarField::constant(g, 3.0);
        assert_eq!(cube_counting(&z, &v, 4.0).unwrap().count, 64 * 8);
        assert_eq!(cube_counting(&z, &v, 2.0).unwrap().count, 0);
        assert!(cube_counting(&z, &v, 100.0).is_err());
    }

    #[test]
    fn sandwich_identity_and_infeasible() {
        let mus = [1.0f64, 2.0, 3.0, 5.0];
        let nt = |mu: f64| Ok((10.0 * mu).floor() as usize);
        let counts: Vec<usize> = mus.iter().map(|&m| (10.0 * m).floor() as usize).collect();
        let fit = fit_sandwich_constants(&mus, &counts, &nt);
        assert_eq!((fit.c1, fit.c2), (Some(1.0), Some(1.0)));
        let ones = |_: f64| Ok(1usize);
        let fit = fit_sandwich_constants(&mus, &[0, 0, 0, 0], &ones);
        assert!(!fit.feasible);
        assert_eq!(fit.violations.len(), 4);
    }

    fn well_field() -> ScalarField {
        let g = Grid::from_bounds(&[0.0; 3], &[2.0; 3], 1.0 / 16.0).unwrap();
        ScalarField::from_fn(g, |x| if x.iter().all(|&c| (0.5..1.0).contains(&c)) { -100.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn dyadic_hand_traced() {
        let v = well_field();
        let base = DyadicParams { mu: 0.0, p: 2.0, c: 1.0, alpha: 0.5 };
        // Side 1/8 cubes inside the well: ℓ²·100 = 1.5625 ≥ 1, and 4³ of them.
        assert_eq!(dyadic_n0(&v, None, base).unwrap(), 64);
        // With c = 2 the side 1/4 cubes are minimal: 6.25 ≥ 2 and 2³ of them.
        assert_eq!(dyadic_n0(&v, None, DyadicParams { c: 2.0, ..base }).unwrap(), 8);
        let z = v.map(|_| 0.0).unwrap();
        assert_eq!(dyadic_n0(&z, None, base).unwrap(), 0);
    }

    #[test]
    fn dyadic_alpha_limit() {
        let v = well_field();
        let g = *v.grid();
        let m = MaximalField {
            m: ScalarField::constant(g, 1.0),
            c1: 1.0,
            radius_tol: 1e-3,
            capped: vec![false; g.len()],
        };
        let p = DyadicParams { mu: 0.0, p: 2.0, c: 1.0, alpha: 1e-6 };
        assert_eq!(dyadic_n0(&v, Some(&m), p).unwrap(), 0);
    }
}
