//! Iterative linear solvers and a block Lanczos eigensolver.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::operators::{RealOperator, Scalar, SparseOperator};

pub const DEFAULT_LINEAR_TOL: f64 = 1e-10;
pub const DEFAULT_EIGEN_TOL: f64 = 1e-8;

/// Below this size eigenproblems are solved densely.
const DENSE_LIMIT: usize = 700;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ConjugateGradient,
    BiCgStab,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub wall_time_s: f64,
    pub method: Method,
    /// Set when conjugate gradients met a direction of nonpositive curvature
    /// and the general method took over.
    pub fallback: bool,
    /// Values of `½ x*Mx - Re(b*x)` after each CG step.
    #[serde(skip)]
    pub energy_log: Vec<f64>,
}

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.par_iter().zip(y).with_min_len(4096).map(|(a, b)| a.conjugate() * *b).reduce(T::zero, |a, b| a + b)
}

fn norm<T: Scalar>(x: &[T]) -> f64 {
    x.par_iter().with_min_len(4096).map(|a| a.modulus_squared()).sum::<f64>().sqrt()
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    y.par_iter_mut().zip(x).with_min_len(4096).for_each(|(yi, xi)| *yi += alpha * *xi);
}

fn jacobi<T: Scalar>(m: &SparseOperator<T>) -> Vec<T> {
    m.diag()
        .into_iter()
        .map(|d| if d.modulus() > 0.0 { T::one() / d } else { T::one() })
        .collect()
}

fn precondition<T: Scalar>(pinv: &[T], r: &[T]) -> Vec<T> {
    pinv.iter().zip(r).map(|(p, v)| *p * *v).collect()
}

/// Solves `M x = rhs`. Self-adjoint operators use Jacobi-preconditioned
/// conjugate gradients; if a search direction shows nonpositive curvature the
/// solve restarts with BiCGSTAB. General operators go straight to BiCGSTAB.
pub fn solve_linear<T: Scalar>(m: &SparseOperator<T>, rhs: &[T], tol: f64, max_iter: usize) -> Result<(Vec<T>, SolveReport)> {
    if rhs.len() != m.dim() {
        return Err(Error::InvalidParameter(format!("rhs length {} differs from operator size {}", rhs.len(), m.dim())));
    }
    if rhs.iter().any(|v| !v.modulus().is_finite()) {
        return Err(Error::InvalidParameter("rhs must be finite".into()));
    }
    let start = Instant::now();
    if m.is_self_adjoint() {
        match cg(m, rhs, tol, max_iter) {
            Ok((x, mut rep)) => {
                rep.wall_time_s = start.elapsed().as_secs_f64();
                return Ok((x, rep));
            }
            Err(()) => {
                log::debug!("conjugate gradients met nonpositive curvature, switching to BiCGSTAB");
                let (x, mut rep) = bicgstab(m, rhs, tol, max_iter);
                rep.fallback = true;
                rep.wall_time_s = start.elapsed().as_secs_f64();
                return Ok((x, rep));
            }
        }
    }
    let (x, mut rep) = bicgstab(m, rhs, tol, max_iter);
    rep.wall_time_s = start.elapsed().as_secs_f64();
    Ok((x, rep))
}

fn cg<T: Scalar>(m: &SparseOperator<T>, b: &[T], tol: f64, max_iter: usize) -> std::result::Result<(Vec<T>, SolveReport), ()> {
    let n = m.dim();
    let bnorm = norm(b);
    let mut rep = SolveReport {
        iterations: 0,
        relative_residual: 0.0,
        converged: true,
        wall_time_s: 0.0,
        method: Method::ConjugateGradient,
        fallback: false,
        energy_log: vec![0.0],
    };
    let mut x = vec![T::zero(); n];
    if bnorm == 0.0 {
        return Ok((x, rep));
    }
    let pinv = jacobi(m);
    let mut r = b.to_vec();
    let mut z = precondition(&pinv, &r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z).real();
    let mut q = vec![T::zero(); n];
    let mut res = 1.0;
    let mut best = (x.clone(), res);
    for it in 1..=max_iter {
        m.apply(&p, &mut q);
        let curv = dot(&p, &q).real();
        if !(curv > 0.0) {
            return Err(());
        }
        let alpha = rz / curv;
        axpy(T::from_real(alpha), &p, &mut x);
        axpy(T::from_real(-alpha), &q, &mut r);
        // Energy decrease per step is alpha * rz / 2.
        let last = *rep.energy_log.last().expect("seeded");
        rep.energy_log.push(last - 0.5 * alpha * rz);
        res = norm(&r) / bnorm;
        rep.iterations = it;
        if res < best.1 {
            best = (x.clone(), res);
        }
        if res <= tol {
            break;
        }
        z = precondition(&pinv, &r);
        let rz_new = dot(&r, &z).real();
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).with_min_len(4096).for_each(|(pi, zi)| *pi = *zi + pi.scale(beta));
    }
    rep.converged = res <= tol;
    if !rep.converged {
        x = best.0;
        res = best.1;
    }
    rep.relative_residual = res;
    Ok((x, rep))
}

fn bicgstab<T: Scalar>(m: &SparseOperator<T>, b: &[T], tol: f64, max_iter: usize) -> (Vec<T>, SolveReport) {
    let n = m.dim();
    let bnorm = norm(b);
    let mut rep = SolveReport {
        iterations: 0,
        relative_residual: 0.0,
        converged: true,
        wall_time_s: 0.0,
        method: Method::BiCgStab,
        fallback: false,
        energy_log: Vec::new(),
    };
    let mut x = vec![T::zero(); n];
    if bnorm == 0.0 {
        return (x, rep);
    }
    let pinv = jacobi(m);
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = T::one();
    let mut alpha = T::one();
    let mut omega = T::one();
    let mut v = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    let mut s = vec![T::zero(); n];
    let mut t = vec![T::zero(); n];
    let mut best = (x.clone(), 1.0);
    for it in 1..=max_iter {
        rep.iterations = it;
        let rho_new = dot(&r0, &r);
        if rho_new.modulus() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let phat = precondition(&pinv, &p);
        m.apply(&phat, &mut v);
        let denom = dot(&r0, &v);
        if denom.modulus() < 1e-300 {
            break;
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        axpy(alpha, &phat, &mut x);
        if norm(&s) / bnorm <= tol {
            r.copy_from_slice(&s);
            let res = norm(&r) / bnorm;
            best = (x.clone(), res);
            break;
        }
        let shat = precondition(&pinv, &s);
        m.apply(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt.modulus() < 1e-300 {
            break;
        }
        omega = dot(&t, &s) / tt;
        axpy(omega, &shat, &mut x);
        for i in 0..n {
            r[i] = s[i] - omega * t[i];
        }
        let res = norm(&r) / bnorm;
        if res < best.1 {
            best = (x.clone(), res);
        }
        if res <= tol || omega.modulus() < 1e-300 {
            break;
        }
    }
    // Recompute the true residual of the returned iterate.
    let (x, _) = best;
    let mx = m.mul(&x);
    let true_res = norm(&b.iter().zip(&mx).map(|(a, c)| *a - *c).collect::<Vec<_>>()) / bnorm;
    rep.relative_residual = true_res;
    rep.converged = true_res <= tol;
    (x, rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumResult<T> {
    pub eigenvalues: Vec<f64>,
    /// Normalized so that `hⁿ Σ|v|² = 1` when the operator carries a grid,
    /// otherwise to unit Euclidean norm.
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<T>>,
    /// `‖Mv - μv‖₂ / ‖v‖₂` for each returned pair.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub matvecs: usize,
}

fn random_vector<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let re = rng.gen::<f64>() - 0.5;
            let im = if T::IS_COMPLEX { rng.gen::<f64>() - 0.5 } else { 0.0 };
            T::from_parts(re, im)
        })
        .collect()
}

/// Orthogonalizes `w` against `basis` with two classical Gram–Schmidt passes
/// and normalizes it. Returns `None` if `w` lies numerically in the span.
fn orthonormalize<T: Scalar>(basis: &[Vec<T>], mut w: Vec<T>) -> Option<Vec<T>> {
    let n0 = norm(&w);
    if n0 == 0.0 {
        return None;
    }
    for _ in 0..2 {
        let coeffs: Vec<T> = basis.par_iter().map(|v| dot(v, &w)).collect();
        w.par_iter_mut().enumerate().with_min_len(1024).for_each(|(i, wi)| {
            let mut s = T::zero();
            for (v, c) in basis.iter().zip(&coeffs) {
                s += *c * v[i];
            }
            *wi -= s;
        });
    }
    let nw = norm(&w);
    if nw <= 1e-10 * n0 {
        return None;
    }
    let inv = 1.0 / nw;
    w.iter_mut().for_each(|x| *x = x.scale(inv));
    Some(w)
}

fn combine<T: Scalar>(basis: &[Vec<T>], coeffs: &DMatrix<T>, cols: usize) -> Vec<Vec<T>> {
    let n = basis.first().map_or(0, |v| v.len());
    (0..cols)
        .into_par_iter()
        .map(|c| {
            let mut out = vec![T::zero(); n];
            for (j, v) in basis.iter().enumerate() {
                let s = coeffs[(j, c)];
                for (o, x) in out.iter_mut().zip(v) {
                    *o += s * *x;
                }
            }
            out
        })
        .collect()
}

fn grid_weight<T: Scalar>(m: &SparseOperator<T>) -> f64 {
    m.dofs().map_or(1.0, |d| d.grid.cell_volume())
}

fn finish<T: Scalar>(m: &SparseOperator<T>, mut pairs: Vec<(f64, Vec<T>)>, converged: bool, matvecs: usize) -> SpectrumResult<T> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let w = grid_weight(m);
    let mut eigenvalues = Vec::new();
    let mut eigenvectors = Vec::new();
    let mut residuals = Vec::new();
    for (mu, mut v) in pairs {
        let mv = m.mul(&v);
        let r: Vec<T> = mv.iter().zip(&v).map(|(a, b)| *a - b.scale(mu)).collect();
        residuals.push(norm(&r) / norm(&v));
        let scale = 1.0 / (norm(&v) * w.sqrt());
        v.iter_mut().for_each(|x| *x = x.scale(scale));
        eigenvalues.push(mu);
        eigenvectors.push(v);
    }
    SpectrumResult { eigenvalues, eigenvectors, residuals, converged, matvecs }
}

fn dense_eigenpairs<T: Scalar>(m: &SparseOperator<T>, k: usize, tol: f64) -> SpectrumResult<T> {
    let d = m.to_dense();
    let herm = (&d + d.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let pairs: Vec<(f64, Vec<T>)> = order
        .into_iter()
        .take(k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    let mut res = finish(m, pairs, true, 0);
    res.converged = res.residuals.iter().all(|&r| r <= tol);
    res
}

/// The `k` smallest eigenpairs of a self-adjoint operator.
///
/// Small operators are diagonalized densely. Larger ones use block Lanczos
/// with full reorthogonalization and thick restarts: the projected matrix is
/// formed explicitly from the stored products `M V`, and a restart keeps the
/// lowest Ritz vectors and continues from their residuals. A pair counts as
/// converged when `‖M x - μ x‖ ≤ tol` for unit `x`.
pub fn lowest_eigenpairs<T: Scalar>(m: &SparseOperator<T>, k: usize, tol: f64) -> Result<SpectrumResult<T>> {
    lowest_eigenpairs_seeded(m, k, tol, 0x5eed)
}

pub fn lowest_eigenpairs_seeded<T: Scalar>(m: &SparseOperator<T>, k: usize, tol: f64, seed: u64) -> Result<SpectrumResult<T>> {
    if !m.is_self_adjoint() {
        return Err(Error::InvalidParameter("eigensolver needs a symmetric or Hermitian operator".into()));
    }
    let n = m.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("requested {k} eigenpairs of a size-{n} operator")));
    }
    let block = 8.min(n);
    let max_basis = (2 * (k + block)).max(k + 6 * block);
    if n <= DENSE_LIMIT || max_basis >= n / 2 {
        return Ok(dense_eigenpairs(m, k, tol));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(max_basis);
    let mut products: Vec<Vec<T>> = Vec::with_capacity(max_basis);
    let mut pending: Vec<Vec<T>> = Vec::new();
    while pending.len() < block {
        let all: Vec<Vec<T>> = basis.iter().chain(&pending).cloned().collect();
        if let Some(v) = orthonormalize(&all, random_vector(&mut rng, n)) {
            pending.push(v);
        }
    }
    let mut matvecs = 0usize;
    let max_restarts = 400;
    let mut last: Vec<(f64, Vec<T>)> = Vec::new();
    for _restart in 0..max_restarts {
        // Expand the basis block by block.
        while basis.len() + pending.len() <= max_basis && !pending.is_empty() {
            let block_vecs = std::mem::take(&mut pending);
            let mut block_products = Vec::with_capacity(block_vecs.len());
            for v in &block_vecs {
                block_products.push(m.mul(v));
                matvecs += 1;
            }
            basis.extend(block_vecs);
            products.extend(block_products.iter().cloned());
            if basis.len() + block > max_basis {
                break;
            }
            for w in block_products {
                let all: Vec<&Vec<T>> = basis.iter().chain(&pending).collect();
                let owned: Vec<Vec<T>> = all.into_iter().cloned().collect();
                if let Some(v) = orthonormalize(&owned, w) {
                    pending.push(v);
                }
            }
            while pending.len() < block {
                let owned: Vec<Vec<T>> = basis.iter().chain(&pending).cloned().collect();
                match orthonormalize(&owned, random_vector(&mut rng, n)) {
                    Some(v) => pending.push(v),
                    None => break,
                }
            }
        }
        // Rayleigh–Ritz on the explicit projection.
        let mb = basis.len();
        let mut h = DMatrix::from_element(mb, mb, T::zero());
        let cols: Vec<Vec<T>> = (0..mb).into_par_iter().map(|j| basis.iter().map(|v| dot(v, &products[j])).collect()).collect();
        for (j, col) in cols.into_iter().enumerate() {
            for (i, val) in col.into_iter().enumerate() {
                h[(i, j)] = val;
            }
        }
        let h = (&h + h.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..mb).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let keep = (k + block).min(mb);
        let s = DMatrix::from_fn(mb, keep, |i, c| eig.eigenvectors[(i, order[c])]);
        let theta: Vec<f64> = order.iter().take(keep).map(|&i| eig.eigenvalues[i]).collect();
        let ritz = combine(&basis, &s, keep);
        let ritz_products = combine(&products, &s, keep);
        let residuals: Vec<Vec<T>> = ritz_products
            .iter()
            .zip(&ritz)
            .zip(&theta)
            .map(|((av, y), th)| av.iter().zip(y).map(|(a, b)| *a - b.scale(*th)).collect())
            .collect();
        let rnorms: Vec<f64> = residuals.iter().map(|r| norm(r)).collect();
        let done = (0..k).all(|i| rnorms[i] <= 0.5 * tol);
        last = theta.iter().copied().zip(ritz.iter().cloned()).take(k).collect();
        if done {
            return Ok(finish(m, last, true, matvecs));
        }
        // Thick restart.
        basis = ritz;
        products = ritz_products;
        let mut order_res: Vec<usize> = (0..keep).filter(|&i| rnorms[i] > 0.5 * tol).collect();
        order_res.truncate(block);
        pending.clear();
        for i in order_res {
            let owned: Vec<Vec<T>> = basis.iter().chain(&pending).cloned().collect();
            if let Some(v) = orthonormalize(&owned, residuals[i].clone()) {
                pending.push(v);
            }
        }
        while pending.len() < block {
            let owned: Vec<Vec<T>> = basis.iter().chain(&pending).cloned().collect();
            match orthonormalize(&owned, random_vector(&mut rng, n)) {
                Some(v) => pending.push(v),
                None => break,
            }
        }
    }
    log::warn!("block Lanczos stopped after {max_restarts} restarts without full convergence");
    let mut res = finish(m, last, false, matvecs);
    res.converged = false;
    Ok(res)
}

/// Discrete Green column `G(·, y₀)`: solves `M g = h⁻ⁿ e_{y₀}` and extends by
/// zero to the boundary.
pub fn green_column(m: &RealOperator, source_node: usize, tol: f64) -> Result<(ScalarField, SolveReport)> {
    let dofs = m.dofs().ok_or_else(|| Error::InvalidParameter("operator carries no grid".into()))?;
    if source_node >= dofs.grid.len() {
        return Err(Error::InvalidParameter(format!("source node {source_node} outside the grid")));
    }
    let d = dofs
        .dof(source_node)
        .ok_or_else(|| Error::InvalidParameter("source must be an interior node".into()))?;
    let mut rhs = vec![0.0; m.dim()];
    rhs[d] = 1.0 / dofs.grid.cell_volume();
    let (g, rep) = solve_linear(m, &rhs, tol, 20 * m.dim() + 100)?;
    if !rep.converged {
        return Err(Error::Solver(format!("Green column solve stalled at residual {:.3e}", rep.relative_residual)));
    }
    Ok((dofs.scatter_field(&g)?, rep))
}

/// `(I + t² M)⁻¹ f`.
pub fn apply_resolvent<T: Scalar>(m: &SparseOperator<T>, t: f64, f: &[T], tol: f64) -> Result<(Vec<T>, SolveReport)> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("resolvent parameter {t} must be positive")));
    }
    let shifted = m.shifted(1.0, t * t);
    solve_linear(&shifted, f, tol, 20 * m.dim() + 100)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::operators::{assemble_real, MatrixField, Symmetry};

    /// Thomas algorithm for tridiagonal systems.
    fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = c[0] / b[0];
        dp[0] = d[0] / b[0];
        for i in 1..n {
            let den = b[i] - a[i] * cp[i - 1];
            cp[i] = c[i] / den;
            dp[i] = (d[i] - a[i] * dp[i - 1]) / den;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        x
    }

    #[test]
    fn identity_solve_is_one_step() {
        let m = RealOperator::identity(5);
        let mut e = vec![0.0; 5];
        e[0] = 1.0;
        let (x, rep) = solve_linear(&m, &e, 1e-12, 10).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(x, e);
    }

    #[test]
    fn tridiagonal_solve_matches_thomas() {
        let g = Grid::new(&[67], 1.0 / 66.0, &[0.0]).unwrap();
        let m = assemble_real(&g, &MatrixField::identity(1), &ScalarField::constant(g, 1.0)).unwrap();
        assert_eq!(m.dim(), 65);
        let rhs = vec![1.0; 65];
        let (x, rep) = solve_linear(&m, &rhs, 1e-13, 1000).unwrap();
        assert!(rep.converged);
        let n = 65;
        let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            b[i] = m.get(i, i);
            if i > 0 {
                a[i] = m.get(i, i - 1);
            }
            if i + 1 < n {
                c[i] = m.get(i, i + 1);
            }
        }
        let want = thomas(&a, &b, &c, &rhs);
        for (p, q) in x.iter().zip(&want) {
            assert!((p - q).abs() < 1e-10 * q.abs().max(1.0));
        }
        // Energy decreases monotonically.
        assert!(rep.energy_log.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()));
    }

    #[test]
    fn indefinite_falls_back() {
        // Eigenvalues 3 and -1; the first direction has negative curvature.
        let trips = vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)];
        let m = RealOperator::from_triplets(2, trips, Symmetry::Symmetric).unwrap();
        let (x, rep) = solve_linear(&m, &[1.0, -1.0], 1e-12, 100).unwrap();
        assert!(rep.fallback);
        assert_eq!(rep.method, Method::BiCgStab);
        assert!(rep.converged);
        assert!((x[0] + 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn general_matrix_uses_bicgstab() {
        let trips = vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 3.0), (2, 2, 2.0), (2, 1, 0.5)];
        let m = RealOperator::from_triplets(3, trips, Symmetry::General).unwrap();
        let (x, rep) = solve_linear(&m, &[1.0, 2.0, 3.0], 1e-12, 100).unwrap();
        assert_eq!(rep.method, Method::BiCgStab);
        let y = m.mul(&x);
        for (a, b) in y.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn diagonal_spectrum_dense_and_lanczos() {
        let d: Vec<f64> = (1..=2000).map(|i| i as f64).collect();
        let m = RealOperator::diagonal(&d);
        let res = lowest_eigenpairs(&m, 5, 1e-8).unwrap();
        assert!(res.converged);
        for (i, mu) in res.eigenvalues.iter().enumerate() {
            assert!((mu - (i + 1) as f64).abs() < 1e-8);
        }
        let small = RealOperator::diagonal(&d[..50]);
        let res = lowest_eigenpairs(&small, 3, 1e-8).unwrap();
        assert_eq!(res.eigenvalues, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn dirichlet_laplacian_first_eigenvalue() {
        let pi = std::f64::consts::PI;
        let mut errs = Vec::new();
        for cells in [64usize, 128] {
            let h = pi / cells as f64;
            let g = Grid::new(&[cells + 1], h, &[0.0]).unwrap();
            let m = assemble_real(&g, &MatrixField::identity(1), &ScalarField::constant(g, 0.0)).unwrap();
            let res = lowest_eigenpairs(&m, 2, 1e-9).unwrap();
            errs.push((res.eigenvalues[0] - 1.0).abs());
            assert!((res.eigenvalues[1] - 4.0).abs() < 0.01);
        }
        // Second-order convergence.
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn eigenvectors_are_weighted_unit() {
        let g = Grid::centered_cube(2, 1.0, 0.1).unwrap();
        let m = assemble_real(&g, &MatrixField::identity(2), &ScalarField::constant(g, 0.0)).unwrap();
        let res = lowest_eigenpairs(&m, 3, 1e-8).unwrap();
        for v in &res.eigenvectors {
            let s: f64 = v.iter().map(|x| x * x).sum::<f64>() * g.cell_volume();
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert!(res.residuals.iter().all(|r| *r <= 1e-8 * 10.0));
    }

    #[test]
    fn lanczos_handles_larger_grid() {
        let g = Grid::centered_cube(2, 1.0, 1.0 / 24.0).unwrap();
        let m = assemble_real(&g, &MatrixField::identity(2), &ScalarField::constant(g, 0.0)).unwrap();
        assert!(m.dim() > DENSE_LIMIT);
        let res = lowest_eigenpairs(&m, 4, 1e-8).unwrap();
        assert!(res.converged);
        // Discrete Dirichlet eigenvalues on (-1,1)²: (4/h²) Σ sin²(k_i π h / 4).
        let h = g.h();
        let lam = |k: f64| 4.0 / (h * h) * (k * std::f64::consts::PI * h / 4.0).sin().powi(2);
        let want = [2.0 * lam(1.0), lam(1.0) + lam(2.0), lam(1.0) + lam(2.0), 2.0 * lam(2.0)];
        for (mu, w) in res.eigenvalues.iter().zip(want) {
            assert!((mu - w).abs() < 1e-7 * w, "{mu} vs {w}");
        }
    }

    #[test]
    fn resolvent_diagonal_closed_form() {
        let d = [0.0, 1.0, 4.0];
        let m = RealOperator::diagonal(&d);
        let f = [1.0, 2.0, 3.0];
        let t = 0.7;
        let (x, _) = apply_resolvent(&m, t, &f, 1e-14).unwrap();
        for i in 0..3 {
            assert!((x[i] - f[i] / (1.0 + t * t * d[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn green_column_symmetric_and_nonnegative() {
        let g = Grid::centered_cube(2, 1.0, 0.125).unwrap();
        let m = assemble_real(&g, &MatrixField::identity(2), &ScalarField::constant(g, 1.0)).unwrap();
        let a = g.nearest_node(&[0.25, 0.0]);
        let b = g.nearest_node(&[-0.375, 0.5]);
        let (ga, _) = green_column(&m, a, 1e-12).unwrap();
        let (gb, _) = green_column(&m, b, 1e-12).unwrap();
        assert!((ga.get(b) - gb.get(a)).abs() < 1e-9 * ga.max_abs());
        assert!(ga.min() >= -1e-12 * ga.max_abs());
        assert!(green_column(&m, 0, 1e-12).is_err());
    }
}
