//! Sparse operators: the real divergence-form operator with Dirichlet
//! elimination, the magnetic operator built from edge phases, and the
//! selection-of-pairs machinery for antisymmetric fields.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{ComplexField, DMatrix, Matrix3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{pair_index, AntisymmetricField, Grid, ScalarField};
use crate::potentials::{example1_vector_potential, generate_example1_field, VectorPotentialSpec};

/// Field of scalars the solvers operate on: `f64` or `Complex64`.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {
    /// Marker used for Matrix Market headers.
    const IS_COMPLEX: bool;
    fn parts(self) -> (f64, f64);
    fn from_parts(re: f64, im: f64) -> Self;
}

impl Scalar for f64 {
    const IS_COMPLEX: bool = false;
    fn parts(self) -> (f64, f64) {
        (self, 0.0)
    }
    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
}

impl Scalar for Complex64 {
    const IS_COMPLEX: bool = true;
    fn parts(self) -> (f64, f64) {
        (self.re, self.im)
    }
    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    Symmetric,
    Hermitian,
    General,
}

/// Correspondence between interior grid nodes and unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct Dofs {
    pub grid: Grid,
    /// Grid node of each unknown.
    pub nodes: Vec<usize>,
    /// Unknown of each grid node, `usize::MAX` for boundary nodes.
    pub index_of: Vec<usize>,
}

impl Dofs {
    pub fn interior(grid: &Grid) -> Self {
        let nodes = grid.interior_nodes();
        let mut index_of = vec![usize::MAX; grid.len()];
        for (i, &n) in nodes.iter().enumerate() {
            index_of[n] = i;
        }
        Dofs { grid: *grid, nodes, index_of }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        let d = self.index_of[node];
        (d != usize::MAX).then_some(d)
    }

    /// Values at interior nodes.
    pub fn gather<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.nodes.iter().map(|&n| values[n]).collect()
    }

    /// Extends an unknown vector by zero to all grid nodes.
    pub fn scatter<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.grid.len()];
        for (&n, &v) in self.nodes.iter().zip(x) {
            out[n] = v;
        }
        out
    }

    pub fn scatter_field(&self, x: &[f64]) -> Result<ScalarField> {
        ScalarField::new(self.grid, self.scatter(x))
    }
}

/// Square sparse matrix in compressed-row storage.
#[derive(Clone, Debug)]
pub struct SparseOperator<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
    symmetry: Symmetry,
    dofs: Option<Arc<Dofs>>,
}

pub type RealOperator = SparseOperator<f64>;
pub type ComplexOperator = SparseOperator<Complex64>;

impl<T: Scalar> SparseOperator<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut trips: Vec<(usize, usize, T)>, symmetry: Symmetry) -> Result<Self> {
        if trips.iter().any(|t| t.0 >= n || t.1 >= n) {
            return Err(Error::InvalidParameter("triplet index out of range".into()));
        }
        trips.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trips.len());
        let mut vals: Vec<T> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            if last == Some((r, c)) {
                let l = vals.len() - 1;
                vals[l] += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseOperator { n, row_ptr, cols, vals, symmetry, dofs: None })
    }

    fn from_rows(rows: Vec<Vec<(usize, T)>>, symmetry: Symmetry, dofs: Option<Arc<Dofs>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(|r| r.len()).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for (c, v) in row {
                if c == last {
                    let l = vals.len() - 1;
                    vals[l] += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = c;
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator { n, row_ptr, cols, vals, symmetry, dofs }
    }

    pub fn diagonal(d: &[T]) -> Self {
        let symmetry = if d.iter().all(|v| v.imaginary() == 0.0) {
            if T::IS_COMPLEX {
                Symmetry::Hermitian
            } else {
                Symmetry::Symmetric
            }
        } else {
            Symmetry::General
        };
        let rows = d.iter().enumerate().map(|(i, &v)| vec![(i, v)]).collect();
        SparseOperator::from_rows(rows, symmetry, None)
    }

    pub fn identity(n: usize) -> Self {
        SparseOperator::diagonal(&vec![T::one(); n])
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }
    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }
    pub fn dofs(&self) -> Option<&Dofs> {
        self.dofs.as_deref()
    }
    pub fn with_dofs(mut self, dofs: Arc<Dofs>) -> Self {
        self.dofs = Some(dofs);
        self
    }
    /// Whether the operator is self-adjoint (symmetric real or Hermitian).
    pub fn is_self_adjoint(&self) -> bool {
        self.symmetry != Symmetry::General
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.cols[p], self.vals[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i).find(|e| e.0 == j).map(|e| e.1).unwrap_or_else(T::zero)
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = M x`, parallel over rows.
    pub fn apply(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.n);
        y.par_iter_mut().enumerate().with_min_len(256).for_each(|(i, yi)| {
            let mut s = T::zero();
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[p] * x[self.cols[p]];
            }
            *yi = s;
        });
    }

    pub fn mul(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.apply(x, &mut y);
        y
    }

    /// `alpha I + beta M`.
    pub fn shifted(&self, alpha: f64, beta: f64) -> Self {
        let rows = (0..self.n)
            .map(|i| {
                let mut r: Vec<(usize, T)> = self.row(i).map(|(c, v)| (c, v.scale(beta))).collect();
                r.push((i, T::from_real(alpha)));
                r
            })
            .collect();
        SparseOperator::from_rows(rows, self.symmetry, self.dofs.clone())
    }

    /// Largest `|M_ij - conj(M_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i).conjugate()).modulus());
            }
        }
        worst
    }

    /// Whether the sparsity pattern is structurally symmetric.
    pub fn pattern_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, _)| self.row(j).any(|(k, _)| k == i)))
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::from_element(self.n, self.n, T::zero());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Hermitian form `x* M y` (conjugate-linear in `x`).
    pub fn form(&self, x: &[T], y: &[T]) -> T {
        let my = self.mul(y);
        x.iter().zip(&my).fold(T::zero(), |acc, (a, b)| acc + a.conjugate() * *b)
    }

    /// Writes the operator in Matrix Market coordinate format (general
    /// storage, 1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        let field = if T::IS_COMPLEX { "complex" } else { "real" };
        writeln!(w, "%%MatrixMarket matrix coordinate {field} general")?;
        writeln!(w, "% symmetry flag: {:?}", self.symmetry)?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let (re, im) = v.parts();
                if T::IS_COMPLEX {
                    writeln!(w, "{} {} {:e} {:e}", i + 1, j + 1, re, im)?;
                } else {
                    writeln!(w, "{} {} {:e}", i + 1, j + 1, re)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_matrix_market<R: BufRead>(r: R, symmetry: Symmetry) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))??;
        let complex = header.contains("complex");
        if !header.starts_with("%%MatrixMarket matrix coordinate") || complex != T::IS_COMPLEX {
            return Err(Error::Parse(format!("unsupported header: {header}")));
        }
        let mut size: Option<usize> = None;
        let mut trips = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(line.to_string()));
            let idx = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(line.to_string()));
            if size.is_none() {
                size = Some(idx(t[0])?);
                continue;
            }
            let (i, j) = (idx(t[0])? - 1, idx(t[1])? - 1);
            let v = if complex { T::from_parts(num(t[2])?, num(t[3])?) } else { T::from_parts(num(t[2])?, 0.0) };
            trips.push((i, j, v));
        }
        SparseOperator::from_triplets(size.unwrap_or(0), trips, symmetry)
    }
}

/// Values of the coefficient matrix `A`.
#[derive(Clone, Debug, PartialEq)]
pub enum MatrixValues {
    Identity,
    Constant([[f64; 3]; 3]),
    PerNode(Vec<[[f64; 3]; 3]>),
}

/// Coefficient matrix `A(x)` with ellipticity constant `lambda`:
/// `lambda |ξ|² ≤ ξᵀ A ξ` and `‖A‖ ≤ 1/lambda` at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    dim: usize,
    values: MatrixValues,
    lambda: f64,
}

fn check_elliptic(dim: usize, a: &[[f64; 3]; 3], lambda: f64) -> Result<()> {
    let m = Matrix3::from_fn(|i, j| if i < dim && j < dim { a[i][j] } else if i == j { 1.0 } else { 0.0 });
    let sym = (m + m.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    let norm = m.svd(false, false).singular_values.max();
    let tol = 1e-12;
    if min_eig < lambda * (1.0 - tol) || norm > (1.0 + tol) / lambda {
        return Err(Error::Ellipticity(format!(
            "smallest symmetric eigenvalue {min_eig:.6}, norm {norm:.6}, lambda {lambda}"
        )));
    }
    Ok(())
}

impl MatrixField {
    pub fn identity(dim: usize) -> Self {
        MatrixField { dim, values: MatrixValues::Identity, lambda: 1.0 }
    }

    pub fn constant(dim: usize, a: [[f64; 3]; 3], lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("lambda {lambda} not in (0,1]")));
        }
        check_elliptic(dim, &a, lambda)?;
        Ok(MatrixField { dim, values: MatrixValues::Constant(a), lambda })
    }

    pub fn per_node(grid: &Grid, a: Vec<[[f64; 3]; 3]>, lambda: f64) -> Result<Self> {
        if a.len() != grid.len() {
            return Err(Error::InvalidField("one matrix per node required".into()));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("lambda {lambda} not in (0,1]")));
        }
        for m in &a {
            check_elliptic(grid.dim(), m, lambda)?;
        }
        Ok(MatrixField { dim: grid.dim(), values: MatrixValues::PerNode(a), lambda })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn values(&self) -> &MatrixValues {
        &self.values
    }

    pub fn at(&self, node: usize, i: usize, j: usize) -> f64 {
        match &self.values {
            MatrixValues::Identity => (i == j) as u8 as f64,
            MatrixValues::Constant(a) => a[i][j],
            MatrixValues::PerNode(v) => v[node][i][j],
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.values, MatrixValues::Identity)
    }

    pub fn is_diagonal(&self) -> bool {
        let diag = |a: &[[f64; 3]; 3]| (0..3).all(|i| (0..3).all(|j| i == j || a[i][j] == 0.0));
        match &self.values {
            MatrixValues::Identity => true,
            MatrixValues::Constant(a) => diag(a),
            MatrixValues::PerNode(v) => v.iter().all(diag),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        let sym = |a: &[[f64; 3]; 3]| (0..3).all(|i| (0..3).all(|j| a[i][j] == a[j][i]));
        match &self.values {
            MatrixValues::Identity => true,
            MatrixValues::Constant(a) => sym(a),
            MatrixValues::PerNode(v) => v.iter().all(sym),
        }
    }

    /// `d̂ᵀ A(node)⁻¹ d̂` for a unit vector `d̂`.
    pub fn inverse_quadratic(&self, node: usize, d: [f64; 3]) -> f64 {
        if self.is_identity() {
            return d.iter().map(|v| v * v).sum();
        }
        let n = self.dim;
        let m = Matrix3::from_fn(|i, j| if i < n && j < n { self.at(node, i, j) } else if i == j { 1.0 } else { 0.0 });
        let inv = m.try_inverse().unwrap_or_else(Matrix3::identity);
        let v = nalgebra::Vector3::new(d[0], d[1], d[2]);
        v.dot(&(inv * v))
    }
}

/// Real operator `-div A∇ + V` on interior nodes with Dirichlet elimination:
/// face-averaged diagonal coefficients and centered mixed derivatives.
pub fn assemble_real(grid: &Grid, a: &MatrixField, v: &ScalarField) -> Result<RealOperator> {
    if v.grid() != grid {
        return Err(Error::InvalidField("potential lives on a different grid".into()));
    }
    if a.dim() != grid.dim() {
        return Err(Error::InvalidParameter("coefficient dimension differs from grid".into()));
    }
    if let MatrixValues::PerNode(m) = a.values() {
        if m.len() != grid.len() {
            return Err(Error::InvalidField("coefficient field has the wrong node count".into()));
        }
    }
    if v.min() < 0.0 {
        return Err(Error::InvalidField(format!("potential must be nonnegative, min {}", v.min())));
    }
    let dofs = Arc::new(Dofs::interior(grid));
    let dim = grid.dim();
    let ih2 = 1.0 / (grid.h() * grid.h());
    let rows: Vec<Vec<(usize, f64)>> = dofs
        .nodes
        .par_iter()
        .map(|&x| {
            let mut row = Vec::with_capacity(2 * dim + 1 + 4 * dim * (dim - 1));
            let mut diag = v.get(x);
            for j in 0..dim {
                for s in [-1i64, 1] {
                    let y = grid.neighbor(x, j, s).expect("interior node has axis neighbors");
                    let face = 0.5 * (a.at(x, j, j) + a.at(y, j, j)) * ih2;
                    diag += face;
                    if let Some(dy) = dofs.dof(y) {
                        row.push((dy, -face));
                    }
                }
                for k in 0..dim {
                    if k == j {
                        continue;
                    }
                    for sj in [-1i64, 1] {
                        let mid = grid.neighbor(x, j, sj).expect("interior node");
                        let ajk = a.at(mid, j, k);
                        if ajk == 0.0 {
                            continue;
                        }
                        for sk in [-1i64, 1] {
                            let mut d = [0i64; 3];
                            d[j] = sj;
                            d[k] = sk;
                            if let Some(dy) = grid.offset(x, d).and_then(|y| dofs.dof(y)) {
                                row.push((dy, -(sj * sk) as f64 * ajk * 0.25 * ih2));
                            }
                        }
                    }
                }
            }
            row.push((dofs.index_of[x], diag));
            row
        })
        .collect();
    let symmetry = if a.is_symmetric() { Symmetry::Symmetric } else { Symmetry::General };
    Ok(SparseOperator::from_rows(rows, symmetry, Some(dofs)))
}

/// Peierls phases on positively oriented axis edges. The phase of the edge
/// `x → x + h e_axis` approximates the line integral of `a` along it.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePhaseField {
    grid: Grid,
    theta: Vec<f64>,
}

impl EdgePhaseField {
    pub fn zeros(grid: &Grid) -> Self {
        EdgePhaseField { grid: *grid, theta: vec![0.0; grid.len() * grid.dim()] }
    }

    /// Midpoint rule `θ = a((x+y)/2) · (y - x)`.
    pub fn from_vector_potential(grid: &Grid, a: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        let mut out = EdgePhaseField::zeros(grid);
        let h = grid.h();
        for node in 0..grid.len() {
            let x = grid.coords(node);
            for axis in 0..grid.dim() {
                if grid.neighbor(node, axis, 1).is_none() {
                    continue;
                }
                let mut mid = x;
                mid[axis] += 0.5 * h;
                let t = a(mid)[axis] * h;
                if !t.is_finite() {
                    return Err(Error::InvalidField(format!("non-finite phase at node {node}, axis {axis}")));
                }
                out.theta[node * grid.dim() + axis] = t;
            }
        }
        Ok(out)
    }

    /// Phases from node samples of each component, averaged over edge ends.
    pub fn from_node_samples(grid: &Grid, comps: &[ScalarField]) -> Result<Self> {
        if comps.len() != grid.dim() {
            return Err(Error::InvalidField("one component per axis required".into()));
        }
        let mut out = EdgePhaseField::zeros(grid);
        for node in 0..grid.len() {
            for axis in 0..grid.dim() {
                if let Some(nb) = grid.neighbor(node, axis, 1) {
                    let c = &comps[axis];
                    out.theta[node * grid.dim() + axis] = 0.5 * (c.get(node) + c.get(nb)) * grid.h();
                }
            }
        }
        Ok(out)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Phase of `node → node + e_axis`.
    pub fn phase(&self, node: usize, axis: usize) -> f64 {
        self.theta[node * self.grid.dim() + axis]
    }

    pub fn set_phase(&mut self, node: usize, axis: usize, value: f64) {
        let d = self.grid.dim();
        self.theta[node * d + axis] = value;
    }

    /// Phase of the oriented edge `from → to` between axis neighbors.
    pub fn oriented(&self, from: usize, to: usize) -> Option<f64> {
        for axis in 0..self.grid.dim() {
            if self.grid.neighbor(from, axis, 1) == Some(to) {
                return Some(self.phase(from, axis));
            }
            if self.grid.neighbor(from, axis, -1) == Some(to) {
                return Some(-self.phase(to, axis));
            }
        }
        None
    }

    /// Phases of `a + ∇Φ` with the gradient integrated exactly along edges.
    pub fn gauge_transform(&self, phi: &ScalarField) -> Result<Self> {
        if phi.grid() != &self.grid {
            return Err(Error::InvalidField("gauge field lives on a different grid".into()));
        }
        let mut out = self.clone();
        for node in 0..self.grid.len() {
            for axis in 0..self.grid.dim() {
                if let Some(nb) = self.grid.neighbor(node, axis, 1) {
                    out.theta[node * self.grid.dim() + axis] += phi.get(nb) - phi.get(node);
                }
            }
        }
        Ok(out)
    }
}

/// Hermitian magnetic operator: diagonal `2n/h² + V`; for the edge `x → y`
/// with phase `θ` the `(y, x)` entry is `-e^{iθ}/h²` and the `(x, y)` entry
/// its conjugate, so that the form is `Σ_edges |f_y - e^{iθ} f_x|²/h² + Σ V|f|²`.
pub fn assemble_magnetic(grid: &Grid, phases: &EdgePhaseField, v: &ScalarField) -> Result<ComplexOperator> {
    if phases.grid() != grid || v.grid() != grid {
        return Err(Error::InvalidField("phases and potential must live on the grid".into()));
    }
    if let Some(t) = phases.theta.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidField(format!("non-finite phase {t}")));
    }
    let dofs = Arc::new(Dofs::interior(grid));
    let dim = grid.dim();
    let ih2 = 1.0 / (grid.h() * grid.h());
    let rows: Vec<Vec<(usize, Complex64)>> = dofs
        .nodes
        .par_iter()
        .map(|&x| {
            let mut row = Vec::with_capacity(2 * dim + 1);
            row.push((dofs.index_of[x], Complex64::new(2.0 * dim as f64 * ih2 + v.get(x), 0.0)));
            for axis in 0..dim {
                let up = grid.neighbor(x, axis, 1).expect("interior");
                if let Some(d) = dofs.dof(up) {
                    // Row x, column y = x + e: conj of the (y, x) entry.
                    let t = phases.phase(x, axis);
                    row.push((d, Complex64::from_polar(ih2, -t) * -1.0));
                }
                let down = grid.neighbor(x, axis, -1).expect("interior");
                if let Some(d) = dofs.dof(down) {
                    let t = phases.phase(down, axis);
                    row.push((d, Complex64::from_polar(ih2, t) * -1.0));
                }
            }
            row
        })
        .collect();
    Ok(SparseOperator::from_rows(rows, Symmetry::Hermitian, Some(dofs)))
}

/// Plaquette circulation in the `(j, k)` plane with lower corner `x`,
/// traversed from `e_j` to `e_k`.
fn circulation(phases: &EdgePhaseField, x: usize, j: usize, k: usize) -> Option<f64> {
    let g = phases.grid();
    let xj = g.neighbor(x, j, 1)?;
    let xk = g.neighbor(x, k, 1)?;
    g.neighbor(xj, k, 1)?;
    Some(phases.phase(x, j) + phases.phase(xj, k) - phases.phase(xk, j) - phases.phase(x, k))
}

/// Field `b_jk = ∂a_j/∂x_k - ∂a_k/∂x_j` recovered from plaquette fluxes:
/// `b_jk = -Γ_jk/h²` averaged over the plaquettes touching each node.
pub fn discrete_field_from_phases(phases: &EdgePhaseField) -> Result<AntisymmetricField> {
    let g = *phases.grid();
    if g.dim() < 2 {
        return Err(Error::Unsupported("magnetic fields need dimension at least 2".into()));
    }
    let mut b = AntisymmetricField::zeros(g);
    let h2 = g.h() * g.h();
    for node in 0..g.len() {
        for j in 0..g.dim() {
            for k in j + 1..g.dim() {
                let mut sum = 0.0;
                let mut count = 0;
                for (dj, dk) in [(0, 0), (-1, 0), (0, -1), (-1, -1)] {
                    let mut d = [0i64; 3];
                    d[j] = dj;
                    d[k] = dk;
                    if let Some(corner) = g.offset(node, d) {
                        if let Some(c) = circulation(phases, corner, j, k) {
                            sum += c;
                            count += 1;
                        }
                    }
                }
                if count > 0 {
                    b.set(node, j, k, -sum / count as f64 / h2);
                }
            }
        }
    }
    Ok(b)
}

/// Phases and field of a magnetic instance.
#[derive(Clone, Debug)]
pub struct MagneticData {
    pub phases: EdgePhaseField,
    pub field: AntisymmetricField,
}

fn rotate(r: &[[f64; 3]; 3], x: [f64; 3], transpose: bool) -> [f64; 3] {
    let mut y = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            y[i] += if transpose { r[j][i] } else { r[i][j] } * x[j];
        }
    }
    y
}

/// Checks `R Rᵀ = I` on the leading `dim × dim` block.
pub fn validate_rotation(dim: usize, r: &[[f64; 3]; 3]) -> Result<()> {
    for i in 0..dim {
        for j in 0..dim {
            let dot: f64 = (0..dim).map(|k| r[i][k] * r[j][k]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-10 {
                return Err(Error::InvalidParameter("rotation is not orthonormal".into()));
            }
        }
    }
    Ok(())
}

/// Builds phases and field for a vector potential family. A rotation `R`
/// maps the potential to `y ↦ R a(Rᵀ y)`; for rotated tabulated or singular
/// fields the field is taken from the discrete plaquette fluxes.
pub fn build_magnetic(spec: &VectorPotentialSpec, grid: &Grid, rotation: Option<&[[f64; 3]; 3]>) -> Result<MagneticData> {
    let dim = grid.dim();
    spec.validate(dim)?;
    if let Some(r) = rotation {
        validate_rotation(dim, r)?;
    }
    let apply_rot = |a: &dyn Fn([f64; 3]) -> [f64; 3], y: [f64; 3]| -> [f64; 3] {
        match rotation {
            None => a(y),
            Some(r) => rotate(r, a(rotate(r, y, true)), false),
        }
    };
    match spec {
        VectorPotentialSpec::Zero => Ok(MagneticData { phases: EdgePhaseField::zeros(grid), field: AntisymmetricField::zeros(*grid) }),
        VectorPotentialSpec::ConstantField { b } => {
            let mut bm = [[0.0; 3]; 3];
            for j in 0..dim {
                for k in j + 1..dim {
                    let v = b[pair_index(dim, j, k)];
                    bm[j][k] = v;
                    bm[k][j] = -v;
                }
            }
            let a = move |x: [f64; 3]| {
                let mut out = [0.0; 3];
                for j in 0..3 {
                    for k in 0..3 {
                        out[j] += 0.5 * bm[j][k] * x[k];
                    }
                }
                out
            };
            let phases = EdgePhaseField::from_vector_potential(grid, |y| apply_rot(&a, y))?;
            // Rotated constant field R B Rᵀ.
            let rb = match rotation {
                None => bm,
                Some(r) => {
                    let mut out = [[0.0; 3]; 3];
                    for i in 0..3 {
                        for l in 0..3 {
                            for j in 0..3 {
                                for k in 0..3 {
                                    out[i][l] += r[i][j] * bm[j][k] * r[l][k];
                                }
                            }
                        }
                    }
                    out
                }
            };
            let mut field = AntisymmetricField::zeros(*grid);
            for node in 0..grid.len() {
                for j in 0..dim {
                    for k in j + 1..dim {
                        field.set(node, j, k, rb[j][k]);
                    }
                }
            }
            Ok(MagneticData { phases, field })
        }
        VectorPotentialSpec::Example1 { alpha } => {
            let al = *alpha;
            let a = move |x: [f64; 3]| example1_vector_potential(al, x);
            let phases = EdgePhaseField::from_vector_potential(grid, |y| apply_rot(&a, y))?;
            let field = if rotation.is_none() {
                generate_example1_field(al, grid)?.b
            } else {
                discrete_field_from_phases(&phases)?
            };
            Ok(MagneticData { phases, field })
        }
        VectorPotentialSpec::Table { paths } => {
            let mut comps = Vec::new();
            for p in paths {
                let file = std::fs::File::open(p)?;
                let (f, _) = ScalarField::read_csv(std::io::BufReader::new(file))?;
                if f.grid() != grid {
                    return Err(Error::InvalidField(format!("table {p} is defined on a different grid")));
                }
                comps.push(f);
            }
            let mut phases = EdgePhaseField::from_node_samples(grid, &comps)?;
            if let Some(r) = rotation {
                // Tabulated components are rotated as vectors at each node.
                let mut rotated = vec![Vec::with_capacity(grid.len()); dim];
                for node in 0..grid.len() {
                    let mut v = [0.0; 3];
                    for (c, comp) in comps.iter().enumerate() {
                        v[c] = comp.get(node);
                    }
                    let w = rotate(r, v, false);
                    for (c, out) in rotated.iter_mut().enumerate() {
                        out.push(w[c]);
                    }
                }
                let fields: Result<Vec<ScalarField>> = rotated.into_iter().map(|v| ScalarField::new(*grid, v)).collect();
                phases = EdgePhaseField::from_node_samples(grid, &fields?)?;
            }
            let field = discrete_field_from_phases(&phases)?;
            Ok(MagneticData { phases, field })
        }
    }
}

/// One ordered pair per unordered index pair. Bit `p` of `flips` set means
/// the pair with lexicographic index `p` is taken as `(k, j)` instead of `(j, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Selection {
    pub dim: usize,
    pub flips: u32,
}

impl Selection {
    pub fn count(dim: usize) -> usize {
        1 << (dim * (dim - 1) / 2)
    }

    /// Ordered pairs (0-based).
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.dim {
            for k in j + 1..self.dim {
                let p = pair_index(self.dim, j, k);
                out.push(if self.flips >> p & 1 == 1 { (k, j) } else { (j, k) });
            }
        }
        out
    }

    pub fn from_pairs(dim: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut flips = 0u32;
        let mut seen = vec![false; dim * (dim - 1) / 2];
        for &(j, k) in pairs {
            if j == k || j >= dim || k >= dim {
                return Err(Error::InvalidParameter(format!("bad pair ({j},{k})")));
            }
            let p = pair_index(dim, j.min(k), j.max(k));
            if seen[p] {
                return Err(Error::InvalidParameter("pair listed twice".into()));
            }
            seen[p] = true;
            if j > k {
                flips |= 1 << p;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter("every unordered pair must appear once".into()));
        }
        Ok(Selection { dim, flips })
    }

    /// `Σ_{(j,k) ∈ S} b_jk` at every node.
    pub fn sum(&self, b: &AntisymmetricField) -> ScalarField {
        let g = *b.grid();
        let pairs = self.pairs();
        let values = (0..g.len()).map(|n| pairs.iter().map(|&(j, k)| b.get(n, j, k)).sum()).collect();
        ScalarField::new(g, values).expect("finite field entries")
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.pairs().iter().map(|(j, k)| format!("({},{})", j + 1, k + 1)).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectionReport {
    pub candidates: usize,
    pub admissible: Vec<Selection>,
    /// Present when no component of the field changes sign; then `Σ_S B = |B|`.
    pub maximal: Option<Selection>,
    pub tolerance: f64,
}

/// Default admissibility tolerance `1e-12 · max|B|`.
pub fn selection_tolerance(b: &AntisymmetricField) -> f64 {
    1e-12 * b.max_abs()
}

pub fn enumerate_admissible_selections(b: &AntisymmetricField, v: &ScalarField) -> Result<SelectionReport> {
    let g = b.grid();
    let dim = g.dim();
    if !(2..=3).contains(&dim) {
        return Err(Error::Unsupported("selections need dimension 2 or 3".into()));
    }
    if v.grid() != g {
        return Err(Error::InvalidField("potential lives on a different grid".into()));
    }
    let tol = selection_tolerance(b);
    let candidates = Selection::count(dim);
    let mut admissible = Vec::new();
    for flips in 0..candidates as u32 {
        let s = Selection { dim, flips };
        let sum = s.sum(b);
        let ok = sum.values().iter().zip(v.values()).all(|(a, w)| a + w >= -tol);
        if ok {
            admissible.push(s);
        }
    }
    let mut flips = 0u32;
    let mut sign_definite = true;
    for j in 0..dim {
        for k in j + 1..dim {
            let c = b.component(j, k);
            let nonneg = c.iter().all(|&x| x >= -tol);
            let nonpos = c.iter().all(|&x| x <= tol);
            if !nonneg && nonpos {
                flips |= 1 << pair_index(dim, j, k);
            } else if !nonneg {
                sign_definite = false;
            }
        }
    }
    let maximal = sign_definite.then_some(Selection { dim, flips });
    Ok(SelectionReport { candidates, admissible, maximal, tolerance: tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn one_dimensional_stencil() {
        let g = Grid::new(&[6], 1.0, &[0.0]).unwrap();
        let m = assemble_real(&g, &MatrixField::identity(1), &ScalarField::constant(g, 0.0)).unwrap();
        assert_eq!(m.dim(), 4);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 2.0);
        assert_eq!(m.get(1, 2), -1.0);
        assert_eq!(m.symmetry(), Symmetry::Symmetric);
    }

    #[test]
    fn constant_vector_row_sums_vanish_inside() {
        let g = Grid::centered_cube(2, 1.0, 0.25).unwrap();
        let m = assemble_real(&g, &MatrixField::identity(2), &ScalarField::constant(g, 0.0)).unwrap();
        let y = m.mul(&vec![1.0; m.dim()]);
        let dofs = m.dofs().unwrap();
        for (i, &node) in dofs.nodes.iter().enumerate() {
            if g.distance_to_boundary(node) > 1.5 * g.h() {
                assert!(y[i].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn anisotropic_diagonal_matches_hand_assembly() {
        // 5x5 grid, h = 1: 3x3 interior unknowns ordered with the last axis fastest.
        let g = Grid::new(&[5, 5], 1.0, &[0.0, 0.0]).unwrap();
        let a = MatrixField::constant(2, [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 0.5).unwrap();
        let m = assemble_real(&g, &a, &ScalarField::constant(g, 0.0)).unwrap();
        let mut want = [[0.0f64; 9]; 9];
        for i in 0..3 {
            for j in 0..3 {
                let r = 3 * i + j;
                want[r][r] = 2.0 * 2.0 + 2.0 * 1.0;
                if i > 0 {
                    want[r][r - 3] = -2.0;
                }
                if i < 2 {
                    want[r][r + 3] = -2.0;
                }
                if j > 0 {
                    want[r][r - 1] = -1.0;
                }
                if j < 2 {
                    want[r][r + 1] = -1.0;
                }
            }
        }
        let dense = m.to_dense();
        for r in 0..9 {
            for c in 0..9 {
                assert_eq!(dense[(r, c)], want[r][c], "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn ellipticity_is_enforced() {
        let bad = [[0.1, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(MatrixField::constant(2, bad, 0.5).is_err());
        let big = [[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(MatrixField::constant(2, big, 0.5).is_err());
    }

    #[test]
    fn quadratic_reproduction_with_mixed_coefficients() {
        // A constant symmetric with off-diagonal entries; p = x0² + x0 x1 + 2 x1².
        let h = 0.125;
        let g = Grid::centered_cube(2, 1.0, h).unwrap();
        let am = [[1.0, 0.3, 0.0], [0.3, 0.8, 0.0], [0.0, 0.0, 1.0]];
        let a = MatrixField::constant(2, am, 0.4).unwrap();
        let v = ScalarField::constant(g, 0.5);
        let m = assemble_real(&g, &a, &v).unwrap();
        let p = |x: [f64; 3]| x[0] * x[0] + x[0] * x[1] + 2.0 * x[1] * x[1];
        // -div A∇p = -(2 a00 + 2 a01 + 4 a11) for this p.
        let lap = -(2.0 * am[0][0] + 2.0 * am[0][1] * 1.0 + 4.0 * am[1][1]);
        let dofs = m.dofs().unwrap();
        let pv: Vec<f64> = dofs.nodes.iter().map(|&n| p(g.coords(n))).collect();
        let y = m.mul(&pv);
        for (i, &node) in dofs.nodes.iter().enumerate() {
            if g.distance_to_boundary(node) > 1.5 * h {
                let want = lap + 0.5 * p(g.coords(node));
                assert!(close(y[i], want, 1e-9), "{} vs {}", y[i], want);
            }
        }
        assert_eq!(m.symmetry(), Symmetry::Symmetric);
        assert!(m.hermitian_defect() < 1e-12);
    }

    #[test]
    fn zero_phase_magnetic_equals_real_laplacian() {
        let g = Grid::centered_cube(2, 1.0, 0.25).unwrap();
        let v = ScalarField::from_fn(g, |x| x[0] * x[0]).unwrap();
        let mr = assemble_real(&g, &MatrixField::identity(2), &v).unwrap();
        let mc = assemble_magnetic(&g, &EdgePhaseField::zeros(&g), &v).unwrap();
        for i in 0..mr.dim() {
            for (j, val) in mr.row(i) {
                assert!((mc.get(i, j) - Complex64::new(val, 0.0)).norm() < 1e-12);
            }
        }
        assert_eq!(mc.hermitian_defect(), 0.0);
    }

    #[test]
    fn landau_plaquette_flux() {
        let b = 0.7;
        let g = Grid::centered_cube(2, 2.0, 0.25).unwrap();
        let data = build_magnetic(&VectorPotentialSpec::ConstantField { b: vec![b] }, &g, None).unwrap();
        let x = g.nearest_node(&[0.5, -0.25]);
        // Traversal from e_2 to e_1 carries e^{i b h²}.
        let c = -circulation(&data.phases, x, 0, 1).unwrap();
        let prod = Complex64::from_polar(1.0, c);
        let want = Complex64::from_polar(1.0, b * g.h() * g.h());
        assert!((prod - want).norm() < 1e-12);
        let rec = discrete_field_from_phases(&data.phases).unwrap();
        for n in 0..g.len() {
            assert!((rec.get(n, 0, 1) - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_phases_zero_field() {
        let g = Grid::centered_cube(3, 1.0, 0.5).unwrap();
        let b = discrete_field_from_phases(&EdgePhaseField::zeros(&g)).unwrap();
        assert_eq!(b.max_abs(), 0.0);
    }

    #[test]
    fn example1_phases_recover_field() {
        let h = 0.05;
        let g = Grid::from_bounds(&[0.5, 0.5, 0.5], &[1.5, 1.5, 1.5], h).unwrap();
        let data = build_magnetic(&VectorPotentialSpec::Example1 { alpha: 0.9 }, &g, None).unwrap();
        let rec = discrete_field_from_phases(&data.phases).unwrap();
        let node = g.nearest_node(&[1.0, 1.2, 0.8]);
        for (j, k) in [(0, 1), (1, 2), (2, 0)] {
            assert!((rec.get(node, j, k) - data.field.get(node, j, k)).abs() < 5.0 * h);
        }
    }

    #[test]
    fn selection_enumeration() {
        let g = Grid::centered_cube(2, 1.0, 0.5).unwrap();
        let mut b = AntisymmetricField::zeros(g);
        for n in 0..g.len() {
            b.set(n, 0, 1, 1.0);
        }
        let zero = ScalarField::constant(g, 0.0);
        let rep = enumerate_admissible_selections(&b, &zero).unwrap();
        assert_eq!(rep.candidates, 2);
        assert_eq!(rep.admissible.len(), 1);
        assert_eq!(rep.admissible[0].pairs(), vec![(0, 1)]);
        assert_eq!(rep.maximal, Some(rep.admissible[0]));

        let g3 = Grid::centered_cube(3, 1.0, 0.5).unwrap();
        let rep = enumerate_admissible_selections(&AntisymmetricField::zeros(g3), &ScalarField::constant(g3, 0.0)).unwrap();
        assert_eq!(rep.candidates, 8);
        assert_eq!(rep.admissible.len(), 8);
    }

    #[test]
    fn selection_pairs_roundtrip() {
        let s = Selection::from_pairs(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(s.to_string(), "{(1,2),(3,1),(2,3)}");
        assert!(Selection::from_pairs(3, &[(0, 1), (1, 2)]).is_err());
    }

    #[test]
    fn matrix_market_roundtrip() {
        let g = Grid::centered_cube(2, 1.0, 0.5).unwrap();
        let data = build_magnetic(&VectorPotentialSpec::ConstantField { b: vec![1.0] }, &g, None).unwrap();
        let m = assemble_magnetic(&g, &data.phases, &ScalarField::constant(g, 0.0)).unwrap();
        let mut buf = Vec::new();
        m.write_matrix_market(&mut buf).unwrap();
        let back = ComplexOperator::read_matrix_market(std::io::Cursor::new(buf), Symmetry::Hermitian).unwrap();
        assert_eq!(back.dim(), m.dim());
        for i in 0..m.dim() {
            for (j, v) in m.row(i) {
                assert!((back.get(i, j) - v).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn rotation_validation() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(validate_rotation(3, &id).is_ok());
        let bad = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(validate_rotation(3, &bad).is_err());
    }
}
