//! Landscape functions: `M u = 1` on a box, its exhaustion limit over growing
//! boxes, and the surrogate landscape of a magnetic operator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{AntisymmetricField, Grid, ScalarField};
use crate::operators::{assemble_real, enumerate_admissible_selections, selection_tolerance, MatrixField, MatrixValues, Selection};
use crate::potentials::{generate_potential, PotentialSpec};
use crate::solvers::{solve_linear, SolveReport};

/// Relative tolerance of every landscape solve.
pub const LANDSCAPE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct LandscapeResult {
    #[serde(skip)]
    pub u: ScalarField,
    /// Half-widths of the boxes solved on; a single entry for a bounded solve.
    pub radius_schedule: Vec<f64>,
    /// Largest increase of `u` over the central window between consecutive stages.
    pub increments: Vec<f64>,
    /// Largest decrease between consecutive stages over all shared nodes.
    pub monotonicity_defects: Vec<f64>,
    pub converged: bool,
    /// Set when the exhaustion limit appears infinite.
    pub diverged: bool,
    pub min_interior: f64,
    pub solves: Vec<SolveReport>,
}

fn solve_landscape(grid: &Grid, a: &MatrixField, v: &ScalarField, tol: f64) -> Result<(ScalarField, SolveReport)> {
    let m = assemble_real(grid, a, v)?;
    let rhs = vec![1.0; m.dim()];
    let (x, rep) = solve_linear(&m, &rhs, tol, 50 * m.dim() + 1000)?;
    if !rep.converged {
        return Err(Error::Solver(format!(
            "landscape solve stopped at relative residual {:.3e} after {} iterations",
            rep.relative_residual, rep.iterations
        )));
    }
    let dofs = m.dofs().expect("assembled operators carry their grid");
    Ok((dofs.scatter_field(&x)?, rep))
}

fn min_interior(u: &ScalarField) -> f64 {
    let g = u.grid();
    g.interior_nodes().into_iter().map(|n| u.get(n)).fold(f64::INFINITY, f64::min)
}

/// Landscape on a single box with Dirichlet data.
pub fn landscape_bounded(grid: &Grid, a: &MatrixField, v: &ScalarField) -> Result<LandscapeResult> {
    landscape_bounded_tol(grid, a, v, LANDSCAPE_TOL)
}

pub fn landscape_bounded_tol(grid: &Grid, a: &MatrixField, v: &ScalarField, tol: f64) -> Result<LandscapeResult> {
    if v.min() < 0.0 {
        return Err(Error::InvalidField("landscape needs a nonnegative potential".into()));
    }
    if !(v.total() > 0.0) {
        return Err(Error::InvalidField("potential must have positive integral".into()));
    }
    let (u, rep) = solve_landscape(grid, a, v, tol)?;
    let half = (0..grid.dim()).map(|i| 0.5 * (grid.upper()[i] - grid.origin()[i])).fold(0.0, f64::max);
    Ok(LandscapeResult {
        min_interior: min_interior(&u),
        u,
        radius_schedule: vec![half],
        increments: Vec::new(),
        monotonicity_defects: Vec::new(),
        converged: true,
        diverged: false,
        solves: vec![rep],
    })
}

/// Nested boxes `|x - center|∞ ≤ R₀ 2ᵏ`, all with spacing `h`.
#[derive(Clone, Debug, Serialize)]
pub struct ExhaustionSpec {
    pub center: Vec<f64>,
    pub r0: f64,
    pub h: f64,
    pub stop_tol: f64,
    pub max_stages: usize,
}

impl ExhaustionSpec {
    pub fn stage_grid(&self, k: usize) -> Result<Grid> {
        let r = self.r0 * 2f64.powi(k as i32);
        let lo: Vec<f64> = self.center.iter().map(|c| c - r).collect();
        let hi: Vec<f64> = self.center.iter().map(|c| c + r).collect();
        Grid::from_bounds(&lo, &hi, self.h)
    }

    fn in_window(&self, x: [f64; 3]) -> bool {
        self.center.iter().enumerate().all(|(i, c)| (x[i] - c).abs() <= self.r0 + 1e-9 * self.h)
    }
}

/// Largest value admitted before the exhaustion is declared divergent.
pub fn divergence_cap(grid: &Grid) -> f64 {
    1e6 * grid.diameter().powi(2)
}

/// Exhaustion: solves on boxes of half-width `R₀ 2ᵏ` and stops once the
/// largest window increment falls below `stop_tol`. The run is flagged
/// divergent when values pass [`divergence_cap`] or when it ends unconverged
/// with increments that no longer shrink.
pub fn landscape_exhaustion(
    spec: &ExhaustionSpec,
    coefficients: &dyn Fn(&Grid) -> Result<MatrixField>,
    potential: &dyn Fn(&Grid) -> Result<ScalarField>,
) -> Result<LandscapeResult> {
    if spec.max_stages == 0 {
        return Err(Error::InvalidParameter("at least one stage is required".into()));
    }
    if !(spec.r0 > 0.0 && spec.stop_tol > 0.0) {
        return Err(Error::InvalidParameter("R0 and stop tolerance must be positive".into()));
    }
    let mut prev: Option<ScalarField> = None;
    let mut out = LandscapeResult {
        u: ScalarField::constant(spec.stage_grid(0)?, 0.0),
        radius_schedule: Vec::new(),
        increments: Vec::new(),
        monotonicity_defects: Vec::new(),
        converged: false,
        diverged: false,
        min_interior: 0.0,
        solves: Vec::new(),
    };
    for k in 0..spec.max_stages {
        let grid = spec.stage_grid(k)?;
        let v = potential(&grid)?;
        if v.min() < 0.0 {
            return Err(Error::InvalidField("landscape needs a nonnegative potential".into()));
        }
        if k == 0 && !(v.total() > 0.0) {
            return Err(Error::InvalidField("potential must have positive integral".into()));
        }
        let a = coefficients(&grid)?;
        let (u, rep) = solve_landscape(&grid, &a, &v, LANDSCAPE_TOL)?;
        out.solves.push(rep);
        out.radius_schedule.push(spec.r0 * 2f64.powi(k as i32));
        log::info!("exhaustion stage {k}: {} nodes, max u {:.6e}", grid.len(), u.max());
        if u.max() > divergence_cap(&grid) {
            out.diverged = true;
        }
        if let Some(p) = &prev {
            let pg = p.grid();
            let mut inc: f64 = 0.0;
            let mut defect: f64 = 0.0;
            for node in 0..pg.len() {
                let Some(big) = grid.locate_aligned(pg, node) else { continue };
                let d = u.get(big) - p.get(node);
                defect = defect.max(-d);
                if spec.in_window(pg.coords(node)) {
                    inc = inc.max(d.abs());
                }
            }
            out.increments.push(inc);
            out.monotonicity_defects.push(defect);
            if inc < spec.stop_tol {
                out.converged = true;
            }
        }
        prev = Some(u);
        if out.converged || out.diverged {
            break;
        }
    }
    if !out.converged {
        let n = out.increments.len();
        if n >= 2 && out.increments[n - 1] >= out.increments[n - 2] {
            out.diverged = true;
        }
    }
    let u = prev.expect("at least one stage ran");
    out.min_interior = min_interior(&u);
    out.u = u;
    Ok(out)
}

/// Exhaustion with a constant coefficient matrix and a potential family.
pub fn landscape_exhaustion_spec(spec: &ExhaustionSpec, a: &MatrixField, v: &PotentialSpec) -> Result<LandscapeResult> {
    v.validate(spec.center.len())?;
    if matches!(a.values(), MatrixValues::PerNode(_)) {
        return Err(Error::Unsupported("exhaustion needs a coefficient defined on every box".into()));
    }
    let coeff = |_: &Grid| Ok(a.clone());
    let pot = |g: &Grid| generate_potential(v, g);
    landscape_exhaustion(spec, &coeff, &pot)
}

/// Potential of the surrogate real operator: `Σ_S B + V`.
pub fn surrogate_potential(b: &AntisymmetricField, v: &ScalarField, s: &Selection) -> Result<ScalarField> {
    if b.grid() != v.grid() {
        return Err(Error::InvalidField("field and potential live on different grids".into()));
    }
    let sum = s.sum(b);
    let tol = selection_tolerance(b);
    let w = sum.zip_map(v, |a, c| a + c)?;
    if w.min() < -tol {
        return Err(Error::Inadmissible(format!("selection {s} gives minimum {:.3e}", w.min())));
    }
    w.map(|x| x.max(0.0))
}

/// Landscape of `-Δ + Σ_S B + V`.
pub fn landscape_magnetic_surrogate(grid: &Grid, b: &AntisymmetricField, v: &ScalarField, s: &Selection) -> Result<LandscapeResult> {
    if b.grid() != grid {
        return Err(Error::InvalidField("field lives on a different grid".into()));
    }
    let w = surrogate_potential(b, v, s)?;
    landscape_bounded(grid, &MatrixField::identity(grid.dim()), &w)
}

/// Surrogate landscape using the maximal selection when one exists, else the
/// first admissible one.
pub fn landscape_magnetic_auto(grid: &Grid, b: &AntisymmetricField, v: &ScalarField) -> Result<(LandscapeResult, Selection)> {
    let rep = enumerate_admissible_selections(b, v)?;
    let s = rep
        .maximal
        .filter(|m| rep.admissible.contains(m))
        .or_else(|| rep.admissible.first().copied())
        .ok_or_else(|| Error::Inadmissible("no admissible selection".into()))?;
    Ok((landscape_magnetic_surrogate(grid, b, v, &s)?, s))
}

/// Largest difference between `u` and `hⁿ Σ_y G(·,y)` with `G` from the dense
/// inverse. Only for small grids.
pub fn green_identity_defect(grid: &Grid, a: &MatrixField, v: &ScalarField) -> Result<f64> {
    let m = assemble_real(grid, a, v)?;
    if m.dim() > 4096 {
        return Err(Error::InvalidParameter("dense Green identity needs at most 4096 unknowns".into()));
    }
    let inv = m
        .to_dense()
        .try_inverse()
        .ok_or_else(|| Error::Solver("operator is singular".into()))?;
    let u = landscape_bounded(grid, a, v)?;
    let dofs = m.dofs().expect("assembled operators carry their grid");
    let vol = grid.cell_volume();
    let mut worst: f64 = 0.0;
    for (i, &node) in dofs.nodes.iter().enumerate() {
        // G(x,y) = h⁻ⁿ (M⁻¹)_xy.
        let green: f64 = inv.row(i).iter().map(|g| g / vol).sum::<f64>() * vol;
        worst = worst.max((green - u.u.get(node)).abs());
    }
    Ok(worst)
}

/// Witnessed constants for the lower bound: inside each ball of radius
/// `s = ‖V‖∞^{-1/2}` sits a ball of radius `c₂ s` on which `u ≥ c₁ s²`.
#[derive(Clone, Debug, Serialize)]
pub struct LowerBoundFit {
    pub scale: f64,
    /// `(c₂, c₁)` pairs; `c₁` is the worst case over the sampled balls.
    pub constants: Vec<(f64, f64)>,
    pub balls: usize,
    pub positive: bool,
}

pub fn fit_lower_bound(u: &ScalarField, v: &ScalarField) -> Result<LowerBoundFit> {
    let g = *u.grid();
    let vmax = v.max();
    if !(vmax > 0.0) {
        return Err(Error::InvalidField("potential must be positive somewhere".into()));
    }
    let s = vmax.powf(-0.5);
    let h = g.h();
    let centers: Vec<usize> = (0..g.len()).filter(|&n| g.distance_to_boundary(n) >= 4.0 * s).collect();
    if centers.is_empty() || s < 2.0 * h {
        return Err(Error::BelowResolution(format!("scale {s:.3e} does not fit the grid")));
    }
    let stride = (centers.len() / 200).max(1);
    let sampled: Vec<usize> = centers.iter().step_by(stride).copied().collect();
    let r_nodes = (s / h).floor() as i64;
    let mut constants = Vec::new();
    for c2 in [0.5, 0.25, 0.125] {
        let sub = c2 * s;
        if sub < h {
            continue;
        }
        let sub_nodes = (sub / h).floor() as i64;
        let mut worst = f64::INFINITY;
        for &x in &sampled {
            let mut best: f64 = 0.0;
            // Candidate sub-ball centers at nodes with |y - x| ≤ s - c₂ s.
            let lim = ((s - sub) / h).floor() as i64;
            for_each_offset(g.dim(), lim.min(r_nodes), |d| {
                let d2: i64 = d.iter().map(|v| v * v).sum();
                if (d2 as f64).sqrt() * h > s - sub + 1e-12 {
                    return;
                }
                let Some(y) = g.offset(x, d) else { return };
                let mut mn = f64::INFINITY;
                for_each_offset(g.dim(), sub_nodes, |e| {
                    let e2: i64 = e.iter().map(|v| v * v).sum();
                    if (e2 as f64).sqrt() * h <= sub + 1e-12 {
                        if let Some(z) = g.offset(y, e) {
                            mn = mn.min(u.get(z));
                        }
                    }
                });
                best = best.max(mn);
            });
            worst = worst.min(best);
        }
        constants.push((c2, worst * vmax));
    }
    let positive = !constants.is_empty() && constants.iter().all(|c| c.1 > 0.0);
    Ok(LowerBoundFit { scale: s, constants, balls: sampled.len(), positive })
}

/// Calls `f` for every offset in the cube `[-r, r]^dim`.
pub(crate) fn for_each_offset(dim: usize, r: i64, mut f: impl FnMut([i64; 3])) {
    let rz = |axis: usize| if axis < dim { r } else { 0 };
    for a in -rz(0)..=rz(0) {
        for b in -rz(1)..=rz(1) {
            for c in -rz(2)..=rz(2) {
                f([a, b, c]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_potential_bulk_value() {
        let g = Grid::centered_cube(2, 8.0, 0.2).unwrap();
        let v = ScalarField::constant(g, 4.0);
        let r = landscape_bounded(&g, &MatrixField::identity(2), &v).unwrap();
        let c = g.nearest_node(&[0.0, 0.0]);
        assert!((r.u.get(c) - 0.25).abs() < 1e-6);
        assert!(r.min_interior > 0.0);
        for n in g.boundary_nodes() {
            assert_eq!(r.u.get(n), 0.0);
        }
    }

    #[test]
    fn zero_potential_rejected() {
        let g = Grid::centered_cube(1, 1.0, 0.1).unwrap();
        let v = ScalarField::constant(g, 0.0);
        assert!(landscape_bounded(&g, &MatrixField::identity(1), &v).is_err());
    }

    #[test]
    fn doubling_potential_lowers_u() {
        let g = Grid::centered_cube(2, 2.0, 0.125).unwrap();
        let v = ScalarField::from_fn(g, |x| 1.0 + x[0] * x[0]).unwrap();
        let v2 = v.map(|x| 2.0 * x).unwrap();
        let a = MatrixField::identity(2);
        let u1 = landscape_bounded(&g, &a, &v).unwrap().u;
        let u2 = landscape_bounded(&g, &a, &v2).unwrap().u;
        for n in g.interior_nodes() {
            assert!(u2.get(n) < u1.get(n));
        }
    }

    #[test]
    fn exhaustion_constant_potential_converges() {
        let spec = ExhaustionSpec { center: vec![0.0, 0.0], r0: 2.0, h: 0.25, stop_tol: 1e-4, max_stages: 5 };
        let r = landscape_exhaustion_spec(&spec, &MatrixField::identity(2), &PotentialSpec::Constant { value: 1.0 }).unwrap();
        assert!(r.converged && !r.diverged);
        assert!(r.increments.windows(2).all(|w| w[1] < w[0]));
        assert!(r.monotonicity_defects.iter().all(|&d| d < 1e-9));
    }

    #[test]
    fn exhaustion_compact_potential_diverges_in_3d() {
        let spec = ExhaustionSpec { center: vec![0.0; 3], r0: 1.0, h: 0.25, stop_tol: 1e-6, max_stages: 4 };
        let v = PotentialSpec::Wells {
            wells: vec![crate::potentials::Well { center: vec![0.0; 3], radius: 0.5 }],
            inside: 1.0,
            outside: 0.0,
        };
        let r = landscape_exhaustion_spec(&spec, &MatrixField::identity(3), &v).unwrap();
        assert!(r.diverged, "{:?}", r.increments);
        assert!(!r.converged);
    }

    #[test]
    fn green_identity_small_grid() {
        let g = Grid::centered_cube(2, 1.0, 0.2).unwrap();
        let v = ScalarField::from_fn(g, |x| 1.0 + x[0].abs()).unwrap();
        let d = green_identity_defect(&g, &MatrixField::identity(2), &v).unwrap();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn lower_bound_fit_is_positive() {
        let g = Grid::centered_cube(2, 3.0, 0.1).unwrap();
        let v = ScalarField::from_fn(g, |x| 4.0 + (3.0 * x[0]).sin()).unwrap();
        let u = landscape_bounded(&g, &MatrixField::identity(2), &v).unwrap().u;
        let fit = fit_lower_bound(&u, &v).unwrap();
        assert!(fit.positive);
        // u ≤ 1/min V, so c₁ ≤ max V / min V.
        assert!(fit.constants.iter().all(|c| c.1 <= 5.0 / 3.0));
    }

    #[test]
    fn surrogate_with_zero_field_matches_plain() {
        let g = Grid::centered_cube(2, 1.0, 0.125).unwrap();
        let v = ScalarField::constant(g, 2.0);
        let b = AntisymmetricField::zeros(g);
        let s = Selection { dim: 2, flips: 0 };
        let a = landscape_magnetic_surrogate(&g, &b, &v, &s).unwrap();
        let p = landscape_bounded(&g, &MatrixField::identity(2), &v).unwrap();
        assert_eq!(a.u.values(), p.u.values());
    }
}
