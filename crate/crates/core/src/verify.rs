//! Quantitative checks of the landscape inequalities on discrete instances.
//!
//! Each `check_*` function evaluates both sides of an inequality (or fits the
//! constants of a decay law) and returns an [`ExperimentReport`] holding
//! per-check margins, fitted constants and optional per-node diagnostics.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agmon::{agmon_distance_field, inverse_landscape, sublevel_set};
use crate::error::{Error, Result};
use crate::grid::{Grid, Region, ScalarField};
use crate::landscape::{for_each_offset, landscape_bounded};
use crate::maximal::{fit_long_distance, MaximalField};
use crate::operators::{assemble_magnetic, assemble_real, EdgePhaseField, MatrixField, RealOperator, Scalar, SparseOperator};
use crate::solvers::{lowest_eigenpairs, solve_linear, DEFAULT_LINEAR_TOL};

/// Relative slack allowed on every one-sided quadrature comparison.
pub const QUAD_TOL: f64 = 1e-6;
/// Largest relative change of a fitted constant when `h` is halved.
pub const REFINEMENT_DRIFT: f64 = 0.25;
/// Version tag written into JSON reports and CSV headers.
pub const REPORT_SCHEMA: &str = "landscape-report/1";

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// Signed slack: nonnegative when the check holds before tolerance.
    pub margin: f64,
    pub pass: bool,
}

impl CheckResult {
    /// `value ≤ bound` up to a relative tolerance.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64, rel_tol: f64) -> Self {
        let margin = bound - value;
        let slack = if bound.is_finite() { rel_tol * bound.abs().max(value.abs()) } else { 0.0 };
        let pass = value.is_finite() && !bound.is_nan() && margin >= -slack;
        CheckResult { name: name.into(), value, bound, margin, pass }
    }

    /// `value ≥ bound` up to a relative tolerance.
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64, rel_tol: f64) -> Self {
        let margin = value - bound;
        let slack = rel_tol * bound.abs().max(value.abs());
        let pass = value.is_finite() && bound.is_finite() && margin >= -slack;
        CheckResult { name: name.into(), value, bound, margin, pass }
    }

    /// A finiteness requirement; the bound is reported as infinity.
    pub fn finite(name: impl Into<String>, value: f64) -> Self {
        let pass = value.is_finite();
        CheckResult { name: name.into(), value, bound: f64::INFINITY, margin: if pass { f64::INFINITY } else { f64::NEG_INFINITY }, pass }
    }
}

/// Relative drift `|fine - coarse| / |coarse|` checked against
/// [`REFINEMENT_DRIFT`].
pub fn refinement_check(name: impl Into<String>, coarse: f64, fine: f64) -> CheckResult {
    let drift = (fine - coarse).abs() / coarse.abs();
    CheckResult::at_most(name, drift, REFINEMENT_DRIFT, 0.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub schema: &'static str,
    pub id: String,
    pub instance: serde_json::Value,
    pub checks: Vec<CheckResult>,
    pub constants: BTreeMap<String, f64>,
    pub pass: bool,
    /// Expected to fail; excluded from the overall exit status.
    pub negative_control: bool,
    /// Wall time, left out of the JSON so that reports are reproducible.
    #[serde(skip)]
    pub runtime_s: f64,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub diagnostics: Vec<(String, ScalarField)>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl ExperimentReport {
    pub fn new(id: impl Into<String>, instance: serde_json::Value) -> Self {
        ExperimentReport {
            schema: REPORT_SCHEMA,
            id: id.into(),
            instance,
            checks: Vec::new(),
            constants: BTreeMap::new(),
            pass: true,
            negative_control: false,
            runtime_s: 0.0,
            notes: Vec::new(),
            diagnostics: Vec::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn push(&mut self, check: CheckResult) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    pub fn constant(&mut self, name: impl Into<String>, value: f64) {
        self.constants.insert(name.into(), value);
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn diagnostic(&mut self, name: impl Into<String>, field: ScalarField) {
        self.diagnostics.push((name.into(), field));
    }

    /// Folds another report's checks and constants in under a name prefix.
    pub fn absorb(&mut self, prefix: &str, other: ExperimentReport) {
        for mut c in other.checks {
            c.name = format!("{prefix}/{}", c.name);
            self.push(c);
        }
        for (k, v) in other.constants {
            self.constant(format!("{prefix}/{k}"), v);
        }
        for n in other.notes {
            self.note(format!("{prefix}: {n}"));
        }
    }

    /// Recomputes the pass flag and stamps the runtime.
    pub fn finish(mut self) -> Self {
        self.pass = self.checks.iter().all(|c| c.pass);
        if let Some(t) = self.started {
            self.runtime_s = t.elapsed().as_secs_f64();
        }
        self
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// One row per node with the index columns and every diagnostic field.
    /// All diagnostics must live on the same grid.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some((_, first)) = self.diagnostics.first() else {
            return Ok(());
        };
        let g = *first.grid();
        if self.diagnostics.iter().any(|(_, f)| *f.grid() != g) {
            return Err(Error::InvalidField("diagnostic fields live on different grids".into()));
        }
        let shape: Vec<String> = g.shape().iter().map(|s| s.to_string()).collect();
        let names: Vec<&str> = self.diagnostics.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(
            w,
            "# grid n={} shape={} h={:e} field={} experiment={} schema={}",
            g.dim(),
            shape.join("x"),
            g.h(),
            names.join(";"),
            self.id,
            REPORT_SCHEMA
        )?;
        let cols: Vec<String> = (0..g.dim()).map(|a| format!("i{a}")).collect();
        writeln!(w, "{},{}", cols.join(","), names.join(","))?;
        for node in 0..g.len() {
            let m = g.multi_index(node);
            let idx: Vec<String> = (0..g.dim()).map(|a| m[a].to_string()).collect();
            let vals: Vec<String> = self.diagnostics.iter().map(|(_, f)| format!("{:e}", f.get(node))).collect();
            writeln!(w, "{},{}", idx.join(","), vals.join(","))?;
        }
        Ok(())
    }
}

/// Seeded smooth compactly supported test functions on a grid.
#[derive(Clone, Debug)]
pub struct TestFunctionSet {
    grid: Grid,
    complex: bool,
    functions: Vec<Vec<Complex64>>,
}

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

impl TestFunctionSet {
    /// `count` functions, each a sum of one to three tensor bumps with random
    /// centres, widths and amplitudes (and plane-wave phases when `complex`).
    /// Supports stay inside `region` and at least two cells from the boundary.
    pub fn bumps(grid: &Grid, count: usize, seed: u64, complex: bool, region: Option<&Region>) -> Result<Self> {
        let dim = grid.dim();
        let h = grid.h();
        let upper = grid.upper();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..dim {
            lo[a] = grid.origin()[a] + 2.0 * h;
            hi[a] = upper[a] - 2.0 * h;
            if let Some(r) = region {
                lo[a] = lo[a].max(r.lower[a]);
                hi[a] = hi[a].min(r.upper[a]);
            }
            if hi[a] - lo[a] < 6.0 * h {
                return Err(Error::InvalidParameter(format!("test-function region too thin along axis {a}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut functions = Vec::with_capacity(count);
        while functions.len() < count {
            let mut vals = vec![Complex64::new(0.0, 0.0); grid.len()];
            let pieces = rng.gen_range(1..=3);
            for _ in 0..pieces {
                let mut centre = [0.0; 3];
                let mut width = [1.0; 3];
                let mut k = [0.0; 3];
                for a in 0..dim {
                    let span = hi[a] - lo[a];
                    width[a] = rng.gen_range(1.5 * h..=(0.45 * span).max(1.5 * h + 1e-12)).max(1.5 * h);
                    centre[a] = rng.gen_range(lo[a] + width[a]..=hi[a] - width[a]);
                    if complex {
                        k[a] = rng.gen_range(-2.0..2.0);
                    }
                }
                let amp = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let phase0 = if complex { rng.gen_range(0.0..std::f64::consts::TAU) } else { 0.0 };
                for (node, val) in vals.iter_mut().enumerate() {
                    let x = grid.coords(node);
                    let mut prod = amp;
                    let mut phase = phase0;
                    for a in 0..dim {
                        prod *= bump((x[a] - centre[a]) / width[a]);
                        phase += k[a] * x[a];
                    }
                    if prod != 0.0 {
                        *val += Complex64::from_polar(prod, phase);
                    }
                }
            }
            if vals.iter().any(|v| v.norm() > 1e-8) {
                functions.push(vals);
            }
        }
        Ok(TestFunctionSet { grid: *grid, complex, functions })
    }

    /// Wraps explicit node values; each must vanish within one cell of the
    /// boundary.
    pub fn from_functions(grid: &Grid, functions: Vec<Vec<Complex64>>) -> Result<Self> {
        let h = grid.h();
        let mut complex = false;
        for f in &functions {
            if f.len() != grid.len() {
                return Err(Error::InvalidField("test function length differs from the grid".into()));
            }
            for (node, v) in f.iter().enumerate() {
                if !v.re.is_finite() || !v.im.is_finite() {
                    return Err(Error::InvalidField("test function is not finite".into()));
                }
                if *v != Complex64::new(0.0, 0.0) && grid.distance_to_boundary(node) < 1.5 * h {
                    return Err(Error::InvalidField("test function touches the boundary layer".into()));
                }
                complex |= v.im != 0.0;
            }
        }
        Ok(TestFunctionSet { grid: *grid, complex, functions })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_complex(&self) -> bool {
        self.complex
    }

    pub fn function(&self, i: usize) -> &[Complex64] {
        &self.functions[i]
    }

    /// Real part of the `i`-th function.
    pub fn real(&self, i: usize) -> Vec<f64> {
        self.functions[i].iter().map(|v| v.re).collect()
    }

    pub fn support(&self, i: usize) -> Vec<usize> {
        (0..self.grid.len()).filter(|&n| self.functions[i][n] != Complex64::new(0.0, 0.0)).collect()
    }
}

fn require_same_grid(a: &Grid, b: &Grid, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::InvalidField(format!("{what} lives on a different grid")));
    }
    Ok(())
}

fn grid_json(g: &Grid) -> serde_json::Value {
    serde_json::json!({ "dim": g.dim(), "shape": g.shape(), "h": g.h(), "origin": g.origin() })
}

/// `fᵀ M f` for node values `f` restricted to the operator's unknowns.
fn energy_real(m: &RealOperator, f: &[f64]) -> f64 {
    let dofs = m.dofs().expect("assembled operators carry their grid");
    let x = dofs.gather(f);
    m.form(&x, &x)
}

/// `Σ_{i≠j} (-M_ij) u_i u_j (g_i - g_j)² / 2` with `g = f/u`: the discrete
/// `∫ u² A∇(f/u)·∇(f/u)`.
fn ground_state_term(m: &RealOperator, u: &[f64], f: &[f64]) -> f64 {
    let dofs = m.dofs().expect("assembled operators carry their grid");
    let mut acc = 0.0;
    for i in 0..m.dim() {
        let ni = dofs.nodes[i];
        let gi = f[ni] / u[ni];
        for (j, mij) in m.row(i) {
            if j <= i {
                continue;
            }
            let nj = dofs.nodes[j];
            let gj = f[nj] / u[nj];
            acc += -mij * u[ni] * u[nj] * (gi - gj) * (gi - gj);
        }
    }
    acc
}

/// Weak and, for symmetric `A`, strong discrete uncertainty inequalities
/// `∫ f²/u ≤ λ⁻⁴∫ A∇f·∇f + ∫ V f²` and
/// `∫ f²/u + ∫ u² A∇(f/u)·∇(f/u) ≤ ∫ A∇f·∇f + ∫ V f²` for each test
/// function (real parts are used).
pub fn check_uncertainty_nonmagnetic(u: &ScalarField, a: &MatrixField, v: &ScalarField, fs: &TestFunctionSet, lambda: f64) -> Result<ExperimentReport> {
    let g = *u.grid();
    require_same_grid(&g, v.grid(), "potential")?;
    require_same_grid(&g, fs.grid(), "test functions")?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidParameter(format!("ellipticity {lambda} must lie in (0, 1]")));
    }
    let m = assemble_real(&g, a, v)?;
    let vol = g.cell_volume();
    let uv = u.values();
    let mut rep = ExperimentReport::new(
        "uncertainty-nonmagnetic",
        serde_json::json!({ "grid": grid_json(&g), "functions": fs.len(), "lambda": lambda, "symmetric": a.is_symmetric() }),
    );
    let mut worst: f64 = f64::INFINITY;
    for i in 0..fs.len() {
        let f = fs.real(i);
        let mut lhs = 0.0;
        let mut pot = 0.0;
        for node in g.interior_nodes() {
            lhs += f[node] * f[node] / uv[node];
            pot += v.get(node) * f[node] * f[node];
        }
        let energy = energy_real(&m, &f);
        let grad = energy - pot;
        let rhs = grad / lambda.powi(4) + pot;
        let c = CheckResult::at_most(format!("f{i}/weak"), lhs * vol, rhs * vol, QUAD_TOL);
        worst = worst.min(c.margin / c.bound.abs().max(f64::MIN_POSITIVE));
        rep.push(c);
        if a.is_symmetric() {
            let strong = lhs + ground_state_term(&m, uv, &f);
            rep.push(CheckResult::at_most(format!("f{i}/strong"), strong * vol, energy * vol, QUAD_TOL));
        }
    }
    rep.constant("min_relative_margin", worst);
    Ok(rep.finish())
}

/// Visits every axis edge `(x, x + h e_a)` between two grid nodes.
fn for_each_edge(g: &Grid, mut f: impl FnMut(usize, usize, usize)) {
    for x in 0..g.len() {
        for axis in 0..g.dim() {
            if let Some(y) = g.neighbor(x, axis, 1) {
                f(x, y, axis);
            }
        }
    }
}

/// `Σ_edges |f(y) - e^{iθ} f(x)|² / h²`, the discrete `∫|D_a f|²` up to the
/// cell volume.
pub fn magnetic_gradient_energy(phases: &EdgePhaseField, f: &[Complex64]) -> f64 {
    let g = *phases.grid();
    let h2 = g.h() * g.h();
    let mut acc = 0.0;
    for_each_edge(&g, |x, y, axis| {
        let link = Complex64::from_polar(1.0, phases.phase(x, axis));
        acc += (f[y] - link * f[x]).norm_sqr() / h2;
    });
    acc
}

/// Magnetic uncertainty inequality
/// `∫ u_S²|∇(|f|/u_S)|² + ∫|f|²/u_S ≤ ∫ n|D_a f|² + V|f|²` per test function.
pub fn check_uncertainty_magnetic(u_s: &ScalarField, phases: &EdgePhaseField, v: &ScalarField, fs: &TestFunctionSet) -> Result<ExperimentReport> {
    let g = *u_s.grid();
    require_same_grid(&g, phases.grid(), "phase field")?;
    require_same_grid(&g, v.grid(), "potential")?;
    require_same_grid(&g, fs.grid(), "test functions")?;
    let n = g.dim() as f64;
    let vol = g.cell_volume();
    let h2 = g.h() * g.h();
    let us = u_s.values();
    let mut rep = ExperimentReport::new(
        "uncertainty-magnetic",
        serde_json::json!({ "grid": grid_json(&g), "functions": fs.len(), "complex": fs.is_complex() }),
    );
    let mut worst: f64 = f64::INFINITY;
    for i in 0..fs.len() {
        let f = fs.function(i);
        let abs: Vec<f64> = f.iter().map(|z| z.norm()).collect();
        let mut ground = 0.0;
        for_each_edge(&g, |x, y, _| {
            if g.is_boundary(x) || g.is_boundary(y) {
                return;
            }
            let d = abs[y] / us[y] - abs[x] / us[x];
            ground += us[x] * us[y] * d * d / h2;
        });
        let mut mass = 0.0;
        let mut pot = 0.0;
        for node in g.interior_nodes() {
            mass += abs[node] * abs[node] / us[node];
            pot += v.get(node) * abs[node] * abs[node];
        }
        let lhs = (ground + mass) * vol;
        let rhs = (n * magnetic_gradient_energy(phases, f) + pot) * vol;
        let c = CheckResult::at_most(format!("f{i}"), lhs, rhs, QUAD_TOL);
        worst = worst.min(c.margin / c.bound.abs().max(f64::MIN_POSITIVE));
        rep.push(c);
    }
    rep.constant("min_relative_margin", worst);
    Ok(rep.finish())
}

/// Nodes of `grid` lying in `window` (all interior nodes when `None`).
pub fn window_nodes(grid: &Grid, window: Option<&Region>) -> Vec<usize> {
    grid.interior_nodes()
        .into_iter()
        .filter(|&n| match window {
            None => true,
            Some(r) => {
                let x = grid.coords(n);
                (0..grid.dim()).all(|a| x[a] >= r.lower[a] - 1e-12 && x[a] <= r.upper[a] + 1e-12)
            }
        })
        .collect()
}

/// Spread `max(u m²) / min(u m²)` over a window; capped nodes of `m` are
/// excluded.
pub fn check_compare_u_vs_m(u: &ScalarField, m: &MaximalField, window: Option<&Region>, spread_cap: f64) -> Result<ExperimentReport> {
    let g = *u.grid();
    require_same_grid(&g, m.m.grid(), "maximal function")?;
    let mut rep = ExperimentReport::new(
        "compare-u-m",
        serde_json::json!({ "grid": grid_json(&g), "c1": m.c1, "spread_cap": spread_cap }),
    );
    let nodes = window_nodes(&g, window);
    let mut ratio = vec![0.0; g.len()];
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut excluded = 0usize;
    for &n in &nodes {
        if m.capped[n] {
            excluded += 1;
            continue;
        }
        let r = u.get(n) * m.m.get(n).powi(2);
        ratio[n] = r;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if lo == f64::INFINITY {
        return Err(Error::InvalidField("every window node is capped".into()));
    }
    rep.constant("ratio_min", lo);
    rep.constant("ratio_max", hi);
    rep.constant("spread", hi / lo);
    rep.constant("excluded_capped", excluded as f64);
    rep.push(CheckResult::at_most("spread", hi / lo, spread_cap, 0.0));
    rep.diagnostic("u_m2", ScalarField::new(g, ratio)?);
    Ok(rep.finish())
}

/// Harnack constant `sup/inf u` over balls `B(x, √u(x))` at sampled window
/// nodes, and the long-distance comparison of `1/√u`. Balls leaving the
/// window are skipped.
pub fn check_harnack_and_longdistance(u: &ScalarField, window: Option<&Region>, samples: usize, seed: u64) -> Result<ExperimentReport> {
    let g = *u.grid();
    let h = g.h();
    let nodes = window_nodes(&g, window);
    let mut inside = vec![false; g.len()];
    for &n in &nodes {
        inside[n] = true;
    }
    let mut rep = ExperimentReport::new(
        "harnack-longdistance",
        serde_json::json!({ "grid": grid_json(&g), "samples": samples, "seed": seed }),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut harnack: f64 = 1.0;
    let mut balls = 0usize;
    for _ in 0..samples {
        if nodes.is_empty() {
            break;
        }
        let x = nodes[rng.gen_range(0..nodes.len())];
        let r = u.get(x).sqrt();
        let ri = (r / h).floor() as i64;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        let mut leaves = false;
        for_each_offset(g.dim(), ri, |d| {
            let d2: i64 = d.iter().map(|v| v * v).sum();
            if (d2 as f64).sqrt() * h > r + 1e-12 {
                return;
            }
            match g.offset(x, d) {
                Some(y) if inside[y] => {
                    lo = lo.min(u.get(y));
                    hi = hi.max(u.get(y));
                }
                _ => leaves = true,
            }
        });
        if leaves || !(lo > 0.0) {
            continue;
        }
        balls += 1;
        harnack = harnack.max(hi / lo);
    }
    rep.constant("harnack_c", harnack);
    rep.constant("harnack_balls", balls as f64);
    rep.push(CheckResult::at_least("harnack_balls", balls as f64, 1.0, 0.0));
    rep.push(CheckResult::finite("harnack_c", harnack));

    // Nodes with u = 0 (the Dirichlet boundary) are excluded from the fit.
    let q = u.map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 })?;
    let excluded: Vec<bool> = (0..g.len()).map(|n| !inside[n] || !(u.get(n) > 0.0)).collect();
    let fit = fit_long_distance(&q, &excluded, samples.max(16), seed ^ 0x5eed)?;
    rep.constant("long_k0", fit.k0 as f64);
    rep.constant("long_c", fit.constant);
    rep.push(CheckResult::finite("long_c", fit.constant));
    Ok(rep.finish())
}

/// Runs the Harnack/long-distance check on two resolutions of the same
/// instance and requires both constants to drift by at most
/// [`REFINEMENT_DRIFT`].
pub fn check_harnack_refinement(coarse: &ScalarField, fine: &ScalarField, window: Option<&Region>, samples: usize, seed: u64) -> Result<ExperimentReport> {
    let a = check_harnack_and_longdistance(coarse, window, samples, seed)?;
    let b = check_harnack_and_longdistance(fine, window, samples, seed)?;
    let mut rep = ExperimentReport::new(
        "harnack-refinement",
        serde_json::json!({ "coarse": grid_json(coarse.grid()), "fine": grid_json(fine.grid()) }),
    );
    let (hc, hf) = (a.constants["harnack_c"], b.constants["harnack_c"]);
    let (lc, lf) = (a.constants["long_c"], b.constants["long_c"]);
    rep.absorb("coarse", a);
    rep.absorb("fine", b);
    rep.push(refinement_check("harnack_drift", hc, hf));
    rep.push(refinement_check("long_drift", lc, lf));
    let slowly_varying = rep.pass;
    if !slowly_varying {
        rep.note("not slowly varying: fitted constants move under refinement");
    }
    Ok(rep.finish())
}

fn solve_on_dofs<T: Scalar>(m: &SparseOperator<T>, f: &[T]) -> Result<Vec<T>> {
    let dofs = m.dofs().ok_or_else(|| Error::InvalidParameter("operator carries no grid".into()))?;
    let rhs = dofs.gather(f);
    let (x, rep) = solve_linear(m, &rhs, DEFAULT_LINEAR_TOL, 50 * m.dim() + 1000)?;
    if !rep.converged {
        return Err(Error::Solver(format!("solve stalled at relative residual {:.3e}", rep.relative_residual)));
    }
    Ok(dofs.scatter(&x))
}

/// `ρ(·, supp f, 1/û)` for node values `f`.
fn distance_from_support<T: Scalar>(u: &ScalarField, a: Option<&MatrixField>, f: &[T]) -> Result<ScalarField> {
    let support: Vec<usize> = (0..f.len()).filter(|&n| f[n].modulus() > 0.0).collect();
    let w = inverse_landscape(u)?;
    Ok(agmon_distance_field(&w, a, &support)?.rho)
}

/// Weighted decay of `ψ = M⁻¹ f`: for every `ε` in the ladder records
/// `C(ε) = ∫ u⁻¹ e^{2ερ}|ψ|² / ∫ u|f|²` with `ρ = ρ(·, supp f, 1/û)`. For real
/// symmetric operators and `ε < 1/4`, `C(ε) ≤ (1-ε²)⁻²` is asserted; for the
/// rest a finite constant is required.
pub fn check_decay_lax_milgram<T: Scalar>(m: &SparseOperator<T>, u: &ScalarField, a: Option<&MatrixField>, f: &[T], eps_ladder: &[f64]) -> Result<ExperimentReport> {
    let g = *u.grid();
    let dofs = m.dofs().ok_or_else(|| Error::InvalidParameter("operator carries no grid".into()))?;
    require_same_grid(&g, &dofs.grid, "operator")?;
    if f.len() != g.len() {
        return Err(Error::InvalidField("right-hand side length differs from the grid".into()));
    }
    if eps_ladder.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter("decay rates must be positive".into()));
    }
    let psi = solve_on_dofs(m, f)?;
    let rho = distance_from_support(u, a, f)?;
    let explicit = !T::IS_COMPLEX && m.is_self_adjoint();
    let mut rep = ExperimentReport::new(
        "decay-lax-milgram",
        serde_json::json!({ "grid": grid_json(&g), "eps": eps_ladder, "complex": T::IS_COMPLEX }),
    );
    let interior = g.interior_nodes();
    let rhs: f64 = interior.iter().map(|&n| u.get(n) * f[n].modulus_squared()).sum();
    for &eps in eps_ladder {
        let lhs: f64 = interior
            .iter()
            .map(|&n| (2.0 * eps * rho.get(n)).exp() * psi[n].modulus_squared() / u.get(n))
            .sum();
        let c = lhs / rhs;
        rep.constant(format!("c_fit/eps={eps}"), c);
        if explicit && eps < 0.25 {
            let bound = (1.0 - eps * eps).powi(-2);
            rep.push(CheckResult::at_most(format!("eps={eps}"), c, bound, QUAD_TOL));
        } else {
            rep.push(CheckResult::finite(format!("eps={eps}"), c));
        }
    }
    rep.diagnostic("rho", rho);
    Ok(rep.finish())
}

/// Least-squares slope and intercept of `y` against `x`, plus Pearson's r.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx, sxy / (sxx * syy).sqrt())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[values.len() / 2]
}

/// Euclidean distance to a node set, up to the stencil error of the
/// geodesic solver.
fn euclidean_distance(g: &Grid, sources: &[usize]) -> Result<ScalarField> {
    Ok(agmon_distance_field(&ScalarField::constant(*g, 1.0), None, sources)?.rho)
}

#[derive(Clone, Copy, Debug)]
pub struct EigenDecaySpec {
    pub min_slope: f64,
    pub min_correlation: f64,
    /// Exponent of the integral form.
    pub alpha: f64,
    /// Nodes with `|ψ|` below this fraction of its maximum are dropped from
    /// the fit.
    pub floor: f64,
}

impl Default for EigenDecaySpec {
    fn default() -> Self {
        EigenDecaySpec { min_slope: 0.2, min_correlation: 0.9, alpha: 0.2, floor: 1e-10 }
    }
}

/// Decay of an eigenfunction `ψ` with eigenvalue `μ` against the Agmon
/// distance `ρ(·, E, w)`, `w = (1/û - μ)₊`, `E = {1/û ≤ μ}`. Fits the slope of
/// `-log|ψ|` against `ρ` on the tail (`ρ` beyond its median, at least `4h`
/// from `E`) and reports both sides of the integral form.
pub fn check_decay_eigenfunction(
    u: &ScalarField,
    a: Option<&MatrixField>,
    mu: f64,
    psi_abs: &ScalarField,
    window: Option<&Region>,
    spec: EigenDecaySpec,
) -> Result<ExperimentReport> {
    let g = *u.grid();
    require_same_grid(&g, psi_abs.grid(), "eigenfunction")?;
    let mut rep = ExperimentReport::new(
        "decay-eigenfunction",
        serde_json::json!({ "grid": grid_json(&g), "mu": mu, "alpha": spec.alpha }),
    );
    let sub = sublevel_set(u, mu)?;
    let interior = g.interior_nodes();
    if sub.nodes.is_empty() {
        return Err(Error::InvalidParameter(format!("sublevel set of 1/u at {mu} is empty")));
    }
    if sub.nodes.len() == interior.len() {
        rep.note("vacuous: the sublevel set covers every node");
        rep.constant("vacuous", 1.0);
        return Ok(rep.finish());
    }
    let rho = agmon_distance_field(&sub.weight, a, &sub.nodes)?.rho;
    let dist = euclidean_distance(&g, &sub.nodes)?;
    let top = psi_abs.max_abs();
    let candidates: Vec<usize> = window_nodes(&g, window)
        .into_iter()
        .filter(|&n| dist.get(n) >= 4.0 * g.h() - 1e-12 && psi_abs.get(n) > spec.floor * top && rho.get(n) > 0.0)
        .collect();
    if candidates.len() < 3 {
        return Err(Error::InvalidField("too few nodes outside the sublevel set for a decay fit".into()));
    }
    let med = median(&mut candidates.iter().map(|&n| rho.get(n)).collect::<Vec<_>>());
    let tail: Vec<usize> = candidates.into_iter().filter(|&n| rho.get(n) >= med).collect();
    let xs: Vec<f64> = tail.iter().map(|&n| rho.get(n)).collect();
    let ys: Vec<f64> = tail.iter().map(|&n| -(psi_abs.get(n) / top).ln()).collect();
    let (slope, _, corr) = linear_fit(&xs, &ys);
    rep.constant("slope", slope);
    rep.constant("correlation", corr);
    rep.constant("tail_nodes", tail.len() as f64);
    rep.push(CheckResult::at_least("slope", slope, spec.min_slope, 0.0));
    rep.push(CheckResult::at_least("correlation", corr, spec.min_correlation, 0.0));

    let (mut lhs, mut rhs) = (0.0, 0.0);
    for &n in &interior {
        let inv = 1.0 / u.get(n);
        let p2 = psi_abs.get(n).powi(2);
        lhs += (inv - mu).max(0.0) * (2.0 * spec.alpha * rho.get(n)).exp() * p2;
        if sub.mask[n] {
            rhs += (mu - inv).max(0.0) * p2;
        }
    }
    let vol = g.cell_volume();
    rep.constant("integral_lhs", lhs * vol);
    rep.constant("integral_rhs", rhs * vol / (1.0 - spec.alpha * spec.alpha));
    rep.diagnostic("rho", rho);
    Ok(rep.finish())
}

/// Lowest eigenpair of a real operator as `(μ, |ψ|)` on the grid.
pub fn ground_state(m: &RealOperator, tol: f64) -> Result<(f64, ScalarField)> {
    let dofs = m.dofs().ok_or_else(|| Error::InvalidParameter("operator carries no grid".into()))?;
    let spec = lowest_eigenpairs(m, 1, tol)?;
    let psi = dofs.scatter(&spec.eigenvectors[0]);
    Ok((spec.eigenvalues[0], ScalarField::new(dofs.grid, psi.iter().map(|v| v.abs()).collect())?))
}

/// Upper and lower envelope fits of a log-space cloud `y` against `x`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnvelopeFit {
    /// Decay rate of the upper envelope.
    pub upper_rate: f64,
    /// `log C` making `y ≤ log C - rate·x` hold at every node.
    pub upper_log_c: f64,
    pub lower_rate: f64,
    /// `log C` making `y ≥ -log C - rate·x` hold at every node.
    pub lower_log_c: f64,
}

/// Bins the tail (`x` beyond its median) into equal slabs, fits the binwise
/// maxima and minima of `y` by least squares and lifts each line to a bound
/// valid over all points.
pub fn envelope_fit(x: &[f64], y: &[f64]) -> Result<EnvelopeFit> {
    let med = median(&mut x.to_vec());
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(xmax > med) {
        return Err(Error::InvalidField("distance has no spread for a decay fit".into()));
    }
    const BINS: usize = 24;
    let width = (xmax - med) / BINS as f64;
    let mut hi = vec![(f64::NAN, f64::NEG_INFINITY); BINS];
    let mut lo = vec![(f64::NAN, f64::INFINITY); BINS];
    for (&xi, &yi) in x.iter().zip(y) {
        if xi < med {
            continue;
        }
        let b = (((xi - med) / width) as usize).min(BINS - 1);
        if yi > hi[b].1 {
            hi[b] = (xi, yi);
        }
        if yi < lo[b].1 {
            lo[b] = (xi, yi);
        }
    }
    let pick = |pts: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { pts.iter().filter(|p| p.0.is_finite()).map(|p| (p.0, p.1)).unzip() };
    let (hx, hy) = pick(&hi);
    let (lx, ly) = pick(&lo);
    if hx.len() < 2 {
        return Err(Error::InvalidField("too few tail bins for a decay fit".into()));
    }
    let upper_rate = -linear_fit(&hx, &hy).0;
    let lower_rate = -linear_fit(&lx, &ly).0;
    let upper_log_c = x.iter().zip(y).map(|(a, b)| b + upper_rate * a).fold(f64::NEG_INFINITY, f64::max);
    let lower_log_c = x.iter().zip(y).map(|(a, b)| -b - lower_rate * a).fold(f64::NEG_INFINITY, f64::max);
    Ok(EnvelopeFit { upper_rate, upper_log_c, lower_rate, lower_log_c })
}

/// Requirements on the Green-column fits.
#[derive(Clone, Copy, Debug)]
pub struct GreenDecaySpec {
    /// Accepted range of the upper-envelope rate against `ρ`.
    pub upper_rate: (f64, f64),
    /// Accepted range of the lower-envelope rate; `None` skips the lower
    /// bound (non-Shen instances).
    pub lower_rate: Option<(f64, f64)>,
    /// Minimal rate of the bound against `|x - y₀|/√U`, `U = max u`.
    pub euclidean_rate: f64,
}

impl Default for GreenDecaySpec {
    fn default() -> Self {
        GreenDecaySpec { upper_rate: (0.1, f64::INFINITY), lower_rate: Some((0.0, f64::INFINITY)), euclidean_rate: 0.2 }
    }
}

/// Decay of the Green column `G(·, y₀)`: with
/// `y = log|G| + (n-2) log|x - y₀|` fits the upper bound `y ≤ log C - αρ`,
/// the lower bound `y ≥ -log C - ε₁ρ` (`ρ = ρ(·, y₀, 1/û)`) and the
/// Euclidean form `y ≤ log C - β|x - y₀|/√U` over window nodes at least `4h`
/// from the source.
pub fn check_decay_green<T: Scalar>(m: &SparseOperator<T>, u: &ScalarField, a: Option<&MatrixField>, source: usize, window: Option<&Region>, spec: GreenDecaySpec) -> Result<ExperimentReport> {
    let g = *u.grid();
    let dofs = m.dofs().ok_or_else(|| Error::InvalidParameter("operator carries no grid".into()))?;
    require_same_grid(&g, &dofs.grid, "operator")?;
    let d = dofs.dof(source).ok_or_else(|| Error::InvalidParameter("source must be an interior node".into()))?;
    let mut rhs = vec![T::zero(); m.dim()];
    rhs[d] = T::from_parts(1.0 / g.cell_volume(), 0.0);
    let (col, srep) = solve_linear(m, &rhs, DEFAULT_LINEAR_TOL, 50 * m.dim() + 1000)?;
    if !srep.converged {
        return Err(Error::Solver(format!("Green column solve stalled at {:.3e}", srep.relative_residual)));
    }
    let col = dofs.scatter(&col);
    let w = inverse_landscape(u)?;
    let rho = agmon_distance_field(&w, a, &[source])?.rho;
    let y0 = g.coords(source);
    let n = g.dim() as f64;
    let big_u = u.max();
    let mut rep = ExperimentReport::new(
        "decay-green",
        serde_json::json!({ "grid": grid_json(&g), "source": y0[..g.dim()], "complex": T::IS_COMPLEX }),
    );
    let (mut xs, mut rs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    let mut nonpositive = 0usize;
    for node in window_nodes(&g, window) {
        let x = g.coords(node);
        let dist = (0..g.dim()).map(|k| (x[k] - y0[k]).powi(2)).sum::<f64>().sqrt();
        if dist < 4.0 * g.h() - 1e-12 {
            continue;
        }
        let val = if T::IS_COMPLEX { col[node].modulus() } else { col[node].parts().0 };
        if !(val > 0.0) {
            nonpositive += 1;
            continue;
        }
        xs.push(rho.get(node));
        rs.push(dist / big_u.sqrt());
        ys.push(val.ln() + (n - 2.0) * dist.ln());
    }
    rep.constant("excluded_nonpositive", nonpositive as f64);
    if !T::IS_COMPLEX && nonpositive > 0 {
        rep.note(format!("{nonpositive} nodes with nonpositive Green values"));
    }
    if xs.len() < 4 {
        return Err(Error::InvalidField("too few nodes for a Green decay fit".into()));
    }
    let fit = envelope_fit(&xs, &ys)?;
    rep.constant("alpha", fit.upper_rate);
    rep.constant("upper_c", fit.upper_log_c.exp());
    rep.push(CheckResult::at_least("alpha_min", fit.upper_rate, spec.upper_rate.0, 0.0));
    rep.push(CheckResult::at_most("alpha_max", fit.upper_rate, spec.upper_rate.1, 0.0));
    rep.push(CheckResult::finite("upper_c", fit.upper_log_c.exp()));
    if let Some((lo, hi)) = spec.lower_rate {
        rep.constant("eps1", fit.lower_rate);
        rep.constant("lower_c", fit.lower_log_c.exp());
        rep.push(CheckResult::at_least("eps1_min", fit.lower_rate, lo, 0.0));
        rep.push(CheckResult::at_most("eps1_max", fit.lower_rate, hi, 0.0));
        rep.push(CheckResult::finite("lower_c", fit.lower_log_c.exp()));
    }
    let euc = envelope_fit(&rs, &ys)?;
    rep.constant("euclidean_rate", euc.upper_rate);
    rep.constant("euclidean_c", euc.upper_log_c.exp());
    rep.constant("sup_u", big_u);
    rep.push(CheckResult::at_least("euclidean_rate", euc.upper_rate, spec.euclidean_rate, 0.0));
    rep.push(CheckResult::finite("euclidean_c", euc.upper_log_c.exp()));
    rep.diagnostic("rho", rho);
    Ok(rep.finish())
}

/// Largest ratio `∫ m² f² / (∫ A∇f·∇f + V f²)` over the test set. With `u`
/// supplied the ratio is also checked against the chain constant
/// `λ⁻⁴ max(u m²)` over the supports, which follows from the uncertainty
/// principle.
pub fn check_fefferman_phong(m: &MaximalField, a: &MatrixField, v: &ScalarField, u: Option<&ScalarField>, fs: &TestFunctionSet) -> Result<ExperimentReport> {
    let g = *v.grid();
    require_same_grid(&g, m.m.grid(), "maximal function")?;
    require_same_grid(&g, fs.grid(), "test functions")?;
    let op = assemble_real(&g, a, v)?;
    let mut rep = ExperimentReport::new(
        "fefferman-phong",
        serde_json::json!({ "grid": grid_json(&g), "functions": fs.len(), "c1": m.c1 }),
    );
    let mut best: f64 = 0.0;
    let mut chain: f64 = 0.0;
    for i in 0..fs.len() {
        let f = fs.real(i);
        let lhs: f64 = g.interior_nodes().iter().map(|&n| m.m.get(n).powi(2) * f[n] * f[n]).sum();
        let energy = energy_real(&op, &f);
        best = best.max(lhs / energy);
        if let Some(u) = u {
            for n in fs.support(i) {
                chain = chain.max(u.get(n) * m.m.get(n).powi(2));
            }
        }
    }
    rep.constant("c_fit", best);
    rep.push(CheckResult::finite("c_fit", best));
    if u.is_some() {
        let c_chain = chain / a.lambda().powi(4);
        rep.constant("c_chain", c_chain);
        rep.push(CheckResult::at_most("chain", best, c_chain, QUAD_TOL));
    }
    Ok(rep.finish())
}

/// Magnetic variant: largest ratio `∫ m²|f|² / ∫(|D_a f|² + V|f|²)` where `m`
/// is the maximal function of `Σ_S B + V`; checked against
/// `n max(u_S m²)` over the supports.
pub fn check_fefferman_phong_magnetic(m: &MaximalField, phases: &EdgePhaseField, v: &ScalarField, u_s: &ScalarField, fs: &TestFunctionSet) -> Result<ExperimentReport> {
    let g = *v.grid();
    require_same_grid(&g, m.m.grid(), "maximal function")?;
    require_same_grid(&g, phases.grid(), "phase field")?;
    require_same_grid(&g, u_s.grid(), "surrogate landscape")?;
    require_same_grid(&g, fs.grid(), "test functions")?;
    let mut rep = ExperimentReport::new(
        "fefferman-phong-magnetic",
        serde_json::json!({ "grid": grid_json(&g), "functions": fs.len(), "c1": m.c1 }),
    );
    let mut best: f64 = 0.0;
    let mut chain: f64 = 0.0;
    for i in 0..fs.len() {
        let f = fs.function(i);
        let mut lhs = 0.0;
        let mut pot = 0.0;
        for n in g.interior_nodes() {
            lhs += m.m.get(n).powi(2) * f[n].norm_sqr();
            pot += v.get(n) * f[n].norm_sqr();
        }
        let energy = magnetic_gradient_energy(phases, f) + pot;
        best = best.max(lhs / energy);
        for n in fs.support(i) {
            chain = chain.max(u_s.get(n) * m.m.get(n).powi(2));
        }
    }
    let c_chain = g.dim() as f64 * chain;
    rep.constant("c_fit", best);
    rep.constant("c_chain", c_chain);
    rep.push(CheckResult::finite("c_fit", best));
    rep.push(CheckResult::at_most("chain", best, c_chain, QUAD_TOL));
    Ok(rep.finish())
}

/// Resolvent decay: for each `t`, `u_t` is the landscape of `V + 1/t²` and
/// `C(t) = t⁴ ∫ u_t⁻¹ e^{2αρ_t}|R_t f|² / ∫ u_t f²` with
/// `R_t = (1 + t²M)⁻¹` and `ρ_t = ρ(·, supp f, 1/û_t)`. For symmetric `A` and
/// `α < 1/4` each `C(t) ≤ (1-α²)⁻²` is asserted.
pub fn check_resolvent_decay(grid: &Grid, a: &MatrixField, v: &ScalarField, f: &[f64], t_ladder: &[f64], alpha: f64) -> Result<ExperimentReport> {
    require_same_grid(grid, v.grid(), "potential")?;
    if f.len() != grid.len() {
        return Err(Error::InvalidField("right-hand side length differs from the grid".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter("decay exponent must be positive".into()));
    }
    let m = assemble_real(grid, a, v)?;
    let dofs = m.dofs().expect("assembled operators carry their grid").clone();
    let mut rep = ExperimentReport::new(
        "resolvent-decay",
        serde_json::json!({ "grid": grid_json(grid), "t": t_ladder, "alpha": alpha }),
    );
    let explicit = a.is_symmetric() && alpha < 0.25;
    let interior = grid.interior_nodes();
    let mut sup: f64 = 0.0;
    for &t in t_ladder {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("resolvent parameter {t} must be positive")));
        }
        let vt = v.map(|x| x + 1.0 / (t * t))?;
        let ut = landscape_bounded(grid, a, &vt)?.u;
        let (r, srep) = crate::solvers::apply_resolvent(&m, t, &dofs.gather(f), DEFAULT_LINEAR_TOL)?;
        if !srep.converged {
            return Err(Error::Solver(format!("resolvent solve stalled at {:.3e}", srep.relative_residual)));
        }
        let r = dofs.scatter(&r);
        let rho = distance_from_support(&ut, Some(a), f)?;
        let lhs: f64 = interior.iter().map(|&n| (2.0 * alpha * rho.get(n)).exp() * r[n] * r[n] / ut.get(n)).sum();
        let rhs: f64 = interior.iter().map(|&n| ut.get(n) * f[n] * f[n]).sum();
        let c = t.powi(4) * lhs / rhs;
        sup = sup.max(c);
        rep.constant(format!("c_fit/t={t}"), c);
        if explicit {
            rep.push(CheckResult::at_most(format!("t={t}"), c, (1.0 - alpha * alpha).powi(-2), QUAD_TOL));
        } else {
            rep.push(CheckResult::finite(format!("t={t}"), c));
        }
    }
    rep.constant("c_uniform", sup);
    Ok(rep.finish())
}

/// Pointwise diamagnetic inequality `||f(y)| - |f(x)|| ≤ |f(y) - e^{iθ}f(x)|`
/// on randomly drawn edges with random complex values.
pub fn check_diamagnetic(phases: &EdgePhaseField, edges: usize, seed: u64) -> Result<ExperimentReport> {
    let g = *phases.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Vec<Complex64> = (0..g.len())
        .map(|_| Complex64::from_polar(rng.gen_range(0.0..2.0), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let mut rep = ExperimentReport::new("diamagnetic", serde_json::json!({ "grid": grid_json(&g), "edges": edges, "seed": seed }));
    let mut violations = 0usize;
    let mut worst: f64 = f64::INFINITY;
    let mut drawn = 0usize;
    while drawn < edges {
        let x = rng.gen_range(0..g.len());
        let axis = rng.gen_range(0..g.dim());
        let Some(y) = g.neighbor(x, axis, 1) else { continue };
        drawn += 1;
        let link = Complex64::from_polar(1.0, phases.phase(x, axis));
        let lhs = (f[y].norm() - f[x].norm()).abs();
        let rhs = (f[y] - link * f[x]).norm();
        let margin = rhs - lhs;
        worst = worst.min(margin);
        if margin < -1e-12 * rhs.max(1.0) {
            violations += 1;
        }
    }
    rep.constant("violations", violations as f64);
    rep.constant("min_margin", worst);
    rep.push(CheckResult::at_most("violations", violations as f64, 0.0, 0.0));
    Ok(rep.finish())
}

/// Lowest `k` eigenvalues of the magnetic operator before and after the
/// gauge transform `θ ↦ θ + φ(y) - φ(x)`; the largest shift must stay below
/// `tol`.
pub fn check_gauge_covariance(phases: &EdgePhaseField, v: &ScalarField, phi: &ScalarField, k: usize, tol: f64) -> Result<ExperimentReport> {
    let g = *phases.grid();
    let before = assemble_magnetic(&g, phases, v)?;
    let after = assemble_magnetic(&g, &phases.gauge_transform(phi)?, v)?;
    let a = lowest_eigenpairs(&before, k, 1e-11)?;
    let b = lowest_eigenpairs(&after, k, 1e-11)?;
    let shift = a.eigenvalues.iter().zip(&b.eigenvalues).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let mut rep = ExperimentReport::new("gauge-covariance", serde_json::json!({ "grid": grid_json(&g), "k": k }));
    rep.constant("max_shift", shift);
    rep.constant("lowest", a.eigenvalues[0]);
    rep.push(CheckResult::at_most("spectrum_shift", shift, tol, 0.0));
    Ok(rep.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::landscape_bounded;

    #[test]
    fn test_functions_vanish_near_boundary() {
        let g = Grid::centered_cube(2, 2.0, 0.1).unwrap();
        let fs = TestFunctionSet::bumps(&g, 20, 4, true, None).unwrap();
        assert_eq!(fs.len(), 20);
        for i in 0..fs.len() {
            for n in fs.support(i) {
                assert!(g.distance_to_boundary(n) >= 2.0 * g.h() - 1e-12);
            }
            assert!(!fs.support(i).is_empty());
        }
        assert!(TestFunctionSet::from_functions(&g, vec![fs.function(0).to_vec()]).is_ok());
    }

    #[test]
    fn link_energy_matches_operator_form() {
        let g = Grid::centered_cube(2, 1.5, 0.1).unwrap();
        let phases = EdgePhaseField::from_vector_potential(&g, |x| [-0.5 * x[1], 0.5 * x[0], 0.0]).unwrap();
        let zero = ScalarField::constant(g, 0.0);
        let m = assemble_magnetic(&g, &phases, &zero).unwrap();
        let fs = TestFunctionSet::bumps(&g, 3, 9, true, None).unwrap();
        for i in 0..3 {
            let x = m.dofs().unwrap().gather(fs.function(i));
            let form = m.form(&x, &x).re;
            let links = magnetic_gradient_energy(&phases, fs.function(i));
            assert!((form - links).abs() <= 1e-10 * form.abs());
        }
    }

    #[test]
    fn constant_potential_margin_is_the_gradient_term() {
        // With V = 1 and u close to 1 away from the walls, the margin of the
        // weak inequality is ∫|∇f|² + ∫f²(1 - 1/u).
        let g = Grid::centered_cube(2, 3.0, 0.1).unwrap();
        let v = ScalarField::constant(g, 1.0);
        let a = MatrixField::identity(2);
        let u = landscape_bounded(&g, &a, &v).unwrap().u;
        let fs = TestFunctionSet::bumps(&g, 10, 1, false, None).unwrap();
        let rep = check_uncertainty_nonmagnetic(&u, &a, &v, &fs, 1.0).unwrap();
        assert!(rep.pass, "{:?}", rep.failures().collect::<Vec<_>>());
        assert_eq!(rep.checks.len(), 20);
    }

    #[test]
    fn envelope_fit_recovers_exact_line() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x.iter().map(|t| 2.0 - 0.7 * t).collect();
        let fit = envelope_fit(&x, &y).unwrap();
        assert!((fit.upper_rate - 0.7).abs() < 1e-12);
        assert!((fit.lower_rate - 0.7).abs() < 1e-12);
        assert!((fit.upper_log_c - 2.0).abs() < 1e-12);
        assert!((fit.lower_log_c + 2.0).abs() < 1e-12);
    }

    #[test]
    fn diamagnetic_has_no_violations() {
        let g = Grid::centered_cube(2, 2.0, 0.1).unwrap();
        let phases = EdgePhaseField::from_vector_potential(&g, |x| [-0.5 * x[1], 0.5 * x[0], 0.0]).unwrap();
        let rep = check_diamagnetic(&phases, 10_000, 2).unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn report_serializes() {
        let g = Grid::centered_cube(1, 1.0, 0.25).unwrap();
        let mut rep = ExperimentReport::new("demo", serde_json::json!({"x": 1}));
        rep.push(CheckResult::at_most("a", 1.0, 2.0, 0.0));
        rep.push(CheckResult::at_least("b", 1.0, 2.0, 0.0));
        rep.diagnostic("ones", ScalarField::constant(g, 1.0));
        let rep = rep.finish();
        assert!(!rep.pass);
        let js: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(js["checks"].as_array().unwrap().len(), 2);
        assert_eq!(js["schema"], REPORT_SCHEMA);
        let mut buf = Vec::new();
        rep.write_diagnostics_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2 + g.len());
    }
}
