//! Agmon distances `ρ(x, E, w)` in the metric `ds² = w Σ A⁻¹_ij dx_i dx_j`,
//! computed by Dijkstra's algorithm on a grid graph.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::operators::MatrixField;

/// Neighbor set of the grid graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// All `3ⁿ - 1` neighbors in the unit cube.
    Full,
    /// Primitive offsets with max-norm at most 2: 16 neighbors in 2D and 98 in
    /// 3D. Directional error stays below about 3% in 3D, against 11.5% for the
    /// unit-cube stencil.
    #[default]
    Extended,
}

impl Stencil {
    pub fn offsets(self, dim: usize) -> Vec<[i64; 3]> {
        let reach: i64 = match (self, dim) {
            (_, 1) | (Stencil::Full, _) => 1,
            (Stencil::Extended, _) => 2,
        };
        let span = |a: usize| if a < dim { -reach..=reach } else { 0..=0 };
        let mut out = Vec::new();
        for i in span(0) {
            for j in span(1) {
                for k in span(2) {
                    let d = [i, j, k];
                    if d == [0, 0, 0] {
                        continue;
                    }
                    let g = d.iter().fold(0i64, |acc, &x| gcd(acc, x.abs()));
                    if g == 1 {
                        out.push(d);
                    }
                }
            }
        }
        out
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Debug)]
pub struct GeodesicField {
    pub rho: ScalarField,
    pub sources: Vec<usize>,
    pub stencil: Stencil,
}

#[derive(Copy, Clone, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Precomputed edge directions with their Euclidean lengths.
struct Moves {
    offsets: Vec<[i64; 3]>,
    lengths: Vec<f64>,
    units: Vec<[f64; 3]>,
}

impl Moves {
    fn new(grid: &Grid, stencil: Stencil) -> Self {
        let offsets = stencil.offsets(grid.dim());
        let lengths: Vec<f64> = offsets
            .iter()
            .map(|d| grid.h() * ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt())
            .collect();
        let units = offsets
            .iter()
            .zip(&lengths)
            .map(|(d, l)| [d[0] as f64 * grid.h() / l, d[1] as f64 * grid.h() / l, d[2] as f64 * grid.h() / l])
            .collect();
        Moves { offsets, lengths, units }
    }
}

/// Distance to a set of source nodes with the default stencil.
pub fn agmon_distance_field(w: &ScalarField, a: Option<&MatrixField>, sources: &[usize]) -> Result<GeodesicField> {
    agmon_distance_field_with(w, a, sources, Stencil::default())
}

/// Edge cost `|Δx| · ½(√(w q)(x) + √(w q)(y))` with `q = d̂ᵀ A⁻¹ d̂`.
pub fn agmon_distance_field_with(w: &ScalarField, a: Option<&MatrixField>, sources: &[usize], stencil: Stencil) -> Result<GeodesicField> {
    let g = *w.grid();
    if sources.is_empty() {
        return Err(Error::InvalidParameter("source set is empty".into()));
    }
    if let Some(&s) = sources.iter().find(|&&s| s >= g.len()) {
        return Err(Error::InvalidParameter(format!("source node {s} outside the grid")));
    }
    if w.min() < 0.0 {
        return Err(Error::InvalidField("Agmon weight must be nonnegative".into()));
    }
    if let Some(a) = a {
        if a.dim() != g.dim() {
            return Err(Error::InvalidParameter("metric dimension differs from grid".into()));
        }
    }
    let moves = Moves::new(&g, stencil);
    // √w per node, and per-direction √q when a metric is given.
    let sw: Vec<f64> = w.values().iter().map(|x| x.sqrt()).collect();
    let sq: Option<Vec<Vec<f64>>> = a.filter(|a| !a.is_identity()).map(|a| {
        (0..g.len())
            .map(|n| moves.units.iter().map(|u| a.inverse_quadratic(n, *u).sqrt()).collect())
            .collect()
    });
    let local = |n: usize, k: usize| match &sq {
        Some(q) => sw[n] * q[n][k],
        None => sw[n],
    };
    let mut dist = vec![f64::INFINITY; g.len()];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        heap.push(Entry(0.0, s));
    }
    while let Some(Entry(d, x)) = heap.pop() {
        if d > dist[x] {
            continue;
        }
        for (k, off) in moves.offsets.iter().enumerate() {
            let Some(y) = g.offset(x, *off) else { continue };
            let cost = moves.lengths[k] * 0.5 * (local(x, k) + local(y, k));
            let nd = d + cost;
            if nd < dist[y] {
                dist[y] = nd;
                heap.push(Entry(nd, y));
            }
        }
    }
    let mut sources = sources.to_vec();
    sources.sort_unstable();
    sources.dedup();
    Ok(GeodesicField { rho: ScalarField::new(g, dist)?, sources, stencil })
}

/// `ρ(x, y)` between two nodes.
pub fn agmon_distance(w: &ScalarField, a: Option<&MatrixField>, x: usize, y: usize) -> Result<f64> {
    Ok(agmon_distance_field(w, a, &[x])?.rho.get(y))
}

/// Largest `(∇ρ·A∇ρ)/w - 1` over interior nodes with `w > 0`, using central
/// differences. Values near zero certify the local Lipschitz bound.
pub fn lipschitz_slack(field: &GeodesicField, w: &ScalarField, a: Option<&MatrixField>) -> f64 {
    let g = *w.grid();
    let h = g.h();
    let src: std::collections::HashSet<usize> = field.sources.iter().copied().collect();
    let mut worst = f64::NEG_INFINITY;
    for n in g.interior_nodes() {
        let wn = w.get(n);
        if wn <= 0.0 || src.contains(&n) {
            continue;
        }
        // Skip nodes next to a source where ρ has a kink.
        if (0..g.dim()).any(|ax| [-1, 1].iter().any(|&s| g.neighbor(n, ax, s).is_some_and(|y| src.contains(&y)))) {
            continue;
        }
        let mut grad = [0.0; 3];
        for (ax, gr) in grad.iter_mut().enumerate().take(g.dim()) {
            let p = g.neighbor(n, ax, 1).expect("interior");
            let m = g.neighbor(n, ax, -1).expect("interior");
            *gr = (field.rho.get(p) - field.rho.get(m)) / (2.0 * h);
        }
        let mut form = 0.0;
        for i in 0..g.dim() {
            for j in 0..g.dim() {
                let aij = a.map_or((i == j) as u8 as f64, |a| a.at(n, i, j));
                form += aij * grad[i] * grad[j];
            }
        }
        worst = worst.max(form / wn - 1.0);
    }
    worst
}

/// Sublevel set `E = {1/û ≤ μ}` and the decay weight `(1/û - μ)₊`.
#[derive(Clone, Debug)]
pub struct Sublevel {
    pub nodes: Vec<usize>,
    pub mask: Vec<bool>,
    pub weight: ScalarField,
}

/// `1/u` at interior nodes; boundary nodes, where `u` vanishes, get the
/// interior maximum so that the weight stays finite.
pub fn inverse_landscape(u: &ScalarField) -> Result<ScalarField> {
    let g = *u.grid();
    let interior = g.interior_nodes();
    if let Some(&n) = interior.iter().find(|&&n| !(u.get(n) > 0.0)) {
        return Err(Error::InvalidField(format!("landscape not positive at interior node {n}")));
    }
    let top = interior.iter().map(|&n| 1.0 / u.get(n)).fold(0.0, f64::max);
    ScalarField::new(g, (0..g.len()).map(|n| if g.is_boundary(n) { top } else { 1.0 / u.get(n) }).collect())
}

pub fn sublevel_set(uhat: &ScalarField, mu: f64) -> Result<Sublevel> {
    let inv = inverse_landscape(uhat)?;
    let g = *uhat.grid();
    let mask: Vec<bool> = (0..g.len()).map(|n| !g.is_boundary(n) && inv.get(n) <= mu).collect();
    let nodes = (0..g.len()).filter(|&n| mask[n]).collect();
    let weight = inv.map(|x| (x - mu).max(0.0))?;
    Ok(Sublevel { nodes, mask, weight })
}

/// Number of connected components of a node mask under axis adjacency.
pub fn count_components(grid: &Grid, mask: &[bool]) -> usize {
    let mut seen = vec![false; grid.len()];
    let mut count = 0;
    for start in 0..grid.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(x) = queue.pop_front() {
            for ax in 0..grid.dim() {
                for s in [-1, 1] {
                    if let Some(y) = grid.neighbor(x, ax, s) {
                        if mask[y] && !seen[y] {
                            seen[y] = true;
                            queue.push_back(y);
                        }
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencil_sizes() {
        assert_eq!(Stencil::Full.offsets(2).len(), 8);
        assert_eq!(Stencil::Full.offsets(3).len(), 26);
        assert_eq!(Stencil::Extended.offsets(2).len(), 16);
        assert_eq!(Stencil::Extended.offsets(3).len(), 98);
        assert_eq!(Stencil::Extended.offsets(1).len(), 2);
    }

    #[test]
    fn constant_weight_axis_exact() {
        let g = Grid::centered_cube(3, 2.0, 0.25).unwrap();
        let w = ScalarField::constant(g, 4.0);
        let o = g.nearest_node(&[0.0, 0.0, 0.0]);
        let f = agmon_distance_field(&w, None, &[o]).unwrap();
        let x = g.nearest_node(&[1.5, 0.0, 0.0]);
        assert!((f.rho.get(x) - 3.0).abs() < 1e-10);
    }

    #[test]
    fn zero_weight_is_free() {
        let g = Grid::centered_cube(2, 1.0, 0.25).unwrap();
        let f = agmon_distance_field(&ScalarField::constant(g, 0.0), None, &[0]).unwrap();
        assert!(f.rho.values().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn one_dimensional_integral() {
        let h = 1e-3;
        let g = Grid::from_bounds(&[0.0], &[3.0], h).unwrap();
        let w = ScalarField::from_fn(g, |x| x[0] * x[0]).unwrap();
        let a = g.nearest_node(&[0.5]);
        let f = agmon_distance_field(&w, None, &[a]).unwrap();
        for b in [0.1, 1.0, 2.5] {
            let got = f.rho.get(g.nearest_node(&[b]));
            let want = (b * b - 0.25f64).abs() / 2.0;
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn metric_scales_distance() {
        // A = 4I gives A⁻¹ = I/4, halving every length.
        let g = Grid::centered_cube(2, 1.0, 0.125).unwrap();
        let w = ScalarField::constant(g, 1.0);
        let a = MatrixField::constant(2, [[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]], 0.25).unwrap();
        let o = g.nearest_node(&[0.0, 0.0]);
        let plain = agmon_distance_field(&w, None, &[o]).unwrap();
        let scaled = agmon_distance_field(&w, Some(&a), &[o]).unwrap();
        for n in 0..g.len() {
            assert!((scaled.rho.get(n) - 0.5 * plain.rho.get(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn sublevel_conventions() {
        let g = Grid::centered_cube(1, 1.0, 0.25).unwrap();
        let u = ScalarField::from_fn(g, |x| 1.0 - x[0] * x[0]).unwrap();
        let all = sublevel_set(&u, 1e9).unwrap();
        assert_eq!(all.nodes.len(), g.interior_nodes().len());
        assert!(all.weight.values().iter().all(|&w| w == 0.0));
        let c = g.nearest_node(&[0.5]);
        let at = sublevel_set(&u, 1.0 / u.get(c)).unwrap();
        assert!(at.mask[c]);
    }

    #[test]
    fn components_of_two_blocks() {
        let g = Grid::centered_cube(2, 1.0, 0.25).unwrap();
        let mask: Vec<bool> = (0..g.len()).map(|n| g.coords(n)[0].abs() > 0.6 && !g.is_boundary(n)).collect();
        assert_eq!(count_components(&g, &mask), 2);
    }
}
