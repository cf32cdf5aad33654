//! Uniform rectangular grids in one to three dimensions and node-sampled fields.
//!
//! Nodes are ordered with the last axis fastest. Boundary nodes are those with
//! some index equal to `0` or `shape[i] - 1`; every operator in this crate
//! treats them as Dirichlet nodes.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether a coordinate sits on a plane
/// or a node sits on a sphere.
const GEOM_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    shape: [usize; 3],
    h: f64,
    origin: [f64; 3],
}

impl Grid {
    pub fn new(shape: &[usize], h: f64, origin: &[f64]) -> Result<Self> {
        let dim = shape.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if origin.len() != dim {
            return Err(Error::InvalidGrid("origin length differs from dimension".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {h} must be positive")));
        }
        if let Some(s) = shape.iter().find(|&&s| s < 3) {
            return Err(Error::InvalidGrid(format!("axis with {s} nodes; need at least 3")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        let mut sh = [1usize; 3];
        let mut or = [0.0; 3];
        sh[..dim].copy_from_slice(shape);
        or[..dim].copy_from_slice(origin);
        Ok(Grid { dim, shape: sh, h, origin: or })
    }

    /// Grid covering `[lower_i, upper_i]` on every axis with spacing `h`. The
    /// extents must be integer multiples of `h`.
    pub fn from_bounds(lower: &[f64], upper: &[f64], h: f64) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidGrid("bound lengths differ".into()));
        }
        let mut shape = Vec::with_capacity(lower.len());
        for (&lo, &hi) in lower.iter().zip(upper) {
            let cells = (hi - lo) / h;
            let rounded = cells.round();
            if !(rounded >= 2.0) || (cells - rounded).abs() > 1e-6 * rounded.max(1.0) {
                return Err(Error::InvalidGrid(format!(
                    "extent [{lo}, {hi}] is not a multiple of h = {h} with at least two cells"
                )));
            }
            shape.push(rounded as usize + 1);
        }
        Grid::new(&shape, h, lower)
    }

    /// The cube `[-half, half]^dim`.
    pub fn centered_cube(dim: usize, half: f64, h: f64) -> Result<Self> {
        Grid::from_bounds(&vec![-half; dim], &vec![half; dim], h)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dim]
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }
    /// Largest coordinate along each axis.
    pub fn upper(&self) -> [f64; 3] {
        let mut u = [0.0; 3];
        for a in 0..self.dim {
            u[a] = self.origin[a] + self.h * (self.shape[a] - 1) as f64;
        }
        u
    }
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// `h^dim`, the volume attached to one node.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }
    /// Euclidean length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        (0..self.dim)
            .map(|a| (self.h * (self.shape[a] - 1) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn strides(&self) -> [usize; 3] {
        [self.shape[1] * self.shape[2], self.shape[2], 1]
    }

    /// Linear index of a multi-index. Unused trailing axes must be zero.
    pub fn index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.shape[1] + idx[1]) * self.shape[2] + idx[2]
    }

    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let i2 = node % self.shape[2];
        let r = node / self.shape[2];
        [r / self.shape[1], r % self.shape[1], i2]
    }

    pub fn coords(&self, node: usize) -> [f64; 3] {
        let m = self.multi_index(node);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.origin[a] + self.h * m[a] as f64;
        }
        x
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let m = self.multi_index(node);
        (0..self.dim).any(|a| m[a] == 0 || m[a] == self.shape[a] - 1)
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&n| self.is_boundary(n)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&n| !self.is_boundary(n)).collect()
    }

    /// Neighbor reached by moving `step` nodes along `axis`, if it exists.
    pub fn offset(&self, node: usize, delta: [i64; 3]) -> Option<usize> {
        let m = self.multi_index(node);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = m[a] as i64 + delta[a];
            if v < 0 || v >= self.shape[a] as i64 {
                return None;
            }
            out[a] = v as usize;
        }
        Some(self.index(out))
    }

    pub fn neighbor(&self, node: usize, axis: usize, step: i64) -> Option<usize> {
        let mut d = [0i64; 3];
        d[axis] = step;
        self.offset(node, d)
    }

    /// Node nearest to `x` (clamped into the box).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut m = [0usize; 3];
        for a in 0..self.dim {
            let t = ((x[a] - self.origin[a]) / self.h).round();
            m[a] = t.clamp(0.0, (self.shape[a] - 1) as f64) as usize;
        }
        self.index(m)
    }

    /// Distance from a node to the nearest face of the box.
    pub fn distance_to_boundary(&self, node: usize) -> f64 {
        let m = self.multi_index(node);
        (0..self.dim)
            .map(|a| m[a].min(self.shape[a] - 1 - m[a]) as f64 * self.h)
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether `self` and `other` share spacing and lattice alignment, so that
    /// nodes of one can be located exactly in the other.
    pub fn aligned_with(&self, other: &Grid) -> bool {
        if self.dim != other.dim || (self.h - other.h).abs() > GEOM_EPS * self.h {
            return false;
        }
        (0..self.dim).all(|a| {
            let s = (other.origin[a] - self.origin[a]) / self.h;
            (s - s.round()).abs() < 1e-6
        })
    }

    /// Node of `self` located at the coordinates of `node` in `other`.
    pub fn locate_aligned(&self, other: &Grid, node: usize) -> Option<usize> {
        let x = other.coords(node);
        let mut m = [0usize; 3];
        for a in 0..self.dim {
            let t = ((x[a] - self.origin[a]) / self.h).round();
            if t < 0.0 || t > (self.shape[a] - 1) as f64 {
                return None;
            }
            m[a] = t as usize;
        }
        Some(self.index(m))
    }
}

/// Axis-aligned box used as an integration region.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: &[f64], upper: &[f64]) -> Self {
        Region { lower: lower.to_vec(), upper: upper.to_vec() }
    }
}

/// Result of a box integral. `empty` is set when no node lies in the region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at node {i}")));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|n| f(grid.coords(n))).collect();
        ScalarField::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        ScalarField::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidField("fields live on different grids".into()));
        }
        let v = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        ScalarField::new(self.grid, v)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Riemann sum `h^n Σ values` over all nodes.
    pub fn total(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// Box quadrature with half weights for nodes on a clipped face.
    pub fn integrate(&self, region: &Region) -> Integral {
        let g = &self.grid;
        let mut ranges: [(usize, usize, f64, f64); 3] = [(0, 0, 1.0, 1.0); 3];
        for a in 0..g.dim {
            let lo = region.lower[a].max(g.origin[a]);
            let hi = region.upper[a].min(g.upper()[a]);
            if lo > hi + GEOM_EPS * g.h {
                return Integral { value: 0.0, empty: true };
            }
            let tlo = (lo - g.origin[a]) / g.h;
            let thi = (hi - g.origin[a]) / g.h;
            let first = (tlo - GEOM_EPS).ceil().max(0.0) as usize;
            let last_f = (thi + GEOM_EPS).floor();
            if last_f < first as f64 {
                return Integral { value: 0.0, empty: true };
            }
            let last = (last_f as usize).min(g.shape[a] - 1);
            let on_lo = (tlo - first as f64).abs() < GEOM_EPS;
            let on_hi = (thi - last as f64).abs() < GEOM_EPS;
            let w_first = if on_lo { 0.5 } else { 1.0 };
            let w_last = if on_hi { 0.5 } else { 1.0 };
            ranges[a] = (first, last, w_first, w_last);
        }
        let weight = |a: usize, i: usize| -> f64 {
            let (f, l, wf, wl) = ranges[a];
            let mut w = 1.0;
            if i == f {
                w *= wf;
            }
            if i == l {
                w *= wl;
            }
            w
        };
        let mut sum = 0.0;
        for i0 in ranges[0].0..=ranges[0].1 {
            let w0 = weight(0, i0);
            for i1 in ranges[1].0..=ranges[1].1 {
                let w1 = w0 * weight(1, i1);
                for i2 in ranges[2].0..=ranges[2].1 {
                    let w = w1 * weight(2, i2);
                    sum += w * self.values[g.index([i0, i1, i2])];
                }
            }
        }
        Integral { value: sum * g.cell_volume(), empty: false }
    }

    /// Mean of node values in the closed ball `|x - center| <= radius`.
    pub fn ball_average(&self, center: &[f64], radius: f64) -> Result<f64> {
        let g = &self.grid;
        if radius < g.h * (1.0 - GEOM_EPS) {
            return Err(Error::BelowResolution(format!("radius {radius} < h = {}", g.h)));
        }
        let (sum, count) = self.ball_sum(center, radius);
        if count == 0 {
            return Err(Error::BelowResolution(format!("no node within {radius} of {center:?}")));
        }
        Ok(sum / count as f64)
    }

    /// Sum of node values and node count in the closed ball.
    pub fn ball_sum(&self, center: &[f64], radius: f64) -> (f64, usize) {
        let g = &self.grid;
        let r2 = radius * radius * (1.0 + GEOM_EPS);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..g.dim {
            let l = ((center[a] - radius - g.origin[a]) / g.h).ceil().max(0.0);
            let u = ((center[a] + radius - g.origin[a]) / g.h).floor();
            if u < 0.0 || l > (g.shape[a] - 1) as f64 || u < l {
                return (0.0, 0);
            }
            lo[a] = l as usize;
            hi[a] = (u as usize).min(g.shape[a] - 1);
        }
        let mut sum = 0.0;
        let mut count = 0;
        for i0 in lo[0]..=hi[0] {
            for i1 in lo[1]..=hi[1] {
                for i2 in lo[2]..=hi[2] {
                    let node = g.index([i0, i1, i2]);
                    let x = g.coords(node);
                    let d2: f64 = (0..g.dim).map(|a| (x[a] - center[a]).powi(2)).sum();
                    if d2 <= r2 {
                        sum += self.values[node];
                        count += 1;
                    }
                }
            }
        }
        (sum, count)
    }

    /// Writes the field as text: a metadata header, then one line per node
    /// with the index columns followed by the value.
    pub fn write_csv<W: Write>(&self, mut w: W, name: &str, extra: &[(&str, String)]) -> Result<()> {
        let g = &self.grid;
        let shape: Vec<String> = g.shape().iter().map(|s| s.to_string()).collect();
        let origin: Vec<String> = g.origin().iter().map(|o| format!("{o:e}")).collect();
        write!(
            w,
            "# grid n={} shape={} h={:e} origin={} field={}",
            g.dim,
            shape.join("x"),
            g.h,
            origin.join(","),
            name
        )?;
        for (k, v) in extra {
            write!(w, " {k}={v}")?;
        }
        writeln!(w)?;
        let cols: Vec<String> = (0..g.dim).map(|a| format!("i{a}")).collect();
        writeln!(w, "{},value", cols.join(","))?;
        for node in 0..g.len() {
            let m = g.multi_index(node);
            for a in 0..g.dim {
                write!(w, "{},", m[a])?;
            }
            writeln!(w, "{:e}", self.values[node])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, String)> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty input".into()))??;
        let header = header
            .strip_prefix("# grid ")
            .ok_or_else(|| Error::Parse("missing '# grid' header".into()))?;
        let mut dim = None;
        let mut shape = None;
        let mut h = None;
        let mut origin = None;
        let mut name = String::new();
        for tok in header.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse(format!("bad token {tok}")))?;
            let perr = |_| Error::Parse(format!("bad value in {tok}"));
            match k {
                "n" => dim = Some(v.parse::<usize>().map_err(|_| Error::Parse(tok.into()))?),
                "shape" => {
                    shape = Some(
                        v.split('x')
                            .map(|s| s.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| Error::Parse(tok.into()))?,
                    )
                }
                "h" => h = Some(v.parse::<f64>().map_err(perr)?),
                "origin" => {
                    origin = Some(
                        v.split(',')
                            .map(|s| s.parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| Error::Parse(tok.into()))?,
                    )
                }
                "field" => name = v.to_string(),
                _ => {}
            }
        }
        let shape = shape.ok_or_else(|| Error::Parse("header lacks shape".into()))?;
        let h = h.ok_or_else(|| Error::Parse("header lacks h".into()))?;
        let dim = dim.unwrap_or(shape.len());
        if dim != shape.len() {
            return Err(Error::Parse("dimension and shape disagree".into()));
        }
        let origin = origin.unwrap_or_else(|| vec![0.0; dim]);
        let grid = Grid::new(&shape, h, &origin)?;
        let mut values = vec![f64::NAN; grid.len()];
        let mut seen = 0usize;
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('i') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != dim + 1 {
                return Err(Error::Parse(format!("expected {} columns: {line}", dim + 1)));
            }
            let mut m = [0usize; 3];
            for a in 0..dim {
                m[a] = parts[a].trim().parse().map_err(|_| Error::Parse(line.to_string()))?;
                if m[a] >= shape[a] {
                    return Err(Error::Parse(format!("index out of range: {line}")));
                }
            }
            let v: f64 = parts[dim].trim().parse().map_err(|_| Error::Parse(line.to_string()))?;
            values[grid.index(m)] = v;
            seen += 1;
        }
        if seen != grid.len() {
            return Err(Error::Parse(format!("{seen} rows for {} nodes", grid.len())));
        }
        Ok((ScalarField::new(grid, values)?, name))
    }

    /// Flat little-endian binary: magic, dimension, shape, spacing, origin, values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(g.dim as u32).to_le_bytes())?;
        for a in 0..3 {
            w.write_all(&(g.shape[a] as u64).to_le_bytes())?;
        }
        w.write_all(&g.h.to_le_bytes())?;
        for a in 0..3 {
            w.write_all(&g.origin[a].to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        if !(1..=3).contains(&dim) {
            return Err(Error::Parse(format!("dimension {dim}")));
        }
        let mut shape = [0usize; 3];
        for s in shape.iter_mut() {
            r.read_exact(&mut b8)?;
            *s = u64::from_le_bytes(b8) as usize;
        }
        r.read_exact(&mut b8)?;
        let h = f64::from_le_bytes(b8);
        let mut origin = [0.0; 3];
        for o in origin.iter_mut() {
            r.read_exact(&mut b8)?;
            *o = f64::from_le_bytes(b8);
        }
        let grid = Grid::new(&shape[..dim], h, &origin[..dim])?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        ScalarField::new(grid, values)
    }
}

const BINARY_MAGIC: &[u8; 4] = b"LSF1";

/// Edges between axis neighbors, each listed once in the positive direction.
#[derive(Clone, Debug)]
pub struct EdgeSet {
    pub edges: Vec<(usize, usize, usize)>,
}

impl EdgeSet {
    /// All `(node, neighbor, axis)` with `neighbor = node + e_axis`.
    pub fn new(grid: &Grid) -> Self {
        let mut edges = Vec::new();
        for node in 0..grid.len() {
            for axis in 0..grid.dim() {
                if let Some(nb) = grid.neighbor(node, axis, 1) {
                    edges.push((node, nb, axis));
                }
            }
        }
        EdgeSet { edges }
    }
}

/// Index of the unordered pair `{j, k}` (`j < k`) in lexicographic order.
pub fn pair_index(dim: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < dim);
    let mut p = 0;
    for a in 0..j {
        p += dim - 1 - a;
    }
    p + (k - j - 1)
}

/// Antisymmetric node field `b_jk = -b_kj`, storing only `j < k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AntisymmetricField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl AntisymmetricField {
    pub fn zeros(grid: Grid) -> Self {
        let d = grid.dim();
        AntisymmetricField { grid, comps: vec![vec![0.0; grid.len()]; d * (d - 1) / 2] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn num_pairs(&self) -> usize {
        self.comps.len()
    }

    pub fn get(&self, node: usize, j: usize, k: usize) -> f64 {
        match j.cmp(&k) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.comps[pair_index(self.grid.dim(), j, k)][node],
            std::cmp::Ordering::Greater => -self.comps[pair_index(self.grid.dim(), k, j)][node],
        }
    }

    /// Sets `b_jk = value` and therefore `b_kj = -value`.
    pub fn set(&mut self, node: usize, j: usize, k: usize, value: f64) {
        assert_ne!(j, k, "diagonal entries of an antisymmetric field are zero");
        if j < k {
            self.comps[pair_index(self.grid.dim(), j, k)][node] = value;
        } else {
            self.comps[pair_index(self.grid.dim(), k, j)][node] = -value;
        }
    }

    /// Component `b_jk` for `j < k` as a slice over nodes.
    pub fn component(&self, j: usize, k: usize) -> &[f64] {
        &self.comps[pair_index(self.grid.dim(), j, k)]
    }

    /// `|B|(x) = Σ_{j<k} |b_jk(x)|`.
    pub fn abs_sum(&self) -> ScalarField {
        let mut v = vec![0.0; self.grid.len()];
        for c in &self.comps {
            for (acc, x) in v.iter_mut().zip(c) {
                *acc += x.abs();
            }
        }
        ScalarField { grid: self.grid, values: v }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Lattice offsets sorted by Euclidean length, grouped into shells of equal
/// length. Used to accumulate ball integrals incrementally.
#[derive(Clone, Debug)]
pub struct BallOffsets {
    /// Offsets (in node units) sorted by squared length.
    pub offsets: Vec<[i64; 3]>,
    /// Squared lengths in node units, aligned with `offsets`.
    pub norm2: Vec<i64>,
}

impl BallOffsets {
    /// All offsets with length at most `radius_nodes` (in node units).
    pub fn new(dim: usize, radius_nodes: f64) -> Self {
        let r = radius_nodes.floor() as i64;
        let r2 = (radius_nodes * radius_nodes).floor() as i64;
        let span = |a: usize| if a < dim { -r..=r } else { 0..=0 };
        let mut items = Vec::new();
        for i in span(0) {
            for j in span(1) {
                for k in span(2) {
                    let n2 = i * i + j * j + k * k;
                    if n2 <= r2 {
                        items.push((n2, [i, j, k]));
                    }
                }
            }
        }
        items.sort_by_key(|&(n2, o)| (n2, o));
        BallOffsets {
            offsets: items.iter().map(|x| x.1).collect(),
            norm2: items.iter().map(|x| x.0).collect(),
        }
    }

    /// Number of offsets with squared length `<= n2`.
    pub fn count_within(&self, n2: i64) -> usize {
        self.norm2.partition_point(|&x| x <= n2)
    }
}
