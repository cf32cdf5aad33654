//! Potential and magnetic-field generators, plus sampled checks of the
//! reverse Hölder, scale-invariant Kato and high-mass doubling conditions.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AntisymmetricField, BallOffsets, Grid, ScalarField};

/// A monomial `coeff · x0^p0 · x1^p1 · x2^p2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: [u32; 3],
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(terms: Vec<Monomial>) -> Self {
        Polynomial { terms }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![Monomial { coeff: c, powers: [0; 3] }])
    }

    /// `x0² + x1² + ... ` over the first `dim` axes.
    pub fn squared_norm(dim: usize) -> Self {
        Polynomial::new(
            (0..dim)
                .map(|a| {
                    let mut p = [0; 3];
                    p[a] = 2;
                    Monomial { coeff: 1.0, powers: p }
                })
                .collect(),
        )
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|t| t.coeff != 0.0)
            .map(|t| t.powers.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * x[0].powi(t.powers[0] as i32) * x[1].powi(t.powers[1] as i32) * x[2].powi(t.powers[2] as i32))
            .sum()
    }

    /// The partial derivative `∂^beta P`, computed exactly.
    pub fn derivative(&self, beta: [u32; 3]) -> Polynomial {
        let mut terms = Vec::new();
        'term: for t in &self.terms {
            let mut c = t.coeff;
            let mut p = t.powers;
            for a in 0..3 {
                for _ in 0..beta[a] {
                    if p[a] == 0 {
                        continue 'term;
                    }
                    c *= p[a] as f64;
                    p[a] -= 1;
                }
            }
            terms.push(Monomial { coeff: c, powers: p });
        }
        Polynomial { terms }
    }
}

/// A ball-shaped well used by [`PotentialSpec::Wells`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Well {
    pub center: Vec<f64>,
    pub radius: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    Constant {
        value: f64,
    },
    /// `amplitude · |x - center|^alpha`; cells containing the singular point
    /// carry the exact cell average when `alpha < 0`.
    Power {
        alpha: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// `|P(x)|^alpha`.
    Polynomial {
        polynomial: Polynomial,
        alpha: f64,
    },
    /// `amplitude · exp(-rate |x|) + offset`.
    Exponential {
        #[serde(default = "one")]
        rate: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `inside` on the union of the balls, `outside` elsewhere.
    Wells {
        wells: Vec<Well>,
        inside: f64,
        outside: f64,
    },
    /// Independent values per node: with probability `density` a node gets
    /// a uniform sample from `[low, high)`, otherwise zero.
    RandomUniform {
        low: f64,
        high: f64,
        seed: u64,
        #[serde(default = "one")]
        density: f64,
    },
    /// Node values read from a field CSV file on the same grid.
    Table {
        path: String,
    },
}

impl PotentialSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            PotentialSpec::Constant { value } if !value.is_finite() => bad("constant must be finite".into()),
            PotentialSpec::Power { alpha, amplitude, center } => {
                if !(alpha.is_finite() && *alpha > -2.0) {
                    return bad(format!("power exponent {alpha} must exceed -2"));
                }
                if *alpha <= -(dim as f64) {
                    return bad(format!("|x|^{alpha} is not locally integrable in dimension {dim}"));
                }
                if !amplitude.is_finite() {
                    return bad("amplitude must be finite".into());
                }
                if let Some(c) = center {
                    if c.len() != dim {
                        return bad("center length differs from dimension".into());
                    }
                }
                Ok(())
            }
            PotentialSpec::Polynomial { polynomial, alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return bad(format!("polynomial exponent {alpha} must be positive"));
                }
                if polynomial.degree() > 4 {
                    return bad("polynomial degree above 4".into());
                }
                Ok(())
            }
            PotentialSpec::Exponential { rate, amplitude, offset } => {
                if !(rate.is_finite() && amplitude.is_finite() && offset.is_finite()) {
                    return bad("exponential parameters must be finite".into());
                }
                Ok(())
            }
            PotentialSpec::Wells { wells, inside, outside } => {
                if !(inside.is_finite() && outside.is_finite()) {
                    return bad("well values must be finite".into());
                }
                if wells.iter().any(|w| w.center.len() != dim || !(w.radius > 0.0)) {
                    return bad("each well needs a center of the grid dimension and a positive radius".into());
                }
                Ok(())
            }
            PotentialSpec::RandomUniform { low, high, density, .. } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return bad("random range must satisfy low <= high".into());
                }
                if !(0.0..=1.0).contains(density) {
                    return bad("density must lie in [0, 1]".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Whether the generated field is guaranteed to be nonnegative.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            PotentialSpec::Constant { value } => *value >= 0.0,
            PotentialSpec::Power { amplitude, .. } => *amplitude >= 0.0,
            PotentialSpec::Polynomial { .. } => true,
            PotentialSpec::Exponential { amplitude, offset, .. } => *amplitude >= 0.0 && *offset >= 0.0,
            PotentialSpec::Wells { inside, outside, .. } => *inside >= 0.0 && *outside >= 0.0,
            PotentialSpec::RandomUniform { low, .. } => *low >= 0.0,
            PotentialSpec::Table { .. } => false,
        }
    }
}

/// Samples a potential on the grid.
pub fn generate_potential(spec: &PotentialSpec, grid: &Grid) -> Result<ScalarField> {
    let dim = grid.dim();
    spec.validate(dim)?;
    let g = *grid;
    match spec {
        PotentialSpec::Constant { value } => Ok(ScalarField::constant(g, *value)),
        PotentialSpec::Power { alpha, amplitude, center } => {
            let c = center.clone().unwrap_or_else(|| vec![0.0; dim]);
            let h = g.h();
            let values = (0..g.len())
                .into_par_iter()
                .map(|n| {
                    let x = g.coords(n);
                    let mut lower = [0.0; 3];
                    let mut upper = [0.0; 3];
                    let mut singular_cell = *alpha < 0.0;
                    for a in 0..dim {
                        lower[a] = x[a] - 0.5 * h - c[a];
                        upper[a] = x[a] + 0.5 * h - c[a];
                        singular_cell &= lower[a] <= 0.0 && upper[a] >= 0.0;
                    }
                    if singular_cell {
                        amplitude * power_cell_average(dim, *alpha, &lower[..dim], &upper[..dim])
                    } else {
                        let r: f64 = (0..dim).map(|a| (x[a] - c[a]).powi(2)).sum::<f64>().sqrt();
                        amplitude * r.powf(*alpha)
                    }
                })
                .collect();
            ScalarField::new(g, values)
        }
        PotentialSpec::Polynomial { polynomial, alpha } => {
            ScalarField::from_fn(g, |x| polynomial.eval(x).abs().powf(*alpha))
        }
        PotentialSpec::Exponential { rate, amplitude, offset } => ScalarField::from_fn(g, |x| {
            let r = (0..dim).map(|a| x[a] * x[a]).sum::<f64>().sqrt();
            amplitude * (-rate * r).exp() + offset
        }),
        PotentialSpec::Wells { wells, inside, outside } => ScalarField::from_fn(g, |x| {
            let hit = wells.iter().any(|w| {
                let d2: f64 = (0..dim).map(|a| (x[a] - w.center[a]).powi(2)).sum();
                d2 <= w.radius * w.radius
            });
            if hit {
                *inside
            } else {
                *outside
            }
        }),
        PotentialSpec::RandomUniform { low, high, seed, density } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let values = (0..g.len())
                .map(|_| {
                    let keep = rng.gen::<f64>() < *density;
                    let v = rng.gen_range(*low..=*high);
                    if keep {
                        v
                    } else {
                        0.0
                    }
                })
                .collect();
            ScalarField::new(g, values)
        }
        PotentialSpec::Table { path } => {
            let file = std::fs::File::open(path)?;
            let (field, _) = ScalarField::read_csv(std::io::BufReader::new(file))?;
            if field.grid() != grid {
                return Err(Error::InvalidField(format!("table {path} is defined on a different grid")));
            }
            Ok(field)
        }
    }
}

fn gauss_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        GaussLegendre::new(NonZeroUsize::new(10).expect("nonzero"))
            .as_node_weight_pairs()
            .to_vec()
    })
}

fn tensor_gauss(dim: usize, lo: &[f64], hi: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let rule = gauss_rule();
    let q = rule.len();
    let mut total = 0.0;
    let mut idx = [0usize; 3];
    let count = q.pow(dim as u32);
    let mut p = [0.0; 3];
    for flat in 0..count {
        let mut rem = flat;
        for i in idx.iter_mut().take(dim) {
            *i = rem % q;
            rem /= q;
        }
        let mut w = 1.0;
        for a in 0..dim {
            let (t, wt) = rule[idx[a]];
            let half = 0.5 * (hi[a] - lo[a]);
            p[a] = lo[a] + half * (t + 1.0);
            w *= wt * half;
        }
        total += w * f(&p[..dim]);
    }
    total
}

/// Adaptive tensor Gauss–Legendre quadrature for integrands smooth on the box.
fn adaptive_box(dim: usize, lo: &[f64], hi: &[f64], f: &dyn Fn(&[f64]) -> f64, depth: u32) -> f64 {
    let whole = tensor_gauss(dim, lo, hi, f);
    let mut split = 0.0;
    for corner in 0..(1usize << dim) {
        let mut clo = [0.0; 3];
        let mut chi = [0.0; 3];
        for a in 0..dim {
            let mid = 0.5 * (lo[a] + hi[a]);
            if corner >> a & 1 == 0 {
                clo[a] = lo[a];
                chi[a] = mid;
            } else {
                clo[a] = mid;
                chi[a] = hi[a];
            }
        }
        split += tensor_gauss(dim, &clo[..dim], &chi[..dim], f);
    }
    if depth == 0 || (whole - split).abs() <= 1e-12 * split.abs().max(1e-300) {
        return split;
    }
    let mut sum = 0.0;
    for corner in 0..(1usize << dim) {
        let mut clo = [0.0; 3];
        let mut chi = [0.0; 3];
        for a in 0..dim {
            let mid = 0.5 * (lo[a] + hi[a]);
            if corner >> a & 1 == 0 {
                clo[a] = lo[a];
                chi[a] = mid;
            } else {
                clo[a] = mid;
                chi[a] = hi[a];
            }
        }
        sum += adaptive_box(dim, &clo[..dim], &chi[..dim], f, depth - 1);
    }
    sum
}

fn radial_power(alpha: f64) -> impl Fn(&[f64]) -> f64 {
    move |y: &[f64]| y.iter().map(|v| v * v).sum::<f64>().sqrt().powf(alpha)
}

/// `∫_{[0,1]^dim} |y|^alpha dy`, via the self-similar split of the unit cube
/// into `[0,1/2]^dim` and a remainder that stays away from the origin.
fn unit_cube_power_integral(dim: usize, alpha: f64) -> f64 {
    let f = radial_power(alpha);
    let mut rest = 0.0;
    for corner in 1..(1usize << dim) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..dim {
            if corner >> a & 1 == 0 {
                hi[a] = 0.5;
            } else {
                lo[a] = 0.5;
                hi[a] = 1.0;
            }
        }
        rest += adaptive_box(dim, &lo[..dim], &hi[..dim], &f, 8);
    }
    rest / (1.0 - 0.5f64.powf(dim as f64 + alpha))
}

/// `∫_{Π[0, s_a]} |y|^alpha dy` for a box with the singular point at a corner.
fn corner_box_power_integral(dim: usize, alpha: f64, s: &[f64]) -> f64 {
    if s.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    let cube = smin.powf(dim as f64 + alpha) * unit_cube_power_integral(dim, alpha);
    let f = radial_power(alpha);
    let mut rest = 0.0;
    for corner in 1..(1usize << dim) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut empty = false;
        for a in 0..dim {
            if corner >> a & 1 == 0 {
                hi[a] = smin;
            } else {
                lo[a] = smin;
                hi[a] = s[a];
                empty |= s[a] <= smin;
            }
        }
        if !empty {
            rest += adaptive_box(dim, &lo[..dim], &hi[..dim], &f, 8);
        }
    }
    cube + rest
}

/// Average of `|y|^alpha` over the box `Π[lower_a, upper_a]`, which must
/// contain the origin.
pub fn power_cell_average(dim: usize, alpha: f64, lower: &[f64], upper: &[f64]) -> f64 {
    let mut total = 0.0;
    for orthant in 0..(1usize << dim) {
        let mut s = [0.0; 3];
        for a in 0..dim {
            s[a] = if orthant >> a & 1 == 0 { upper[a] } else { -lower[a] };
        }
        total += corner_box_power_integral(dim, alpha, &s[..dim]);
    }
    let vol: f64 = (0..dim).map(|a| upper[a] - lower[a]).product();
    total / vol
}

/// Average of `alpha |t|^(alpha-1)` over `[lo, hi]`.
fn hoelder_derivative_average(alpha: f64, lo: f64, hi: f64) -> f64 {
    let prim = |t: f64| t.signum() * t.abs().powf(alpha);
    (prim(hi) - prim(lo)) / (hi - lo)
}

/// Vector potential and field of the cyclic Hölder example in three
/// dimensions: `a_j(x) = sgn(x_{j+1}) |x_{j+1}|^alpha` (indices mod 3) and
/// `b_{j,j+1} = alpha |x_{j+1}|^(alpha-1)`.
#[derive(Clone, Debug)]
pub struct Example1Field {
    pub a: [ScalarField; 3],
    pub b: AntisymmetricField,
}

pub fn example1_vector_potential(alpha: f64, x: [f64; 3]) -> [f64; 3] {
    let f = |t: f64| t.signum() * t.abs().powf(alpha);
    [f(x[1]), f(x[2]), f(x[0])]
}

pub fn generate_example1_field(alpha: f64, grid: &Grid) -> Result<Example1Field> {
    if grid.dim() != 3 {
        return Err(Error::Unsupported(format!("the cyclic field needs dimension 3, got {}", grid.dim())));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("exponent {alpha} not in (0,1)")));
    }
    let g = *grid;
    let comp = |j: usize| ScalarField::from_fn(g, |x| example1_vector_potential(alpha, x)[j]);
    let a = [comp(0)?, comp(1)?, comp(2)?];
    let mut b = AntisymmetricField::zeros(g);
    let h = g.h();
    for node in 0..g.len() {
        let x = g.coords(node);
        for j in 0..3 {
            let k = (j + 1) % 3;
            let t = x[k];
            let value = if t - 0.5 * h <= 0.0 && t + 0.5 * h >= 0.0 {
                hoelder_derivative_average(alpha, t - 0.5 * h, t + 0.5 * h)
            } else {
                alpha * t.abs().powf(alpha - 1.0)
            };
            b.set(node, j, k, value);
        }
    }
    Ok(Example1Field { a, b })
}

/// Magnetic vector potential families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VectorPotentialSpec {
    Zero,
    /// Constant field with independent components `b_jk`, `j < k`, listed in
    /// lexicographic pair order; realized in the symmetric gauge
    /// `a_j(x) = ½ Σ_k b_jk x_k`.
    ConstantField { b: Vec<f64> },
    /// The cyclic Hölder field in three dimensions.
    Example1 { alpha: f64 },
    /// One field CSV per component of `a`, all on the instance grid.
    Table { paths: Vec<String> },
}

impl VectorPotentialSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            VectorPotentialSpec::Zero => Ok(()),
            VectorPotentialSpec::ConstantField { b } => {
                if b.len() != dim * (dim - 1) / 2 || b.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "constant field needs {} finite components",
                        dim * (dim - 1) / 2
                    )));
                }
                Ok(())
            }
            VectorPotentialSpec::Example1 { alpha } => {
                if dim != 3 {
                    return Err(Error::Unsupported("the cyclic field needs dimension 3".into()));
                }
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(Error::InvalidParameter(format!("exponent {alpha} not in (0,1)")));
                }
                Ok(())
            }
            VectorPotentialSpec::Table { paths } => {
                if paths.len() != dim {
                    return Err(Error::InvalidParameter("one table per component required".into()));
                }
                Ok(())
            }
        }
    }
}

/// Sampled reverse Hölder characteristic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReverseHolderReport {
    pub q: f64,
    pub characteristic: f64,
    pub balls: usize,
}

/// `max over balls of (avg f^q)^{1/q} / avg f` for node-count ball averages.
fn rh_ratio(field: &ScalarField, q: f64, center: usize, offsets: &BallOffsets, n2: i64) -> Option<f64> {
    let g = field.grid();
    let count = offsets.count_within(n2);
    let mut s1 = 0.0;
    let mut sq = 0.0;
    let mut used = 0usize;
    for o in &offsets.offsets[..count] {
        if let Some(node) = g.offset(center, *o) {
            let v = field.get(node);
            s1 += v;
            sq += v.powf(q);
            used += 1;
        }
    }
    if used == 0 {
        return None;
    }
    let avg = s1 / used as f64;
    let avgq = (sq / used as f64).powf(1.0 / q);
    if avg == 0.0 {
        return Some(if avgq == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Some(avgq / avg)
}

/// Random balls (seeded) with centers at nodes and radii log-uniform between
/// `h` and the inscribed radius of the center.
pub fn check_reverse_holder(field: &ScalarField, q: f64, sample_balls: usize, seed: u64) -> Result<ReverseHolderReport> {
    if !(q > 1.0) {
        return Err(Error::InvalidParameter(format!("exponent {q} must exceed 1")));
    }
    if field.min() < 0.0 {
        return Err(Error::InvalidField("reverse Hölder check needs a nonnegative field".into()));
    }
    let g = field.grid();
    let candidates: Vec<usize> = (0..g.len()).filter(|&n| g.distance_to_boundary(n) >= g.h()).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidGrid("grid too small for ball sampling".into()));
    }
    let rmax = candidates.iter().map(|&n| g.distance_to_boundary(n)).fold(0.0, f64::max) / g.h();
    let offsets = BallOffsets::new(g.dim(), rmax);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 1.0;
    for _ in 0..sample_balls {
        let c = candidates[rng.gen_range(0..candidates.len())];
        let inscribed = g.distance_to_boundary(c) / g.h();
        let r = inscribed.powf(rng.gen::<f64>());
        let n2 = (r * r).floor() as i64;
        if let Some(v) = rh_ratio(field, q, c, &offsets, n2.max(1)) {
            worst = worst.max(v);
        }
    }
    Ok(ReverseHolderReport { q, characteristic: worst, balls: sample_balls })
}

/// Reverse Hölder characteristic over every node-centered ball inscribed in
/// the grid, for every radius shell. Intended for small grids.
pub fn reverse_holder_exhaustive(field: &ScalarField, q: f64) -> f64 {
    let g = field.grid();
    let rmax = (0..g.len()).map(|n| g.distance_to_boundary(n)).fold(0.0, f64::max) / g.h();
    let offsets = BallOffsets::new(g.dim(), rmax);
    let mut shells: Vec<i64> = offsets.norm2.clone();
    shells.dedup();
    let mut worst: f64 = 1.0;
    for c in 0..g.len() {
        let ins = g.distance_to_boundary(c) / g.h();
        let lim = (ins * ins).floor() as i64;
        for &n2 in shells.iter().filter(|&&s| s >= 1 && s <= lim) {
            if let Some(v) = rh_ratio(field, q, c, &offsets, n2) {
                worst = worst.max(v);
            }
        }
    }
    worst
}

/// Reference constant at which the Kato exponent is fitted.
pub const KATO_REFERENCE_C0: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityReport {
    /// Constant at which `kato_delta` was fitted.
    pub kato_c0: f64,
    /// Largest exponent with `∫_{B_r} V ≤ C0 (r/R)^{n-2+δ} ∫_{B_R} V` on all
    /// sampled triples.
    pub kato_delta: f64,
    /// Smallest constant with `∫_{B_2r} V ≤ C1 (∫_{B_r} V + r^{n-2})` on all
    /// sampled pairs.
    pub doubling_c1: f64,
    pub is_shen_potential: bool,
    /// Equals `kato_delta`; positive values indicate the classification margin.
    pub margin: f64,
    pub samples: usize,
}

/// Cumulative ball integrals `h^n Σ_{|y-x| ≤ r} V(y)` at the radii of a
/// geometric ladder `h·2^{k/2}` up to the inscribed radius of `center`.
fn radial_profile(field: &ScalarField, center: usize, offsets: &BallOffsets) -> Vec<(f64, f64)> {
    let g = field.grid();
    let h = g.h();
    let ins = g.distance_to_boundary(center) / h;
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut pos = 0usize;
    let mut k = 0;
    loop {
        let r = 2f64.powf(k as f64 / 2.0);
        if r > ins + 1e-9 {
            break;
        }
        let n2 = (r * r + 1e-9).floor() as i64;
        let end = offsets.count_within(n2);
        while pos < end {
            if let Some(node) = g.offset(center, offsets.offsets[pos]) {
                acc += field.get(node);
            }
            pos += 1;
        }
        out.push((r * h, acc * g.cell_volume()));
        k += 1;
    }
    out
}

/// Fits (V1) at the reference constant and (V2) over sampled centers; every
/// pair of ladder radii at a sampled center is tested.
pub fn check_kato_and_doubling(field: &ScalarField, samples: usize, seed: u64) -> Result<RegularityReport> {
    if field.min() < 0.0 {
        return Err(Error::InvalidField("Kato/doubling check needs a nonnegative field".into()));
    }
    let g = field.grid();
    let n = g.dim() as f64;
    let candidates: Vec<usize> = (0..g.len()).filter(|&c| g.distance_to_boundary(c) >= 2.0 * g.h()).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidGrid("grid too small for the Kato/doubling fit".into()));
    }
    let rmax = candidates.iter().map(|&c| g.distance_to_boundary(c)).fold(0.0, f64::max) / g.h();
    let offsets = BallOffsets::new(g.dim(), rmax + 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<usize> = (0..samples).map(|_| candidates[rng.gen_range(0..candidates.len())]).collect();
    let per_center: Vec<(f64, f64)> = centers
        .par_iter()
        .map(|&c| {
            let prof = radial_profile(field, c, &offsets);
            let mut delta = f64::INFINITY;
            let mut c1: f64 = 1.0;
            for (i, &(r, ir)) in prof.iter().enumerate() {
                for &(big_r, ibig) in &prof[i + 1..] {
                    if ir <= 0.0 {
                        continue;
                    }
                    let local = (KATO_REFERENCE_C0 * ibig / ir).ln() / (big_r / r).ln() - (n - 2.0);
                    delta = delta.min(local);
                }
                // Ladder step is sqrt(2), so index i + 2 doubles the radius.
                if let Some(&(_, i2r)) = prof.get(i + 2) {
                    c1 = c1.max(i2r / (ir + r.powf(n - 2.0)));
                }
            }
            (delta, c1)
        })
        .collect();
    let delta = per_center.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let c1 = per_center.iter().map(|p| p.1).fold(1.0, f64::max);
    let delta = if delta.is_finite() { delta } else { f64::NEG_INFINITY };
    Ok(RegularityReport {
        kato_c0: KATO_REFERENCE_C0,
        kato_delta: delta,
        doubling_c1: c1,
        is_shen_potential: delta > 0.0 && c1.is_finite(),
        margin: delta,
        samples,
    })
}
