//! Grids, fields and operators built from an instance section.

use anyhow::{Context, Result};
use landscape_core::grid::{Grid, Region, ScalarField};
use landscape_core::landscape::surrogate_potential;
use landscape_core::operators::{
    assemble_magnetic, assemble_real, build_magnetic, enumerate_admissible_selections, ComplexOperator, MagneticData, MatrixField,
    RealOperator, Selection,
};
use landscape_core::potentials::{generate_potential, VectorPotentialSpec};

use crate::config::{Config, InstanceConfig};

pub struct Magnetic {
    pub data: MagneticData,
    pub selection: Selection,
    /// `V + Σ_S b_jk`, the potential of the surrogate operator.
    pub surrogate: ScalarField,
    pub operator: ComplexOperator,
}

pub struct Instance {
    pub grid: Grid,
    pub a: MatrixField,
    pub v: ScalarField,
    pub real: RealOperator,
    pub magnetic: Option<Magnetic>,
    pub window: Region,
}

impl Instance {
    pub fn build(cfg: &Config) -> Result<Self> {
        let ic = &cfg.instance;
        let grid = build_grid(ic)?;
        let a = match &ic.coefficients {
            None => MatrixField::identity(ic.dim),
            Some(c) => {
                let mut m = [[0.0; 3]; 3];
                for (i, row) in c.matrix.iter().enumerate() {
                    m[i][..row.len()].copy_from_slice(row);
                }
                MatrixField::constant(ic.dim, m, c.lambda)?
            }
        };
        let v = generate_potential(&ic.potential, &grid).context("generating the potential")?;
        let real = assemble_real(&grid, &a, &v)?;
        let magnetic = match &ic.magnetic {
            None | Some(VectorPotentialSpec::Zero) => None,
            Some(spec) => Some(build_magnetic_instance(ic, spec, &grid, &v)?),
        };
        let window = match &cfg.run.window {
            Some(w) => Region::new(&w.lower, &w.upper),
            None => central_half(&grid),
        };
        Ok(Instance { grid, a, v, real, magnetic, window })
    }

    /// Potential fed to the maximal function: `V`, or the surrogate for a
    /// magnetic instance.
    pub fn weight(&self) -> &ScalarField {
        self.magnetic.as_ref().map_or(&self.v, |m| &m.surrogate)
    }

    /// `|B| = Σ_{j<k} |b_jk|`, zero without a field.
    pub fn field_strength(&self) -> ScalarField {
        self.magnetic.as_ref().map_or_else(|| ScalarField::constant(self.grid, 0.0), |m| m.data.field.abs_sum())
    }

    pub fn center_node(&self) -> usize {
        let up = self.grid.upper();
        let c: Vec<f64> = (0..self.grid.dim()).map(|k| 0.5 * (self.grid.origin()[k] + up[k])).collect();
        self.grid.nearest_node(&c)
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "dim": self.grid.dim(),
            "shape": &self.grid.shape()[..self.grid.dim()],
            "h": self.grid.h(),
            "origin": self.grid.origin(),
            "magnetic": self.magnetic.as_ref().map(|m| m.selection.to_string()),
        })
    }
}

fn build_grid(ic: &InstanceConfig) -> Result<Grid> {
    let g = match (&ic.half_width, &ic.lower, &ic.upper) {
        (Some(r), _, _) => Grid::centered_cube(ic.dim, *r, ic.h)?,
        (None, Some(lo), Some(hi)) => Grid::from_bounds(lo, hi, ic.h)?,
        _ => unreachable!("validated config"),
    };
    Ok(g)
}

fn build_magnetic_instance(ic: &InstanceConfig, spec: &VectorPotentialSpec, grid: &Grid, v: &ScalarField) -> Result<Magnetic> {
    let data = build_magnetic(spec, grid, ic.rotation.as_ref()).context("building the magnetic field")?;
    let selection = match &ic.selection {
        Some(pairs) => {
            let zero_based: Vec<(usize, usize)> = pairs.iter().map(|[j, k]| (j.wrapping_sub(1), k.wrapping_sub(1))).collect();
            Selection::from_pairs(ic.dim, &zero_based)?
        }
        None => {
            let rep = enumerate_admissible_selections(&data.field, v)?;
            match rep.maximal.filter(|m| rep.admissible.contains(m)).or_else(|| rep.admissible.first().copied()) {
                Some(s) => s,
                None => anyhow::bail!("no admissible selection: |B| + V changes sign for every choice"),
            }
        }
    };
    let surrogate = surrogate_potential(&data.field, v, &selection).context("surrogate potential")?;
    let operator = assemble_magnetic(grid, &data.phases, v)?;
    Ok(Magnetic { data, selection, surrogate, operator })
}

fn central_half(g: &Grid) -> Region {
    let up = g.upper();
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for k in 0..g.dim() {
        let c = 0.5 * (g.origin()[k] + up[k]);
        let r = 0.25 * (up[k] - g.origin()[k]);
        lo.push(c - r);
        hi.push(c + r);
    }
    Region::new(&lo, &hi)
}
