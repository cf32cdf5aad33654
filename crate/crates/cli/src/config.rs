//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use landscape_core::potentials::{PotentialSpec, VectorPotentialSpec};
use serde::{Deserialize, Serialize};

/// Configurations shipped inside the binary, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("yukawa-smoke", include_str!("../configs/yukawa-smoke.toml")),
    ("example1-magnetic", include_str!("../configs/example1-magnetic.toml")),
];

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub instance: InstanceConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub dim: usize,
    pub h: f64,
    /// Cube `[-half_width, half_width]^dim`; alternative to `lower`/`upper`.
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub magnetic: Option<VectorPotentialSpec>,
    /// Ordered 1-based index pairs; the maximal admissible selection is used
    /// when absent.
    #[serde(default)]
    pub selection: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default)]
    pub coefficients: Option<CoefficientConfig>,
}

/// Constant coefficient matrix `A` with ellipticity constant `lambda`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub matrix: Vec<Vec<f64>>,
    pub lambda: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExhaustionConfig {
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    pub r0: f64,
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DyadicConfig {
    /// Thresholds `μ ≤ 0`.
    pub mu: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "default_dyadic_alpha")]
    pub alpha: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Steps run by `all`, in order.
    pub experiments: Vec<Step>,
    pub seed: u64,
    /// Normalization constant of the maximal function.
    pub c1: f64,
    pub landscape_tol: f64,
    pub eigen_tol: f64,
    pub eigenpairs: usize,
    pub mu_ladder: Vec<f64>,
    pub eps_ladder: Vec<f64>,
    pub t_ladder: Vec<f64>,
    /// Decay rate of the resolvent check.
    pub alpha: f64,
    pub test_functions: usize,
    pub samples: usize,
    pub spread_cap: f64,
    /// Evaluation window of the pointwise checks; the central half of the
    /// box when absent.
    pub window: Option<WindowConfig>,
    /// Source points of the Agmon distance; the box center when empty.
    pub sources: Vec<Vec<f64>>,
    /// Checks run by `verify`; a default set depending on the instance when
    /// empty.
    pub checks: Vec<Check>,
    pub exhaustion: Option<ExhaustionConfig>,
    pub dyadic: Option<DyadicConfig>,
    /// Marks every report as an expected failure.
    pub negative_control: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiments: vec![Step::Landscape, Step::Maximal, Step::Agmon, Step::Spectrum, Step::Counting, Step::Verify],
            seed: 1,
            c1: 1.0,
            landscape_tol: 1e-12,
            eigen_tol: 1e-8,
            eigenpairs: 4,
            mu_ladder: vec![1.0, 2.0, 4.0, 8.0],
            eps_ladder: vec![0.1, 0.2],
            t_ladder: vec![0.5, 1.0, 2.0],
            alpha: 0.2,
            test_functions: 50,
            samples: 400,
            spread_cap: 50.0,
            window: None,
            sources: Vec::new(),
            checks: Vec::new(),
            exhaustion: None,
            dyadic: None,
            negative_control: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    Landscape,
    Maximal,
    Agmon,
    Spectrum,
    Counting,
    Verify,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::Landscape => "landscape",
            Step::Maximal => "maximal",
            Step::Agmon => "agmon",
            Step::Spectrum => "spectrum",
            Step::Counting => "counting",
            Step::Verify => "verify",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Uncertainty,
    FeffermanPhong,
    LandscapeVsMaximal,
    Harnack,
    LaxMilgram,
    EigenfunctionDecay,
    GreenDecay,
    ResolventDecay,
    Diamagnetic,
    Gauge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
    /// Also export the assembled operator in Matrix Market format.
    pub matrix_market: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("landscape-out"), formats: vec![Format::Csv, Format::Json], matrix_market: false }
    }
}

fn default_stages() -> usize {
    4
}
fn default_stop_tol() -> f64 {
    1e-4
}
fn default_p() -> f64 {
    2.0
}
fn one() -> f64 {
    1.0
}
fn default_dyadic_alpha() -> f64 {
    0.5
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, or a bundled config when `source` names one and
    /// no such file exists. Relative table paths are resolved against the
    /// file's directory.
    pub fn load(source: &str) -> Result<Self> {
        let path = Path::new(source);
        if !path.exists() {
            if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| *name == source) {
                return Config::parse(text).with_context(|| format!("bundled config {source}"));
            }
            let names: Vec<&str> = BUNDLED.iter().map(|b| b.0).collect();
            bail!("config {source} not found (bundled configs: {})", names.join(", "));
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Config::parse(&text).with_context(|| format!("in {}", path.display()))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut String| {
            if Path::new(p.as_str()).is_relative() {
                *p = dir.join(&*p).to_string_lossy().into_owned();
            }
        };
        if let PotentialSpec::Table { path } = &mut self.instance.potential {
            fix(path);
        }
        if let Some(VectorPotentialSpec::Table { paths }) = &mut self.instance.magnetic {
            paths.iter_mut().for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.instance;
        if !(1..=3).contains(&i.dim) {
            bail!("dimension {} must be 1, 2 or 3", i.dim);
        }
        if !(i.h > 0.0 && i.h.is_finite()) {
            bail!("grid spacing must be positive");
        }
        match (&i.half_width, &i.lower, &i.upper) {
            (Some(r), None, None) if *r > 0.0 => {}
            (None, Some(lo), Some(hi)) if lo.len() == i.dim && hi.len() == i.dim => {}
            _ => bail!("give either half_width > 0 or lower and upper with {} entries", i.dim),
        }
        i.potential.validate(i.dim)?;
        if let Some(m) = &i.magnetic {
            m.validate(i.dim)?;
        }
        if let Some(c) = &i.coefficients {
            if c.matrix.len() != i.dim || c.matrix.iter().any(|r| r.len() != i.dim) {
                bail!("coefficient matrix must be {0}x{0}", i.dim);
            }
        }
        let r = &self.run;
        if r.eigenpairs == 0 {
            bail!("eigenpairs must be positive");
        }
        if !(r.c1 > 0.0) || !(r.landscape_tol > 0.0) || !(r.eigen_tol > 0.0) {
            bail!("c1 and tolerances must be positive");
        }
        if r.mu_ladder.iter().chain(&r.eps_ladder).chain(&r.t_ladder).any(|x| !(*x > 0.0 && x.is_finite())) {
            bail!("ladders must hold positive finite values");
        }
        if r.test_functions == 0 || r.samples == 0 {
            bail!("test_functions and samples must be positive");
        }
        if let Some(w) = &r.window {
            if w.lower.len() != i.dim || w.upper.len() != i.dim {
                bail!("window bounds need {} entries", i.dim);
            }
        }
        if r.sources.iter().any(|s| s.len() != i.dim) {
            bail!("source points need {} coordinates", i.dim);
        }
        if let Some(e) = &r.exhaustion {
            if !(e.r0 > 0.0 && e.stop_tol > 0.0) || e.stages == 0 {
                bail!("exhaustion needs r0 > 0, stop_tol > 0 and at least one stage");
            }
            if e.center.as_ref().is_some_and(|c| c.len() != i.dim) {
                bail!("exhaustion center needs {} coordinates", i.dim);
            }
        }
        if let Some(d) = &r.dyadic {
            if d.mu.iter().any(|m| *m > 0.0) {
                bail!("dyadic thresholds must be <= 0");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse() {
        for (name, text) in BUNDLED {
            Config::parse(text).unwrap_or_else(|e| panic!("{name}: {e:#}"));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[instance]\ndim = 2\nh = 0.1\nhalf_width = 1.0\ncolour = 3\n[instance.potential]\nkind = \"constant\"\nvalue = 1.0\n";
        assert!(Config::parse(text).is_err());
    }

    #[test]
    fn strongly_singular_power_is_rejected() {
        let text = "[instance]\ndim = 3\nh = 0.1\nhalf_width = 1.0\n[instance.potential]\nkind = \"power\"\nalpha = -2.5\n";
        assert!(Config::parse(text).is_err());
    }
}
