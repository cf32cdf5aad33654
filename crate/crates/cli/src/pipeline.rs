//! The experiment steps behind each subcommand.

use anyhow::{bail, Context, Result};
use landscape_core::agmon::{agmon_distance_field, inverse_landscape, lipschitz_slack};
use landscape_core::counting::{counting_report, cube_counting, dyadic_n0, DyadicParams};
use landscape_core::grid::ScalarField;
use landscape_core::landscape::{landscape_bounded_tol, landscape_exhaustion_spec, ExhaustionSpec};
use landscape_core::maximal::{fit_long_distance, maximal_function, slow_variation, MaximalField};
use landscape_core::operators::MatrixField;
use landscape_core::solvers::lowest_eigenpairs;
use landscape_core::verify::{
    check_compare_u_vs_m, check_decay_eigenfunction, check_decay_green, check_decay_lax_milgram, check_diamagnetic,
    check_fefferman_phong, check_fefferman_phong_magnetic, check_gauge_covariance, check_harnack_and_longdistance,
    check_resolvent_decay, check_uncertainty_magnetic, check_uncertainty_nonmagnetic, ground_state, CheckResult, EigenDecaySpec,
    ExperimentReport, GreenDecaySpec, TestFunctionSet,
};
use num_complex::Complex64;

use crate::config::{Check, Config, Step};
use crate::instance::Instance;

/// Everything a step produces besides its reports.
#[derive(Default)]
pub struct StepOutput {
    pub reports: Vec<ExperimentReport>,
    pub fields: Vec<(String, ScalarField)>,
    /// Named CSV tables.
    pub tables: Vec<(String, String)>,
    /// Named JSON documents.
    pub documents: Vec<(String, serde_json::Value)>,
}

pub struct Runner<'a> {
    cfg: &'a Config,
    inst: &'a Instance,
    u: Option<ScalarField>,
    maximal: Option<MaximalField>,
}

const DIAMAGNETIC_EDGES: usize = 100_000;
const GAUGE_PAIRS: usize = 4;
const GAUGE_TOL: f64 = 1e-8;

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a Config, inst: &'a Instance) -> Self {
        Runner { cfg, inst, u: None, maximal: None }
    }

    pub fn run(&mut self, step: Step) -> Result<StepOutput> {
        let mut out = match step {
            Step::Landscape => self.landscape(),
            Step::Maximal => self.maximal(),
            Step::Agmon => self.agmon(),
            Step::Spectrum => self.spectrum(),
            Step::Counting => self.counting(),
            Step::Verify => self.verify(),
        }
        .with_context(|| format!("{} step", step.name()))?;
        if self.cfg.run.negative_control {
            for r in &mut out.reports {
                r.negative_control = true;
            }
        }
        Ok(out)
    }

    fn report(&self, id: &str) -> ExperimentReport {
        ExperimentReport::new(id, self.inst.describe())
    }

    /// Landscape on the instance grid (of the surrogate for magnetic instances).
    fn u(&mut self) -> Result<ScalarField> {
        if self.u.is_none() {
            let inst = self.inst;
            let tol = self.cfg.run.landscape_tol;
            let res = match &inst.magnetic {
                Some(m) => landscape_bounded_tol(&inst.grid, &MatrixField::identity(inst.grid.dim()), &m.surrogate, tol)?,
                None => landscape_bounded_tol(&inst.grid, &inst.a, &inst.v, tol)?,
            };
            self.u = Some(res.u);
        }
        Ok(self.u.clone().expect("just computed"))
    }

    fn maximal_field(&mut self) -> Result<MaximalField> {
        if self.maximal.is_none() {
            let w = self.inst.weight();
            if w.min() < 0.0 {
                bail!("the maximal function needs a nonnegative potential");
            }
            self.maximal = Some(maximal_function(w, self.cfg.run.c1)?);
        }
        Ok(self.maximal.clone().expect("just computed"))
    }

    fn landscape(&mut self) -> Result<StepOutput> {
        let mut out = StepOutput::default();
        let u = self.u()?;
        let g = self.inst.grid;
        let mut rep = self.report("landscape");
        let min_int = g.interior_nodes().iter().map(|&n| u.get(n)).fold(f64::INFINITY, f64::min);
        rep.constant("min_interior", min_int);
        rep.constant("max", u.max());
        rep.push(CheckResult::at_least("interior_positivity", min_int, f64::MIN_POSITIVE, 0.0));
        out.fields.push(("u".into(), u.clone()));
        out.reports.push(rep.finish());

        if let Some(ex) = &self.cfg.run.exhaustion {
            if self.inst.magnetic.is_some() {
                bail!("exhaustion is only available for non-magnetic instances");
            }
            let spec = ExhaustionSpec {
                center: ex.center.clone().unwrap_or_else(|| vec![0.0; g.dim()]),
                r0: ex.r0,
                h: g.h(),
                stop_tol: ex.stop_tol,
                max_stages: ex.stages,
            };
            let res = landscape_exhaustion_spec(&spec, &self.inst.a, &self.cfg.instance.potential)?;
            let mut rep = self.report("exhaustion");
            let defect = res.monotonicity_defects.iter().copied().fold(0.0, f64::max);
            rep.constant("max_monotonicity_defect", defect);
            rep.constant("stages", res.radius_schedule.len() as f64);
            if let Some(inc) = res.increments.last() {
                rep.constant("last_increment", *inc);
            }
            rep.push(CheckResult::at_most("monotonicity_defect", defect, 10.0 * self.cfg.run.landscape_tol * res.u.max(), 0.0));
            rep.push(CheckResult::at_most("diverged", res.diverged as u8 as f64, 0.0, 0.0));
            if !res.converged {
                rep.note("stopping tolerance not reached within the stage budget");
            }
            out.documents.push(("exhaustion".into(), serde_json::to_value(&res)?));
            out.fields.push(("u-exhaustion".into(), res.u));
            out.reports.push(rep.finish());
        }
        Ok(out)
    }

    fn maximal(&mut self) -> Result<StepOutput> {
        let m = self.maximal_field()?;
        let run = &self.cfg.run;
        let mut rep = self.report("maximal");
        rep.constant("capped_nodes", m.capped_count() as f64);
        let sv = slow_variation(&m.m, &m.capped, run.samples, run.seed);
        rep.constant("slow_variation", sv.constant);
        rep.constant("slow_variation_balls", sv.balls as f64);
        rep.push(CheckResult::finite("slow_variation", sv.constant));
        match fit_long_distance(&m.m, &m.capped, run.samples, run.seed) {
            Ok(fit) => {
                rep.constant("long_k0", fit.k0 as f64);
                rep.constant("long_c", fit.constant);
                rep.push(CheckResult::finite("long_c", fit.constant));
            }
            Err(e) => rep.note(format!("long-distance fit skipped: {e}")),
        }
        let capped = ScalarField::new(self.inst.grid, m.capped.iter().map(|&c| c as u8 as f64).collect())?;
        let mut out = StepOutput::default();
        out.fields.push(("m".into(), m.m.clone()));
        out.fields.push(("m-capped".into(), capped));
        out.reports.push(rep.finish());
        Ok(out)
    }

    fn agmon(&mut self) -> Result<StepOutput> {
        let u = self.u()?;
        let inst = self.inst;
        let w = inverse_landscape(&u)?;
        let sources: Vec<usize> = if self.cfg.run.sources.is_empty() {
            vec![inst.center_node()]
        } else {
            self.cfg.run.sources.iter().map(|x| inst.grid.nearest_node(x)).collect()
        };
        let a = inst.magnetic.is_none().then_some(&inst.a);
        let geo = agmon_distance_field(&w, a, &sources)?;
        let mut rep = self.report("agmon");
        rep.constant("max_rho", geo.rho.max());
        rep.constant("lipschitz_slack", lipschitz_slack(&geo, &w, a));
        rep.push(CheckResult::finite("max_rho", geo.rho.max()));
        let mut out = StepOutput::default();
        out.fields.push(("rho".into(), geo.rho));
        out.reports.push(rep.finish());
        Ok(out)
    }

    fn spectrum(&mut self) -> Result<StepOutput> {
        let run = &self.cfg.run;
        let inst = self.inst;
        let (values, residuals, converged, ground) = match &inst.magnetic {
            Some(m) => {
                let res = lowest_eigenpairs(&m.operator, run.eigenpairs.min(m.operator.dim()), run.eigen_tol)?;
                let psi: Vec<f64> = res.eigenvectors[0].iter().map(|z| z.norm()).collect();
                (res.eigenvalues, res.residuals, res.converged, psi)
            }
            None => {
                let res = lowest_eigenpairs(&inst.real, run.eigenpairs.min(inst.real.dim()), run.eigen_tol)?;
                let psi: Vec<f64> = res.eigenvectors[0].iter().map(|x| x.abs()).collect();
                (res.eigenvalues, res.residuals, res.converged, psi)
            }
        };
        let dofs = inst.real.dofs().expect("assembled operator carries its grid");
        let ground = dofs.scatter_field(&ground)?;
        let mut rep = self.report("spectrum");
        let mut table = String::from("# spectrum schema=1\nindex,eigenvalue,residual\n");
        for (i, (mu, r)) in values.iter().zip(&residuals).enumerate() {
            table.push_str(&format!("{i},{mu:e},{r:e}\n"));
            rep.constant(format!("mu{i}"), *mu);
        }
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        rep.push(CheckResult::at_most("residual", worst, run.eigen_tol, 0.0));
        if !converged {
            rep.note("eigensolver reported incomplete convergence");
        }
        let mut out = StepOutput::default();
        out.tables.push(("spectrum".into(), table));
        out.fields.push(("psi0-abs".into(), ground));
        out.reports.push(rep.finish());
        Ok(out)
    }

    fn counting(&mut self) -> Result<StepOutput> {
        let run = &self.cfg.run;
        let inst = self.inst;
        let b = inst.field_strength();
        let ntilde = |mu: f64| cube_counting(&b, &inst.v, mu).map(|c| c.count);
        let report = match &inst.magnetic {
            Some(m) => counting_report(&m.operator, &run.mu_ladder, &ntilde)?,
            None => counting_report(&inst.real, &run.mu_ladder, &ntilde)?,
        };
        let mut rep = self.report("counting");
        if let Some(c) = report.fit.c1 {
            rep.constant("c1", c);
        }
        if let Some(c) = report.fit.c2 {
            rep.constant("c2", c);
        }
        rep.push(CheckResult::at_least("sandwich_feasible", report.fit.feasible as u8 as f64, 1.0, 0.0));
        if report.n.iter().any(|c| c.lower_bound_only) {
            rep.note("some counts are lower bounds only");
        }
        if !report.ntilde_monotonicity_flags.is_empty() {
            rep.note(format!("cube count decreases at mu = {:?}", report.ntilde_monotonicity_flags));
        }
        let mut out = StepOutput::default();
        if let Some(d) = &run.dyadic {
            let m_of_b = match &inst.magnetic {
                Some(_) => Some(maximal_function(&b, run.c1)?),
                None => None,
            };
            let mut rows = String::from("# dyadic schema=1\nmu,p,c,alpha,N0\n");
            for &mu in &d.mu {
                let n0 = dyadic_n0(&inst.v, m_of_b.as_ref(), DyadicParams { mu, p: d.p, c: d.c, alpha: d.alpha })?;
                rows.push_str(&format!("{mu},{},{},{},{n0}\n", d.p, d.c, d.alpha));
                rep.constant(format!("N0/mu={mu}"), n0 as f64);
            }
            out.tables.push(("dyadic".into(), rows));
        }
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        out.tables.push(("counting".into(), String::from_utf8(csv)?));
        out.documents.push(("counting".into(), serde_json::to_value(&report)?));
        out.reports.push(rep.finish());
        Ok(out)
    }

    fn default_checks(&self) -> Vec<Check> {
        if self.inst.magnetic.is_some() {
            vec![Check::Uncertainty, Check::FeffermanPhong, Check::Diamagnetic]
        } else {
            vec![
                Check::Uncertainty,
                Check::FeffermanPhong,
                Check::LandscapeVsMaximal,
                Check::Harnack,
                Check::LaxMilgram,
                Check::GreenDecay,
            ]
        }
    }

    fn verify(&mut self) -> Result<StepOutput> {
        let checks = if self.cfg.run.checks.is_empty() { self.default_checks() } else { self.cfg.run.checks.clone() };
        let mut out = StepOutput::default();
        for check in checks {
            let rep = self.verify_one(check).with_context(|| format!("check {check:?}"))?;
            out.reports.push(rep);
        }
        Ok(out)
    }

    fn verify_one(&mut self, check: Check) -> Result<ExperimentReport> {
        let run = &self.cfg.run;
        let inst = self.inst;
        let window = Some(&inst.window);
        let magnetic = inst.magnetic.is_some();
        let fs = TestFunctionSet::bumps(&inst.grid, run.test_functions, run.seed, magnetic, None)?;
        let rep = match (check, &inst.magnetic) {
            (Check::Uncertainty, None) => check_uncertainty_nonmagnetic(&self.u()?, &inst.a, &inst.v, &fs, inst.a.lambda())?,
            (Check::Uncertainty, Some(m)) => check_uncertainty_magnetic(&self.u()?, &m.data.phases, &inst.v, &fs)?,
            (Check::FeffermanPhong, None) => {
                let u = self.u()?;
                check_fefferman_phong(&self.maximal_field()?, &inst.a, &inst.v, Some(&u), &fs)?
            }
            (Check::FeffermanPhong, Some(m)) => {
                let u = self.u()?;
                check_fefferman_phong_magnetic(&self.maximal_field()?, &m.data.phases, &inst.v, &u, &fs)?
            }
            (Check::LandscapeVsMaximal, _) => {
                let u = self.u()?;
                check_compare_u_vs_m(&u, &self.maximal_field()?, window, run.spread_cap)?
            }
            (Check::Harnack, _) => check_harnack_and_longdistance(&self.u()?, window, run.samples, run.seed)?,
            (Check::LaxMilgram, None) => check_decay_lax_milgram(&inst.real, &self.u()?, Some(&inst.a), &fs.real(0), &run.eps_ladder)?,
            (Check::LaxMilgram, Some(m)) => {
                let f: Vec<Complex64> = fs.function(0).to_vec();
                check_decay_lax_milgram(&m.operator, &self.u()?, None, &f, &run.eps_ladder)?
            }
            (Check::EigenfunctionDecay, None) => {
                let (mu, psi) = ground_state(&inst.real, run.eigen_tol)?;
                check_decay_eigenfunction(&self.u()?, Some(&inst.a), mu, &psi, window, EigenDecaySpec::default())?
            }
            (Check::GreenDecay, None) => {
                check_decay_green(&inst.real, &self.u()?, Some(&inst.a), inst.center_node(), window, GreenDecaySpec::default())?
            }
            (Check::GreenDecay, Some(m)) => {
                let spec = GreenDecaySpec { lower_rate: None, ..GreenDecaySpec::default() };
                check_decay_green(&m.operator, &self.u()?, None, inst.center_node(), window, spec)?
            }
            (Check::ResolventDecay, None) => check_resolvent_decay(&inst.grid, &inst.a, &inst.v, &fs.real(0), &run.t_ladder, run.alpha)?,
            (Check::Diamagnetic, Some(m)) => check_diamagnetic(&m.data.phases, DIAMAGNETIC_EDGES, run.seed)?,
            (Check::Gauge, Some(m)) => {
                let phi = ScalarField::from_fn(inst.grid, |x| (1.3 * x[0]).sin() + 0.7 * (x[1] - 0.5 * x[2]).cos())?;
                check_gauge_covariance(&m.data.phases, &inst.v, &phi, GAUGE_PAIRS, GAUGE_TOL)?
            }
            (c, None) => bail!("{c:?} needs a magnetic instance"),
            (c, Some(_)) => bail!("{c:?} is only available for non-magnetic instances"),
        };
        Ok(rep)
    }
}
