mod config;
mod instance;
mod pipeline;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{Config, Format, Step};
use instance::Instance;
use pipeline::{Runner, StepOutput};

/// Landscape functions, maximal functions, Agmon distances and eigenvalue
/// checks for discretized Schrödinger operators.
#[derive(Parser, Debug)]
#[command(name = "landscape", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file, or the name of a bundled config (yukawa-smoke,
    /// example1-magnetic).
    #[arg(long, global = true)]
    config: Option<String>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for test functions and sampling; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output format; overrides the config's list.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve for the landscape function (and the exhaustion, if configured).
    Landscape,
    /// Maximal function of the potential.
    Maximal,
    /// Agmon distance in the 1/u metric.
    Agmon,
    /// Lowest eigenpairs.
    Spectrum,
    /// Eigenvalue counts and the cube-count sandwich.
    Counting,
    /// Inequality checks.
    Verify,
    /// Every step listed under `run.experiments`.
    All,
}

/// Failures that map to exit code 2.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => match e.downcast_ref::<ConfigError>() {
            Some(ConfigError(inner)) => {
                eprintln!("config error: {inner:#}");
                ExitCode::from(2)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn load(cli: &Cli) -> Result<(Config, Instance)> {
    let source = cli.config.as_deref().ok_or_else(|| anyhow::anyhow!("--config is required"))?;
    let mut cfg = Config::load(source)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(f) = cli.format {
        cfg.output.formats = vec![f];
    }
    let inst = Instance::build(&cfg)?;
    Ok((cfg, inst))
}

/// Returns whether every report that is not a negative control passed.
fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let (cfg, inst) = load(cli).map_err(ConfigError)?;
    let steps = match cli.command {
        Command::Landscape => vec![Step::Landscape],
        Command::Maximal => vec![Step::Maximal],
        Command::Agmon => vec![Step::Agmon],
        Command::Spectrum => vec![Step::Spectrum],
        Command::Counting => vec![Step::Counting],
        Command::Verify => vec![Step::Verify],
        Command::All => cfg.run.experiments.clone(),
    };
    let out = Output::new(&cfg)?;
    if cfg.output.matrix_market {
        out.write_with("operator.mtx", |w| Ok(inst.real.write_matrix_market(w)?))?;
    }
    let mut runner = Runner::new(&cfg, &inst);
    let mut all_pass = true;
    let mut summary = Vec::new();
    let mut timings = String::from("step,wall_s\n");
    let mut failure = None;
    for step in steps {
        let start = Instant::now();
        let result = runner.run(step);
        let wall = start.elapsed().as_secs_f64();
        log::info!("{} finished in {wall:.2} s", step.name());
        timings.push_str(&format!("{},{wall:.3}\n", step.name()));
        let produced = match result {
            Ok(p) => p,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        for r in &produced.reports {
            let status = if r.pass { "PASS" } else { "FAIL" };
            let tag = if r.negative_control { " (negative control)" } else { "" };
            println!("{}/{}: {status}{tag}", step.name(), r.id);
            for c in r.failures() {
                println!("  failed {}: value {:e}, bound {:e}", c.name, c.value, c.bound);
            }
            if !r.negative_control {
                all_pass &= r.pass;
            }
            summary.push(serde_json::json!({
                "step": step.name(),
                "id": r.id,
                "pass": r.pass,
                "negative_control": r.negative_control,
            }));
        }
        out.write_step(step, &produced)?;
    }
    if out.json {
        out.write_with("summary.json", |w| Ok(serde_json::to_writer_pretty(w, &summary)?))?;
    }
    out.write_with("timings.csv", |w| Ok(w.write_all(timings.as_bytes())?))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(all_pass),
    }
}

struct Output {
    dir: PathBuf,
    csv: bool,
    json: bool,
}

impl Output {
    fn new(cfg: &Config) -> Result<Self> {
        let dir = cfg.output.dir.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output { dir, csv: cfg.output.formats.contains(&Format::Csv), json: cfg.output.formats.contains(&Format::Json) })
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_step(&self, step: Step, produced: &StepOutput) -> Result<()> {
        let s = step.name();
        for r in &produced.reports {
            if self.json {
                self.write_with(&format!("{s}-{}.json", r.id), |w| Ok(w.write_all(r.to_json()?.as_bytes())?))?;
            }
            if self.csv && !r.diagnostics.is_empty() {
                self.write_with(&format!("{s}-{}-diagnostics.csv", r.id), |w| Ok(r.write_diagnostics_csv(w)?))?;
            }
        }
        if self.csv {
            for (name, field) in &produced.fields {
                self.write_with(&format!("{s}-{name}.csv"), |w| Ok(field.write_csv(w, name, &[])?))?;
            }
            for (name, table) in &produced.tables {
                self.write_with(&format!("{s}-{name}.csv"), |w| Ok(w.write_all(table.as_bytes())?))?;
            }
        }
        if self.json {
            for (name, doc) in &produced.documents {
                self.write_with(&format!("{s}-{name}.json"), |w| Ok(serde_json::to_writer_pretty(w, doc)?))?;
            }
        }
        Ok(())
    }
}
