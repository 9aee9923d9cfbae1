//! Command-line front end: `simulate`, `experiment`, `w1` and `plot`.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! runtime failures (simulation blow-up, I/O).

pub mod config;

use clap::{Args, Parser, Subcommand};
use config::{load_fields, parse_switch, ConfigError};
use mpl::experiment::{
    exact_model, read_summary_csv, render_plot, run_sweep_with, write_raw_csv, write_results, ExperimentConfig,
};
use mpl::measure::{w1_1d, w1_exact, WeightedEmpiricalMeasure};
use mpl::sde::{generate_paths, simulate_particle_system};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use thiserror::Error;

const OVERRIDES: &str = "Flag values override the config file; without --config the built-in \
benchmark defaults apply. MPL_WORKERS caps the number of worker threads.";

#[derive(Debug, Parser)]
#[command(name = "mpl", version, about = "Weighted interacting-particle simulation of conditional McKean-Vlasov SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one particle system and write its trajectory CSV
    #[command(after_help = OVERRIDES)]
    Simulate(Overrides),
    /// Run the N-sweep, write raw/summary/meta files and the convergence plot
    #[command(after_help = OVERRIDES)]
    Experiment {
        #[command(flatten)]
        overrides: Overrides,
        /// Trials per particle count
        #[arg(long, value_name = "INT")]
        trials: Option<usize>,
    },
    /// Print the exact 1-Wasserstein distance between two cloud CSVs (weight,x_0,..)
    W1 {
        /// Cloud CSV with header `weight,x_0,..`
        first: PathBuf,
        /// Cloud CSV of the same dimension
        second: PathBuf,
    },
    /// Re-render the convergence plot from a summary CSV
    Plot {
        /// Summary CSV written by `experiment`
        summary: PathBuf,
        /// Output SVG (default: the summary path with `_plot.svg`)
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Overrides {
    /// Config file (flat `key = value` lines)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Particle count (replaces N_list)
    #[arg(long = "N", value_name = "INT")]
    particles: Option<usize>,
    /// Time step
    #[arg(long, value_name = "FLOAT")]
    delta: Option<f64>,
    /// Output path prefix
    #[arg(long, value_name = "PREFIX")]
    out: Option<String>,
    /// Renormalize log-weights after every step
    #[arg(long, value_name = "on|off", value_parser = switch)]
    renormalize: Option<bool>,
}

fn switch(s: &str) -> Result<bool, String> {
    parse_switch(s).ok_or_else(|| format!("expected `on` or `off`, got `{s}`"))
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(context: impl std::fmt::Display) -> impl FnOnce(String) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn resolve(o: &Overrides, trials: Option<usize>) -> Result<ExperimentConfig<f64>, CliError> {
    let mut cfg = match &o.config {
        Some(path) => load_fields(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = o.seed {
        cfg.master_seed = seed;
    }
    if let Some(n) = o.particles {
        cfg.n_list = vec![n];
    }
    if let Some(delta) = o.delta {
        cfg.delta = delta;
    }
    if let Some(prefix) = &o.out {
        cfg.out_prefix = prefix.clone();
    }
    if let Some(r) = o.renormalize {
        cfg.renormalize = r;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Ok(cap) = std::env::var("MPL_WORKERS") {
        let cap: usize = cap
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("MPL_WORKERS must be a nonnegative integer, got `{cap}`")))?;
        if cap > 0 {
            cfg.workers = if cfg.workers == 0 { cap } else { cfg.workers.min(cap) };
        }
    }
    config::validate(&cfg)?;
    Ok(cfg)
}

fn simulate(o: &Overrides) -> Result<(), CliError> {
    let cfg = resolve(o, None)?;
    if o.particles.is_none() && cfg.n_list.len() > 1 {
        eprintln!("note: simulating N = {} (first entry of N_list); pass --N to choose", cfg.n_list[0]);
    }
    let particles = cfg.n_list[0];
    let model = exact_model(&cfg.model).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut sim = cfg.simulation(particles, 0, model.initial_state());
    sim.seed = cfg.master_seed;
    let spec = model.spec();
    let paths = generate_paths(&sim, spec.dims.noise, spec.dims.obs).map_err(|e| CliError::Runtime(e.to_string()))?;
    let traj = simulate_particle_system(&sim, spec, &paths).map_err(|e| CliError::Runtime(format!("simulation failed: {e}")))?;

    let traj_path = format!("{}_trajectory.csv", cfg.out_prefix);
    let file = std::fs::File::create(&traj_path).map_err(|e| runtime(&traj_path)(e.to_string()))?;
    traj.write_csv(std::io::BufWriter::new(file)).map_err(|e| runtime(&traj_path)(e.to_string()))?;

    let cloud_path = format!("{}_cloud.csv", cfg.out_prefix);
    let last = traj.measure(traj.steps()).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_cloud(&last, Path::new(&cloud_path))?;
    println!("wrote {traj_path} ({} steps, N = {particles}) and terminal cloud {cloud_path}", traj.steps());
    Ok(())
}

fn experiment(o: &Overrides, trials: Option<usize>) -> Result<(), CliError> {
    let cfg = resolve(o, trials)?;
    let model = exact_model(&cfg.model).map_err(|e| CliError::Usage(e.to_string()))?;
    let result = match run_sweep_with(model.as_ref(), &cfg) {
        Ok(r) => r,
        Err(failure) => {
            let partial = PathBuf::from(format!("{}_partial_raw.csv", cfg.out_prefix));
            let dumped = !failure.completed.is_empty() && write_raw_csv(&failure.completed, &partial).is_ok();
            let note = if dumped { format!("; completed trials written to {}", partial.display()) } else { String::new() };
            return Err(CliError::Runtime(format!("{}{note}", failure.error)));
        }
    };
    let paths = write_results(&result, &cfg.out_prefix).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("wrote {}, {}, {}", paths.raw.display(), paths.summary.display(), paths.meta.display());
    if result.summary.len() >= 2 {
        let svg = PathBuf::from(format!("{}_plot.svg", cfg.out_prefix));
        let fit = render_plot(&result.summary, &svg).map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("wrote {} (fitted slope {:.3}, r² {:.3})", svg.display(), fit.slope, fit.r_squared);
    } else {
        eprintln!("note: plot skipped, it needs at least two particle counts");
    }
    Ok(())
}

/// `weight,x_0,..,x_{n-1}` with one atom per row.
fn read_cloud(path: &Path) -> Result<WeightedEmpiricalMeasure<f64>, CliError> {
    let fail = |reason: String| CliError::Runtime(format!("{}: {reason}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let header = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let dim = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("weight".to_string()).chain((0..dim).map(|j| format!("x_{j}"))).collect();
    if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(fail(format!("expected header `{}`", if dim == 0 { "weight,x_0".into() } else { expected.join(",") })));
    }
    let (mut weights, mut positions) = (Vec::new(), Vec::new());
    for (k, row) in reader.records().enumerate() {
        let row = row.map_err(|e| fail(e.to_string()))?;
        for (j, field) in row.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| fail(format!("line {}: `{field}` is not a number", k + 2)))?;
            if j == 0 {
                weights.push(v);
            } else {
                positions.push(v);
            }
        }
    }
    WeightedEmpiricalMeasure::new(dim, positions, weights).map_err(|e| fail(e.to_string()))
}

fn write_cloud(mu: &WeightedEmpiricalMeasure<f64>, path: &Path) -> Result<(), CliError> {
    let fail = |e: String| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(|e| fail(e.to_string()))?;
    let header: Vec<String> = std::iter::once("weight".to_string()).chain((0..mu.dim()).map(|j| format!("x_{j}"))).collect();
    w.write_record(&header).map_err(|e| fail(e.to_string()))?;
    for (x, weight) in mu.atoms() {
        let row: Vec<String> = std::iter::once(weight).chain(x.iter().copied()).map(|v| format!("{v:?}")).collect();
        w.write_record(&row).map_err(|e| fail(e.to_string()))?;
    }
    w.flush().map_err(|e| fail(e.to_string()))
}

fn w1(first: &Path, second: &Path) -> Result<(), CliError> {
    let (mu, nu) = (read_cloud(first)?, read_cloud(second)?);
    let d = if mu.dim() == 1 && nu.dim() == 1 { w1_1d(&mu, &nu) } else { w1_exact(&mu, &nu) };
    println!("{:?}", d.map_err(|e| CliError::Runtime(e.to_string()))?);
    Ok(())
}

fn plot(summary: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let rows = read_summary_csv(summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| {
        let s = summary.to_string_lossy();
        let prefix = s.strip_suffix("_summary.csv").or_else(|| s.strip_suffix(".csv")).unwrap_or(&s);
        PathBuf::from(format!("{prefix}_plot.svg"))
    });
    let fit = render_plot(&rows, &out).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("wrote {} (fitted slope {:.3})", out.display(), fit.slope);
    Ok(())
}

/// Parse `argv` (including the program name), run the command and return
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(o) => simulate(o),
        Command::Experiment { overrides, trials } => experiment(overrides, *trials),
        Command::W1 { first, second } => w1(first, second),
        Command::Plot { summary, out } => plot(summary, out.as_deref()),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mpl: {e}");
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn switch_values() {
        assert_eq!(switch("on"), Ok(true));
        assert_eq!(switch("off"), Ok(false));
        assert!(switch("sometimes").is_err());
    }
}
