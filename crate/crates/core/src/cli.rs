//! Batch command-line front end.
//!
//! Every command resolves its settings from an optional TOML or JSON
//! configuration file overridden by flags, runs one solver, and writes a
//! JSON document with the estimates and the exact settings used. Feeding
//! that document back through `--config` repeats the run bit for bit.
//!
//! Tabular output (`sample`, `convergence-study`) goes to `--csv`. Without
//! `--csv` it goes to standard output, and the JSON document then goes to
//! `--output` or, failing that, standard error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};

use crate::ergodic::{ensemble_boundary, ensemble_phi, steps_for, time_average};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::models::{catalog_with, CatalogEntry, CatalogProblem, DomainSpec};
use crate::montecarlo::workers_from_env;
use crate::pde::{poisson_schedule, solve_elliptic_decay, solve_parabolic, solve_poisson, McResult};
use crate::sampling::{default_burn_in, sample_boundary_with, sample_interior_with, weighted_mean, ChainSettings};

#[derive(Debug, Parser)]
#[command(
    name = "reflectwalk",
    version,
    about = "Monte Carlo solvers, ergodic estimators and samplers for reflected diffusions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    SolveParabolic,
    SolveElliptic,
    SolvePoisson,
    Ergodic,
    Ensemble,
    Sample,
    ConvergenceStudy,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::SolveParabolic => "solve-parabolic",
            CommandKind::SolveElliptic => "solve-elliptic",
            CommandKind::SolvePoisson => "solve-poisson",
            CommandKind::Ergodic => "ergodic",
            CommandKind::Ensemble => "ensemble",
            CommandKind::Sample => "sample",
            CommandKind::ConvergenceStudy => "convergence-study",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parabolic Robin problem: mean of phi(X_N) Y_N + Z_N.
    SolveParabolic(Flags),
    /// Elliptic problem with decay, run to a long horizon.
    SolveElliptic(Flags),
    /// Poisson problem with the decreasing-step schedule.
    SolvePoisson(Flags),
    /// Time averages along one long trajectory.
    Ergodic(Flags),
    /// Averages over many trajectories at a fixed horizon.
    Ensemble(Flags),
    /// Interior or weighted boundary samples as CSV.
    Sample(Flags),
    /// Repeats a solver over a list of steps and fits the error slope.
    ConvergenceStudy(Flags),
}

impl Command {
    fn split(self) -> (CommandKind, Flags) {
        match self {
            Command::SolveParabolic(f) => (CommandKind::SolveParabolic, f),
            Command::SolveElliptic(f) => (CommandKind::SolveElliptic, f),
            Command::SolvePoisson(f) => (CommandKind::SolvePoisson, f),
            Command::Ergodic(f) => (CommandKind::Ergodic, f),
            Command::Ensemble(f) => (CommandKind::Ensemble, f),
            Command::Sample(f) => (CommandKind::Sample, f),
            Command::ConvergenceStudy(f) => (CommandKind::ConvergenceStudy, f),
        }
    }
}

/// Flags shared by every command. Each overrides the matching config key.
#[derive(Debug, Clone, Default, Args)]
#[command(allow_negative_numbers = true)]
pub struct Flags {
    /// TOML or JSON configuration; an emitted JSON document also works.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Catalog problem, e.g. exp8_1 or von_mises(2).
    #[arg(long)]
    pub problem: Option<String>,
    /// Step size, or a comma-separated list for convergence-study.
    #[arg(long, allow_hyphen_values = true)]
    pub h: Option<String>,
    /// Number of trajectories.
    #[arg(long = "M", value_parser = parse_count)]
    pub m: Option<u64>,
    /// Horizon or total simulated time.
    #[arg(long = "T")]
    pub t: Option<f64>,
    /// Start time.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Start point, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to REFLECTWALK_WORKERS, then all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Number of batches L for the batch-means error.
    #[arg(long, value_parser = parse_count)]
    pub blocks: Option<u64>,
    /// Simulated time per batch.
    #[arg(long)]
    pub block_length: Option<f64>,
    #[arg(long)]
    pub ell: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub upsilon: Option<f64>,
    /// Number of interior samples.
    #[arg(long, value_parser = parse_count)]
    pub n: Option<u64>,
    /// Burn-in steps for interior samples; default 10/h.
    #[arg(long, value_parser = parse_count)]
    pub burn_in: Option<u64>,
    /// Emit weighted boundary samples instead of interior ones.
    #[arg(long)]
    pub boundary: bool,
    /// Solver used by convergence-study: parabolic, elliptic, poisson or
    /// ergodic. Defaults by problem.
    #[arg(long)]
    pub mode: Option<String>,
    /// Where to write the JSON document.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Where to write CSV rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(63) => Ok(v as u64),
        _ => Err(format!("expected a non-negative whole number, got {s:?}")),
    }
}

/// Settings of one run as read from a file, or as recorded in an output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(rename = "M", default, deserialize_with = "count", skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, deserialize_with = "count", skip_serializing_if = "Option::is_none")]
    pub blocks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upsilon: Option<f64>,
    #[serde(default, deserialize_with = "count", skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, deserialize_with = "count", skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<f64>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(Some(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    }))
}

fn count<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<u64>, D::Error> {
    let v = f64::deserialize(d)?;
    parse_count(&v.to_string()).map(Some).map_err(serde::de::Error::custom)
}

impl RunConfig {
    /// Reads a TOML file, or a JSON file (by extension). A JSON document
    /// with a `parameters` object, as written by this program, contributes
    /// just that object.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let bad = |e: String| Error::config("config", format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            let mut v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            if let Some(p) = v.get_mut("parameters") {
                v = p.take();
            }
            serde_json::from_value(v).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    /// Applies the flags that were given on top of `self`.
    pub fn apply(&mut self, f: &Flags) -> Result<()> {
        if let Some(p) = &f.problem {
            self.problem = Some(p.clone());
        }
        if let Some(h) = &f.h {
            self.h = Some(parse_list("h", h)?);
        }
        if let Some(x0) = &f.x0 {
            self.x0 = Some(parse_list("x0", x0)?);
        }
        macro_rules! take {
            ($($field:ident <- $flag:ident),*) => {
                $(if f.$flag.is_some() { self.$field = f.$flag.clone(); })*
            };
        }
        take!(m <- m, t <- t, t0 <- t0, seed <- seed, workers <- workers, blocks <- blocks,
              block_length <- block_length, ell <- ell, beta <- beta, upsilon <- upsilon,
              n <- n, burn_in <- burn_in, mode <- mode, output <- output, csv <- csv);
        if f.boundary {
            self.boundary = Some(true);
        }
        Ok(())
    }
}

fn parse_list(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(key, format!("{p:?} is not a number")))
        })
        .collect()
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(key, format!("must be positive, got {v}")))
    }
}

fn at_least_one(key: &str, v: u64) -> Result<u64> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(Error::config(key, "must be at least 1"))
    }
}

/// Exit status for an error: 2 for bad input, 1 for failures while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config { .. } => 2,
        _ => 1,
    }
}

/// The structured report printed on standard error.
pub fn error_report(e: &Error) -> Value {
    let mut body = json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::Config { key, .. } = e {
        body["key"] = json!(key);
    }
    json!({ "error": body })
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let report = json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{report}");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_report(&e));
            exit_code(&e)
        }
    }
}

/// Runs a parsed command line, writing its outputs.
pub fn run(cli: Cli) -> Result<()> {
    let (kind, flags) = cli.command.split();
    let mut config = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = config.command {
        if c != kind {
            return Err(Error::config(
                "command",
                format!("config is for {}, not {}", c.name(), kind.name()),
            ));
        }
    }
    config.apply(&flags)?;
    config.command = Some(kind);
    let outcome = execute(kind, &config)?;
    write_outputs(&config, outcome)
}

/// Result of a command before it is written out.
pub struct Outcome {
    pub document: Value,
    /// CSV text, for commands that produce rows.
    pub csv: Option<String>,
}

fn write_outputs(config: &RunConfig, outcome: Outcome) -> Result<()> {
    let json_text = serde_json::to_string_pretty(&outcome.document).expect("document serialises") + "\n";
    let write = |path: &Path, text: &str| {
        fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    };
    let mut json_to_stderr = false;
    if let Some(rows) = &outcome.csv {
        match &config.csv {
            Some(p) => write(p, rows)?,
            None => {
                emit(&mut std::io::stdout().lock(), rows)?;
                json_to_stderr = true;
            }
        }
    }
    match &config.output {
        Some(p) => write(p, &json_text),
        None if json_to_stderr => emit(&mut std::io::stderr().lock(), &json_text),
        None => emit(&mut std::io::stdout().lock(), &json_text),
    }
}

/// Writes to a standard stream. A closed pipe (e.g. `| head`) is not an error.
fn emit(out: &mut impl Write, text: &str) -> Result<()> {
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io(e.to_string())),
        _ => Ok(()),
    }
}

/// Resolves the problem and runs `kind` without writing anything.
pub fn execute(kind: CommandKind, config: &RunConfig) -> Result<Outcome> {
    let name = config
        .problem
        .clone()
        .ok_or_else(|| Error::config("problem", "no problem given"))?;
    let horizon = match name.trim() {
        "exp8_1" => config.t,
        _ => None,
    };
    if let Some(t) = config.t {
        positive("T", t)?;
    }
    match catalog_with(&name, config.domain.as_ref(), horizon)? {
        CatalogProblem::D2(e) => execute_on(kind, config, &e),
        CatalogProblem::D3(e) => execute_on(kind, config, &e),
    }
}

/// Settings shared by all commands after defaults are filled in.
struct Resolved<const D: usize> {
    x0: Point<D>,
    hs: Vec<f64>,
    m: u64,
    t: f64,
    t0: f64,
    seed: u64,
    workers: Option<usize>,
}

const DEFAULT_M: u64 = 10_000;

fn resolve<const D: usize>(config: &RunConfig, entry: &CatalogEntry<D>) -> Result<Resolved<D>> {
    let x0 = match &config.x0 {
        Some(v) if v.len() != D => {
            return Err(Error::config(
                "x0",
                format!("{} needs {D} coordinates, got {}", entry.name, v.len()),
            ))
        }
        Some(v) => Point::<D>::from_column_slice(v),
        None => entry.defaults.x0,
    };
    if !entry.problem.domain.contains(&x0) {
        return Err(Error::config("x0", format!("{:?} is outside the domain", x0.as_slice())));
    }
    let hs = config.h.clone().unwrap_or_else(|| vec![entry.defaults.h]);
    if hs.is_empty() {
        return Err(Error::config("h", "empty list"));
    }
    for &h in &hs {
        positive("h", h)?;
    }
    let workers = match config.workers {
        Some(0) => return Err(Error::config("workers", "must be at least 1")),
        Some(w) => Some(w),
        None => workers_from_env()?,
    };
    let t = positive("T", config.t.unwrap_or(entry.defaults.horizon))?;
    let t0 = config.t0.unwrap_or(entry.defaults.t0);
    if !t0.is_finite() {
        return Err(Error::config("t0", "must be finite"));
    }
    Ok(Resolved {
        x0,
        hs,
        m: at_least_one("M", config.m.unwrap_or(DEFAULT_M))?,
        t,
        t0,
        seed: config.seed.unwrap_or(0),
        workers,
    })
}

impl<const D: usize> Resolved<D> {
    fn single_h(&self) -> Result<f64> {
        match self.hs.as_slice() {
            [h] => Ok(*h),
            _ => Err(Error::config("h", "this command takes a single step")),
        }
    }
}

/// Recorded parameters: the settings the run used with defaults filled in,
/// minus output locations and the worker count, which cannot change results.
fn recorded<const D: usize>(config: &RunConfig, r: &Resolved<D>) -> RunConfig {
    RunConfig {
        h: Some(r.hs.clone()),
        m: Some(r.m),
        t: Some(r.t),
        t0: Some(r.t0),
        x0: Some(r.x0.iter().copied().collect()),
        seed: Some(r.seed),
        output: None,
        csv: None,
        workers: None,
        ..config.clone()
    }
}

fn abs_error(estimate: Option<f64>, exact: Option<f64>) -> Option<f64> {
    Some((estimate? - exact?).abs())
}

fn mc_document(kind: CommandKind, entry_name: &str, params: &RunConfig, r: &McResult, exact: Option<f64>) -> Value {
    json!({
        "command": kind.name(),
        "problem": entry_name,
        "parameters": params,
        "estimate": r.estimate,
        "mc_error": r.mc_error,
        "exact": exact,
        "abs_error": abs_error(Some(r.estimate), exact),
        "wall_time": r.wall_time,
        "seed": r.seed,
        "M": r.m,
        "h_used": r.h,
        "steps": r.steps,
    })
}

/// Solver used by convergence studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Parabolic,
    Elliptic,
    Poisson,
    Ergodic,
}

impl Mode {
    fn parse(s: &str) -> Result<Mode> {
        match s {
            "parabolic" => Ok(Mode::Parabolic),
            "elliptic" => Ok(Mode::Elliptic),
            "poisson" => Ok(Mode::Poisson),
            "ergodic" => Ok(Mode::Ergodic),
            _ => Err(Error::config(
                "mode",
                format!("expected parabolic, elliptic, poisson or ergodic, got {s:?}"),
            )),
        }
    }

    fn default_for(name: &str) -> Mode {
        match name {
            "exp8_1" => Mode::Parabolic,
            "exp8_4" => Mode::Elliptic,
            "exp8_5" => Mode::Poisson,
            _ => Mode::Ergodic,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Mode::Parabolic => "parabolic",
            Mode::Elliptic => "elliptic",
            Mode::Poisson => "poisson",
            Mode::Ergodic => "ergodic",
        }
    }
}

fn execute_on<const D: usize>(kind: CommandKind, config: &RunConfig, entry: &CatalogEntry<D>) -> Result<Outcome> {
    let r = resolve(config, entry)?;
    let params = recorded(config, &r);
    let name = entry.name.as_str();
    let document = match kind {
        CommandKind::SolveParabolic => {
            let res = solve_parabolic(&entry.problem, r.t0, &r.x0, r.t, r.single_h()?, r.m, r.seed, r.workers)?;
            mc_document(kind, name, &params, &res, entry.solution_at(r.t0, &r.x0))
        }
        CommandKind::SolveElliptic => {
            let res = solve_elliptic_decay(&entry.problem, &r.x0, r.t, r.single_h()?, r.m, r.seed, r.workers)?;
            mc_document(kind, name, &params, &res, entry.solution_at(0.0, &r.x0))
        }
        CommandKind::SolvePoisson => {
            let (res, schedule) = poisson_run(config, entry, &r, r.single_h()?)?;
            let mut doc = mc_document(kind, name, &params, &res, entry.solution_at(0.0, &r.x0));
            doc["schedule"] = schedule;
            doc
        }
        CommandKind::Ergodic => ergodic_document(config, entry, &r, &params)?,
        CommandKind::Ensemble => ensemble_document(entry, &r, &params)?,
        CommandKind::Sample => return sample_outcome(config, entry, &r, &params),
        CommandKind::ConvergenceStudy => return convergence_outcome(config, entry, &r, &params),
    };
    Ok(Outcome { document, csv: None })
}

fn poisson_run<const D: usize>(
    config: &RunConfig,
    entry: &CatalogEntry<D>,
    r: &Resolved<D>,
    h: f64,
) -> Result<(McResult, Value)> {
    let schedule = poisson_schedule(
        h,
        config.ell.unwrap_or(0.1),
        config.beta.unwrap_or(1.0),
        config.upsilon.unwrap_or(1.0),
        r.t,
    )?;
    let res = solve_poisson(&entry.problem, &r.x0, &schedule, r.m, r.seed, r.workers)?;
    let summary = json!({
        "blocks": schedule.lambda(),
        "total_steps": schedule.total_steps(),
        "simulated_time": schedule.simulated_time(),
    });
    Ok((res, summary))
}

/// Number of batches and steps per batch for a time-averaging run.
fn batches(config: &RunConfig, t: f64, h: f64) -> Result<(usize, u64)> {
    let blocks = at_least_one("blocks", config.blocks.unwrap_or(100))?;
    let length = match config.block_length {
        Some(l) => positive("block_length", l)?,
        None => t / blocks as f64,
    };
    let steps = steps_for(length, h);
    if steps == 0 {
        return Err(Error::config("block_length", "shorter than one step"));
    }
    Ok((blocks as usize, steps))
}

fn ergodic_document<const D: usize>(
    config: &RunConfig,
    entry: &CatalogEntry<D>,
    r: &Resolved<D>,
    params: &RunConfig,
) -> Result<Value> {
    let started = Instant::now();
    let h = r.single_h()?;
    let (blocks, steps) = batches(config, r.t, h)?;
    let avg = time_average(&entry.problem, &r.x0, h, blocks, steps, r.seed)?;
    let ex = entry.exact;
    Ok(json!({
        "command": CommandKind::Ergodic.name(),
        "problem": entry.name,
        "parameters": params,
        "estimates": {
            "phi_hat": avg.phi_hat,
            "kappa_hat": avg.kappa_hat,
            "psi_hat": avg.psi_hat,
            "psi_prime_hat": avg.psi_prime_hat,
            "psi_tilde_hat": avg.psi_tilde_hat,
        },
        "stat_err": avg.stat_err,
        "exact": { "phi_bar": ex.phi_bar, "kappa": ex.kappa, "psi_prime": ex.psi_prime },
        "abs_error": {
            "phi_hat": abs_error(Some(avg.phi_hat), ex.phi_bar),
            "kappa_hat": abs_error(Some(avg.kappa_hat), ex.kappa),
            "psi_prime_hat": abs_error(avg.psi_prime_hat, ex.psi_prime),
            "psi_tilde_hat": abs_error(avg.psi_tilde_hat, ex.psi_prime),
        },
        "wall_time": started.elapsed().as_secs_f64(),
        "seed": r.seed,
        "steps": avg.n_steps,
        "blocks": avg.blocks,
    }))
}

fn ensemble_document<const D: usize>(entry: &CatalogEntry<D>, r: &Resolved<D>, params: &RunConfig) -> Result<Value> {
    let started = Instant::now();
    let h = r.single_h()?;
    let phi = ensemble_phi(&entry.problem, &r.x0, r.t, h, r.m, r.seed, r.workers)?;
    let bd = ensemble_boundary(&entry.problem, &r.x0, r.t, h, r.m, r.seed, r.workers)?;
    let ex = entry.exact;
    Ok(json!({
        "command": CommandKind::Ensemble.name(),
        "problem": entry.name,
        "parameters": params,
        "estimates": {
            "phi_mean": phi.mean,
            "psi_ratio_of_means": bd.ratio_of_means,
            "psi_mean_of_ratios": bd.mean_of_ratios,
        },
        "mc_error": {
            "phi_mean": phi.ci_halfwidth,
            "psi_ratio_of_means": bd.ratio_of_means_err,
            "psi_mean_of_ratios": bd.mean_of_ratios_err,
        },
        "exact": { "phi_bar": ex.phi_bar, "psi_prime": ex.psi_prime },
        "abs_error": {
            "phi_mean": abs_error(Some(phi.mean), ex.phi_bar),
            "psi_ratio_of_means": abs_error(bd.ratio_of_means, ex.psi_prime),
            "psi_mean_of_ratios": abs_error(bd.mean_of_ratios, ex.psi_prime),
        },
        "wall_time": started.elapsed().as_secs_f64(),
        "seed": r.seed,
        "M": r.m,
        "trajectories_without_contact": bd.trajectories_without_contact,
    }))
}

fn sample_outcome<const D: usize>(
    config: &RunConfig,
    entry: &CatalogEntry<D>,
    r: &Resolved<D>,
    params: &RunConfig,
) -> Result<Outcome> {
    let started = Instant::now();
    let h = r.single_h()?;
    let settings = ChainSettings::new(h, r.seed);
    let coords: Vec<String> = (1..=D).map(|i| format!("x{i}")).collect();
    let mut csv = coords.join(",");
    let fmt = |p: &Point<D>| p.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",");
    let (estimate, exact, count, key) = if config.boundary.unwrap_or(false) {
        let samples = sample_boundary_with(&entry.problem, &r.x0, settings, r.t)?;
        csv.push_str(",weight\n");
        for s in &samples {
            csv.push_str(&format!("{},{:e}\n", fmt(&s.z), s.weight));
        }
        let psi = |z: &Point<D>| (entry.problem.psi)(0.0, z);
        (weighted_mean(&samples, psi), entry.exact.psi_prime, samples.len(), "psi_prime")
    } else {
        let n = at_least_one("n", config.n.unwrap_or(10_000))?;
        let burn = config.burn_in.unwrap_or_else(|| default_burn_in(h));
        let samples = sample_interior_with(&entry.problem, &r.x0, settings, n as usize, Some(burn))?;
        csv.push('\n');
        let mut sum = 0.0;
        for s in &samples {
            csv.push_str(&fmt(s));
            csv.push('\n');
            sum += (entry.problem.phi)(s);
        }
        (Some(sum / samples.len() as f64), entry.exact.phi_bar, samples.len(), "phi_bar")
    };
    let document = json!({
        "command": CommandKind::Sample.name(),
        "problem": entry.name,
        "parameters": params,
        "estimate": estimate,
        "estimates_target": key,
        "exact": exact,
        "abs_error": abs_error(estimate, exact),
        "samples": count,
        "wall_time": started.elapsed().as_secs_f64(),
        "seed": r.seed,
    });
    Ok(Outcome { document, csv: Some(csv) })
}

/// Least-squares slope of `ln err` against `ln h`, with its standard error
/// when there are more than two points.
pub fn fit_slope(h: &[f64], err: &[f64]) -> Option<(f64, Option<f64>)> {
    if h.len() != err.len() || h.len() < 2 || err.iter().chain(h).any(|&v| !(v > 0.0)) {
        return None;
    }
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let se = (h.len() > 2).then(|| {
        let ssr: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    });
    Some((slope, se))
}

fn convergence_outcome<const D: usize>(
    config: &RunConfig,
    entry: &CatalogEntry<D>,
    r: &Resolved<D>,
    params: &RunConfig,
) -> Result<Outcome> {
    let started = Instant::now();
    if r.hs.len() < 2 {
        return Err(Error::config("h", "a convergence study needs at least two steps"));
    }
    let mode = match &config.mode {
        Some(s) => Mode::parse(s)?,
        None => Mode::default_for(&entry.name),
    };
    let ex = entry.exact;
    let mut rows = Vec::new();
    for &h in &r.hs {
        let (estimate, err, exact) = match mode {
            Mode::Parabolic => {
                let res = solve_parabolic(&entry.problem, r.t0, &r.x0, r.t, h, r.m, r.seed, r.workers)?;
                (res.estimate, res.mc_error, entry.solution_at(r.t0, &r.x0))
            }
            Mode::Elliptic => {
                let res = solve_elliptic_decay(&entry.problem, &r.x0, r.t, h, r.m, r.seed, r.workers)?;
                (res.estimate, res.mc_error, entry.solution_at(0.0, &r.x0))
            }
            Mode::Poisson => {
                let (res, _) = poisson_run(config, entry, r, h)?;
                (res.estimate, res.mc_error, entry.solution_at(0.0, &r.x0))
            }
            Mode::Ergodic => {
                let (blocks, steps) = batches(config, r.t, h)?;
                let avg = time_average(&entry.problem, &r.x0, h, blocks, steps, r.seed)?;
                match (ex.phi_bar, ex.psi_prime) {
                    (Some(_), _) => (avg.phi_hat, avg.stat_err.phi.unwrap_or(f64::NAN), ex.phi_bar),
                    (None, Some(_)) => (
                        avg.psi_prime_hat.unwrap_or(f64::NAN),
                        avg.stat_err.psi_prime.unwrap_or(f64::NAN),
                        ex.psi_prime,
                    ),
                    _ => (avg.phi_hat, avg.stat_err.phi.unwrap_or(f64::NAN), None),
                }
            }
        };
        let exact = exact.ok_or_else(|| {
            Error::config("problem", format!("{} has no reference value for a convergence study", entry.name))
        })?;
        rows.push((h, estimate, err, (estimate - exact).abs(), exact));
    }
    let mut csv = String::from("h,estimate,mc_error,abs_error\n");
    for (h, est, err, ae, _) in &rows {
        csv.push_str(&format!("{h},{est},{err},{ae}\n"));
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let fit = fit_slope(&hs, &errs);
    let document = json!({
        "command": CommandKind::ConvergenceStudy.name(),
        "problem": entry.name,
        "parameters": params,
        "mode": mode.name(),
        "estimates": rows.iter().map(|r| json!({
            "h": r.0, "estimate": r.1, "mc_error": r.2, "abs_error": r.3,
        })).collect::<Vec<_>>(),
        "exact": rows.first().map(|r| r.4),
        "abs_error": errs,
        "slope": fit.map(|f| f.0),
        "slope_stderr": fit.and_then(|f| f.1),
        "wall_time": started.elapsed().as_secs_f64(),
        "seed": r.seed,
    });
    Ok(Outcome { document, csv: Some(csv) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let h = [0.4, 0.2, 0.1, 0.05];
        let e: Vec<f64> = h.iter().map(|v: &f64| 3.0 * v * v).collect();
        let (s, se) = fit_slope(&h, &e).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!(se.unwrap() < 1e-10);
        assert!(fit_slope(&[0.1], &[0.2]).is_none());
        assert!(fit_slope(&[0.1, 0.2], &[0.0, 0.2]).is_none());
    }

    #[test]
    fn counts_accept_float_notation() {
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert_eq!(parse_count("250"), Ok(250));
        assert!(parse_count("2.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn flags_override_config() {
        let mut c: RunConfig = toml::from_str("problem = \"exp8_1\"\nh = 0.1\nM = 1e3\nseed = 4\n").unwrap();
        assert_eq!(c.h, Some(vec![0.1]));
        assert_eq!(c.m, Some(1000));
        let f = Flags {
            h: Some("0.05,0.025".into()),
            seed: Some(9),
            ..Flags::default()
        };
        c.apply(&f).unwrap();
        assert_eq!(c.h, Some(vec![0.05, 0.025]));
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.m, Some(1000));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("problem = \"exp8_1\"\nstep = 0.1\n").is_err());
        let d: RunConfig = toml::from_str("[domain]\nkind = \"ball\"\ncenter = [0.0, 0.0]\nradius = 3.0\n").unwrap();
        assert!(matches!(d.domain, Some(DomainSpec::Ball { radius, .. }) if radius == 3.0));
        assert!(toml::from_str::<RunConfig>("[domain]\nkind = \"ball\"\nradius = 3.0\nfoo = 1\n").is_err());
    }

    #[test]
    fn negative_step_names_key() {
        let c = RunConfig {
            problem: Some("exp8_1".into()),
            h: Some(vec![-0.1]),
            ..RunConfig::default()
        };
        let Err(e) = execute(CommandKind::SolveParabolic, &c) else { panic!() };
        assert_eq!(exit_code(&e), 2);
        assert!(matches!(&e, Error::Config { key, .. } if key == "h"));
    }

    #[test]
    fn recorded_parameters_round_trip() {
        let c = RunConfig {
            command: Some(CommandKind::SolveParabolic),
            problem: Some("exp8_1".into()),
            h: Some(vec![0.1]),
            m: Some(300),
            seed: Some(5),
            ..RunConfig::default()
        };
        let a = execute(CommandKind::SolveParabolic, &c).unwrap().document;
        let params: RunConfig = serde_json::from_value(a["parameters"].clone()).unwrap();
        let b = execute(CommandKind::SolveParabolic, &params).unwrap().document;
        assert_eq!(a["estimate"], b["estimate"]);
        assert_eq!(a["mc_error"], b["mc_error"]);
    }
}
