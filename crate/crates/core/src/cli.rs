//! The `auvgeom` command line.
//!
//! A run is described by one JSON document ([`RunConfig`]). It is assembled
//! from, in increasing precedence: built-in defaults or a `--figure` preset,
//! the `--config` file, `--set path=value` overrides, and `--seed`.

use crate::deployment::{self, DeploymentError, UscObjective};
use crate::fisher::{self, FisherError};
use crate::geometry::Position;
use crate::harness::{self, Deployment, Figure, HarnessError, ResultRow, ResultTable, Scenario, Scheme, SweepAxis, SweepSpec};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SINGULAR: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_IO: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "auvgeom", version, about = "CRLB analysis and anchor placement for AUV time-of-flight localization")]
#[command(args_override_self = true)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for Monte-Carlo trials (results do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory for CSV and SVG files.
    #[arg(long, global = true, env = "AUVGEOM_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also write an SVG plot.
    #[arg(long, global = true)]
    pub plot: bool,
    /// Start from a published figure set-up: 3, 4a, 4b, 5, 6 or steepness.
    #[arg(long, global = true, value_name = "NAME")]
    pub figure: Option<String>,
    /// Override one config value, e.g. `--set scenario.trials=500`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fisher information and CRLB of one layout.
    Crlb,
    /// Optimize the USC radius scale factor.
    OptimizeK {
        /// Cross-check against a grid search.
        #[arg(long)]
        grid: bool,
    },
    /// Monte-Carlo simulation of one scenario or a sweep.
    Simulate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Crlb => "crlb",
            Command::OptimizeK { .. } => "optimize-k",
            Command::Simulate => "simulate",
        }
    }
}

/// Grid used by `optimize-k --grid` and for the k-sweep output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub k_min: f64,
    pub k_max: f64,
    pub steps: usize,
    /// Points in the k-sweep CSV/SVG.
    pub sweep_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { k_min: 0.5, k_max: 1.5, steps: 10_000, sweep_points: 101 }
    }
}

/// Sweep part of a run: the scenario in [`RunConfig::scenario`] is the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default)]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub anchor_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub sweep: Option<SweepConfig>,
    pub grid: GridConfig,
    /// Explicit anchor positions for `crlb`; overrides the scenario layout.
    pub anchors: Option<Vec<Position>>,
}

impl RunConfig {
    pub fn from_figure(figure: Figure) -> Self {
        let spec = figure.sweep();
        Self {
            scenario: spec.base,
            sweep: Some(SweepConfig {
                axis: spec.axis,
                values: spec.values,
                schemes: spec.schemes,
                anchor_counts: spec.anchor_counts,
            }),
            ..Self::default()
        }
    }

    pub fn sweep_spec(&self) -> Option<SweepSpec> {
        self.sweep.as_ref().map(|s| SweepSpec {
            axis: s.axis,
            values: s.values.clone(),
            base: self.scenario.clone(),
            schemes: s.schemes.clone(),
            anchor_counts: s.anchor_counts.clone(),
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if !(g.k_min > 0.0 && g.k_min < g.k_max && g.k_max.is_finite()) || g.steps < 100 || g.sweep_points < 2 {
            return Err(CliError::validation("grid needs 0 < k_min < k_max, steps >= 100 and sweep_points >= 2"));
        }
        if let Some(anchors) = &self.anchors {
            if anchors.len() < fisher::MIN_ANCHORS {
                return Err(CliError::validation(format!(
                    "at least {} anchors are needed, got {}",
                    fisher::MIN_ANCHORS,
                    anchors.len()
                )));
            }
        }
        self.scenario.validate().map_err(CliError::from)?;
        if let Some(spec) = self.sweep_spec() {
            spec.validate().map_err(CliError::from)?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<FisherError> for CliError {
    fn from(e: FisherError) -> Self {
        let code = match innermost_fisher(&e) {
            FisherError::SingularFim { .. } | FisherError::DegenerateGeometry(_) | FisherError::ZeroDiagonal => {
                EXIT_SINGULAR
            }
            _ => EXIT_VALIDATION,
        };
        Self { code, message: e.to_string() }
    }
}

fn innermost_fisher(e: &FisherError) -> &FisherError {
    match e {
        FisherError::Anchor { source, .. } => innermost_fisher(source),
        other => other,
    }
}

impl From<DeploymentError> for CliError {
    fn from(e: DeploymentError) -> Self {
        match e {
            DeploymentError::Fisher(f) => f.into(),
            DeploymentError::NonPositiveK { .. } => Self { code: EXIT_NOT_CONVERGED, message: e.to_string() },
            DeploymentError::DegenerateAfterRetries(_) => Self { code: EXIT_SINGULAR, message: e.to_string() },
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Deployment(d) => d.into(),
            HarnessError::Fisher(f) => f.into(),
            HarnessError::Io { .. } => Self { code: EXIT_IO, message: e.to_string() },
            other => Self::validation(other.to_string()),
        }
    }
}

/// Entry point used by the binary.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = resolve_config(cli)?;
    config.validate()?;
    let work = || match &cli.command {
        Command::Crlb => cmd_crlb(cli, &config),
        Command::OptimizeK { grid } => cmd_optimize_k(cli, &config, *grid),
        Command::Simulate => cmd_simulate(cli, &config),
    };
    match cli.workers {
        Some(0) => Err(CliError::validation("--workers must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::validation(format!("cannot start {n} workers: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Builds the effective configuration from preset, file, overrides and flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let base = match &cli.figure {
        Some(name) => RunConfig::from_figure(
            Figure::parse(name).ok_or_else(|| CliError::validation(format!("unknown figure `{name}`")))?,
        ),
        None => RunConfig::default(),
    };
    let mut doc = serde_json::to_value(&base).expect("config serializes");
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {} is not valid JSON: {e}", path.display())))?;
        merge(&mut doc, file);
    }
    for assignment in &cli.overrides {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("--set expects PATH=VALUE, got `{assignment}`")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut doc, path, value)?;
    }
    if let Some(seed) = cli.seed {
        set_path(&mut doc, "scenario.master_seed", Value::from(seed))?;
    }
    serde_json::from_value(doc).map_err(|e| CliError::validation(format!("invalid configuration: {e}")))
}

/// Recursive object merge; anything that is not an object on both sides is
/// replaced.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::validation(format!("bad config path `{path}`")));
    }
    for part in &parts[..parts.len() - 1] {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => map.entry(part.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| CliError::validation(format!("`{part}` in `{path}` is not an index")))?;
                items.get_mut(i).ok_or_else(|| CliError::validation(format!("index {i} out of range in `{path}`")))?
            }
            _ => return Err(CliError::validation(format!("`{path}` does not name a config field"))),
        };
    }
    let last = parts[parts.len() - 1];
    if node.is_null() {
        *node = Value::Object(Default::default());
    }
    match node {
        Value::Object(map) => {
            map.insert(last.to_string(), value);
        }
        Value::Array(items) => {
            let i: usize = last.parse().map_err(|_| CliError::validation(format!("`{last}` in `{path}` is not an index")))?;
            *items.get_mut(i).ok_or_else(|| CliError::validation(format!("index {i} out of range in `{path}`")))? = value;
        }
        _ => return Err(CliError::validation(format!("`{path}` does not name a config field"))),
    }
    Ok(())
}

fn metadata(cli: &Cli, config: &RunConfig) -> Vec<String> {
    vec![
        format!("auvgeom {}", env!("CARGO_PKG_VERSION")),
        format!("command: {}", cli.command.name()),
        format!("config: {}", serde_json::to_string(config).expect("config serializes")),
    ]
}

fn output_dir(cli: &Cli) -> Option<&Path> {
    cli.out.as_deref()
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError { code: EXIT_IO, message: format!("cannot create {}: {e}", dir.display()) })
}

/// Writes the table (and optionally a plot) under the output directory, or
/// prints the CSV when there is none.
fn emit(cli: &Cli, table: &ResultTable, spec: Option<&SweepSpec>, stem: &str) -> Result<(), CliError> {
    match output_dir(cli) {
        Some(dir) => {
            ensure_dir(dir)?;
            let csv_path = dir.join(format!("{stem}.csv"));
            harness::export_csv(table, &csv_path)?;
            println!("wrote {}", csv_path.display());
            if cli.plot {
                if let Some(spec) = spec {
                    let svg_path = dir.join(format!("{stem}.svg"));
                    harness::emit_plot(table, spec, &svg_path)?;
                    println!("wrote {}", svg_path.display());
                }
            }
        }
        None => {
            print!("{}", harness::to_csv(table));
            if cli.plot {
                eprintln!("note: --plot needs --out or AUVGEOM_OUT; no plot written");
            }
        }
    }
    Ok(())
}

fn scenario_anchors(config: &RunConfig) -> Result<Vec<Position>, CliError> {
    if let Some(anchors) = &config.anchors {
        return Ok(anchors.clone());
    }
    let s = &config.scenario;
    let auv = s.auv_truth;
    Ok(match s.scheme.deployment {
        Deployment::Usc { .. } => deployment::usc_positions(&auv, s.anchor_count, s.usc_scale()?)?,
        Deployment::Cube { side } => deployment::cube_positions(&auv, side.unwrap_or(2.0 * auv.z), s.anchor_count)?,
        Deployment::Random { seed, .. } => {
            let region = deployment::RandomRegion::around(&auv);
            deployment::random_positions(&region, s.anchor_count, seed, deployment::fim_is_regular(auv, s.ssp, s.noise))?
        }
    })
}

fn cmd_crlb(cli: &Cli, config: &RunConfig) -> Result<(), CliError> {
    let s = &config.scenario;
    let anchors = scenario_anchors(config)?;
    let result = fisher::fim(&s.auv_truth, &anchors, &s.ssp, &s.noise)?;
    let diagonal = fisher::diagonal_lower_bound(&result)?;
    println!("anchors: {}", anchors.len());
    println!("trace_crlb_m2: {}", result.trace_crlb);
    println!("diagonal_lower_bound_m2: {diagonal}");
    println!("offdiag_residual: {:e}", result.offdiag_residual);
    println!("condition_number: {}", result.condition_number);
    if s.estimator.depth_weight > 0.0 {
        let aided = result.with_depth_information(s.estimator.depth_weight)?;
        println!("trace_crlb_with_depth_m2: {}", aided.trace_crlb);
    }
    if output_dir(cli).is_some() {
        let k = match (s.scheme.deployment, &config.anchors) {
            (Deployment::Usc { .. }, None) => Some(s.usc_scale()?),
            _ => None,
        };
        let row = ResultRow {
            axis_name: "none".into(),
            axis_value: 0.0,
            scheme: if config.anchors.is_some() { "custom".into() } else { s.scheme.label().into() },
            n_anchors: anchors.len(),
            k,
            rmse_m: None,
            trace_crlb_m2: Some(result.trace_crlb),
            diverged: 0,
            trials: 0,
            seed: s.master_seed,
            annotation: None,
        };
        let table = ResultTable { metadata: metadata(cli, config), rows: vec![row] };
        emit(cli, &table, None, "crlb")?;
    }
    Ok(())
}

fn cmd_optimize_k(cli: &Cli, config: &RunConfig, grid: bool) -> Result<(), CliError> {
    let s = &config.scenario;
    let objective = UscObjective::new(s.auv_truth.z, s.anchor_count, s.ssp, s.noise)?;
    let outcome = deployment::optimize_k(&objective, &s.optimizer)?;
    println!("k_star: {}", outcome.k_star);
    println!("objective_m2: {}", outcome.objective);
    println!("iterations: {}", outcome.iterations);
    println!("converged: {}", outcome.converged);
    let g = &config.grid;
    if grid {
        let k_grid = deployment::grid_search_k(&objective, g.k_min, g.k_max, g.steps)?;
        println!("k_grid: {k_grid}");
        println!("difference: {:e}", (outcome.k_star - k_grid).abs());
    }
    if output_dir(cli).is_some() {
        let spec = SweepSpec {
            axis: SweepAxis::ScaleK,
            values: (0..g.sweep_points)
                .map(|i| g.k_min + (g.k_max - g.k_min) * i as f64 / (g.sweep_points - 1) as f64)
                .collect(),
            base: s.clone(),
            schemes: vec![Scheme::new(Deployment::usc())],
            anchor_counts: vec![s.anchor_count],
        };
        let mut table = harness::sweep(&spec)?;
        table.metadata = metadata(cli, config);
        table.metadata.push(format!("k_star: {}", outcome.k_star));
        emit(cli, &table, Some(&spec), "k-sweep")?;
    }
    if !outcome.converged {
        return Err(CliError {
            code: EXIT_NOT_CONVERGED,
            message: format!("optimizer stopped after {} iterations without converging", outcome.iterations),
        });
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, config: &RunConfig) -> Result<(), CliError> {
    let stem = match &cli.figure {
        Some(name) => format!("figure-{}", name.to_ascii_lowercase().trim_start_matches("fig")),
        None => "simulate".to_string(),
    };
    match config.sweep_spec() {
        Some(spec) => {
            let mut table = harness::sweep(&spec)?;
            table.metadata = metadata(cli, config);
            for row in &table.rows {
                eprintln!(
                    "{}={} {} N={}: rmse {} m, tr(CRLB) {} m^2, excluded {}/{}",
                    row.axis_name,
                    row.axis_value,
                    row.scheme,
                    row.n_anchors,
                    fmt_opt(row.rmse_m),
                    fmt_opt(row.trace_crlb_m2),
                    row.diverged,
                    row.trials
                );
            }
            emit(cli, &table, Some(&spec), &stem)
        }
        None => {
            let mut row = harness::run_scenario(&config.scenario)?;
            row.axis_name = "none".into();
            let spec = SweepSpec {
                axis: SweepAxis::AnchorCount,
                values: vec![config.scenario.anchor_count as f64],
                base: config.scenario.clone(),
                schemes: Vec::new(),
                anchor_counts: Vec::new(),
            };
            let table = ResultTable { metadata: metadata(cli, config), rows: vec![row] };
            emit(cli, &table, Some(&spec), &stem)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("auvgeom").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn set_overrides_nested_values() {
        let cli = parse(&["--set", "scenario.trials=17", "--set", "scenario.auv_truth.z=80", "simulate"]);
        let c = resolve_config(&cli).unwrap();
        assert_eq!(c.scenario.trials, 17);
        assert_eq!(c.scenario.auv_truth.z, 80.0);
    }

    #[test]
    fn seed_flag_wins_and_repeats() {
        let cli = parse(&["--seed", "3", "--seed", "7", "--set", "scenario.master_seed=5", "crlb"]);
        assert_eq!(resolve_config(&cli).unwrap().scenario.master_seed, 7);
    }

    #[test]
    fn figure_preset_sets_sweep() {
        let cli = parse(&["--figure", "5", "simulate"]);
        let c = resolve_config(&cli).unwrap();
        let sweep = c.sweep.unwrap();
        assert_eq!(sweep.axis, SweepAxis::SigmaMs);
        assert_eq!(sweep.values, vec![0.1, 0.5, 1.0, 5.0, 10.0]);
    }

    #[test]
    fn unknown_field_is_rejected() {
        let cli = parse(&["--set", "scenario.trails=5", "simulate"]);
        assert_eq!(resolve_config(&cli).unwrap_err().code, EXIT_VALIDATION);
    }

    #[test]
    fn missing_config_names_path() {
        let cli = parse(&["--config", "/nonexistent/run.json", "crlb"]);
        let err = resolve_config(&cli).unwrap_err();
        assert_eq!(err.code, EXIT_VALIDATION);
        assert!(err.message.contains("/nonexistent/run.json"));
    }

    #[test]
    fn merge_is_deep() {
        let mut a = serde_json::json!({"x": {"y": 1, "z": 2}, "w": 3});
        merge(&mut a, serde_json::json!({"x": {"y": 10}}));
        assert_eq!(a, serde_json::json!({"x": {"y": 10, "z": 2}, "w": 3}));
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(FisherError::SingularFim { condition: 1e20 }).code, EXIT_SINGULAR);
        assert_eq!(CliError::from(DeploymentError::TooFewAnchors(3)).code, EXIT_VALIDATION);
        assert_eq!(CliError::from(DeploymentError::NonPositiveK { k: -1.0 }).code, EXIT_NOT_CONVERGED);
        let nested = FisherError::Anchor { index: 1, source: Box::new(FisherError::DegenerateGeometry("x")) };
        assert_eq!(CliError::from(nested).code, EXIT_SINGULAR);
    }
}
