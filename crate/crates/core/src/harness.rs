//! Monte-Carlo scenarios, parameter sweeps, and CSV/SVG output.
//!
//! Every trial owns two ChaCha streams derived from the master seed and the
//! trial index (one for geometry, one for measurement noise), so results do not
//! depend on how trials are spread over threads, and schemes compared at the
//! same seed see the same noise draws.

use crate::deployment::{self, DeploymentError, OptimizerConfig, RandomRegion, UscObjective};
use crate::estimation::{self, EstimationError, EstimatorConfig, DEFAULT_DEPTH_VARIANCE};
use crate::fisher::{self, FisherError, NoiseModel};
use crate::geometry::{Position, SoundSpeedProfile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Rows whose non-converged share exceeds this are flagged in the CSV.
pub const DIVERGENCE_FLAG_FRACTION: f64 = 0.05;

/// Lowest depth a displaced AUV is allowed to reach, meters.
pub const MIN_DISPLACED_DEPTH: f64 = 1.0;

pub const CSV_HEADER: &str = "axis_name,axis_value,scheme,n_anchors,k,rmse_m,trace_crlb_m2,diverged,trials,seed";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Deployment(#[from] DeploymentError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Fisher(#[from] FisherError),
    #[error("cannot plot an empty table")]
    EmptyTable,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::InvalidScenario(msg.into())
}

/// Where random anchors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomPlacement {
    /// [`RandomRegion::around`] the AUV.
    #[default]
    Around,
    /// On the sphere about the AUV whose radius is the USC slant range, so
    /// every anchor is as far away as a USC anchor would be.
    EqualRange,
    Region { region: RandomRegion },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deployment {
    /// Surface ring of radius `k * depth`. Without `k` the radius scale is
    /// optimized for the scenario's noise model.
    Usc {
        #[serde(default)]
        k: Option<f64>,
    },
    /// Cube centred horizontally on the AUV with its top face at the surface.
    /// Default side is twice the AUV depth.
    Cube {
        #[serde(default)]
        side: Option<f64>,
    },
    /// A fresh layout every trial unless `redraw_per_trial` is false, in which
    /// case one layout is drawn from `seed` and reused.
    Random {
        #[serde(default)]
        placement: RandomPlacement,
        #[serde(default = "default_true")]
        redraw_per_trial: bool,
        #[serde(default)]
        seed: u64,
    },
}

fn default_true() -> bool {
    true
}

impl Deployment {
    pub fn usc() -> Self {
        Deployment::Usc { k: None }
    }

    pub fn cube() -> Self {
        Deployment::Cube { side: None }
    }

    pub fn random(placement: RandomPlacement) -> Self {
        Deployment::Random { placement, redraw_per_trial: true, seed: 0 }
    }
}

/// How the AUV sits relative to the layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Movement {
    #[default]
    Static,
    /// Layout built around the initial position, then the AUV moves `delta`
    /// meters in a random direction while the anchors stay put.
    RmUsc { delta: f64 },
    /// Same displacement, but the layout is rebuilt around the moved AUV.
    RsUsc { delta: f64 },
}

/// A deployment plus movement model, i.e. one curve in a figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub deployment: Deployment,
    #[serde(default)]
    pub movement: Movement,
}

impl Scheme {
    pub fn new(deployment: Deployment) -> Self {
        Self { deployment, movement: Movement::Static }
    }

    pub fn label(&self) -> &'static str {
        match (self.deployment, self.movement) {
            (_, Movement::RmUsc { .. }) => "rm_usc",
            (_, Movement::RsUsc { .. }) => "rs_usc",
            (Deployment::Usc { .. }, _) => "usc",
            (Deployment::Cube { .. }, _) => "cube",
            (Deployment::Random { .. }, _) => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub auv_truth: Position,
    pub anchor_count: usize,
    pub scheme: Scheme,
    pub ssp: SoundSpeedProfile,
    pub noise: NoiseModel,
    pub trials: usize,
    pub master_seed: u64,
    pub estimator: EstimatorConfig,
    /// Depth-sensor noise variance, m^2.
    pub depth_variance: f64,
    /// Used when the USC radius scale is optimized.
    pub optimizer: OptimizerConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            auv_truth: Position::new(50.0, 50.0, 50.0),
            anchor_count: 8,
            scheme: Scheme::new(Deployment::usc()),
            ssp: SoundSpeedProfile::default(),
            noise: NoiseModel::default(),
            trials: 2000,
            master_seed: 1,
            estimator: EstimatorConfig::default(),
            depth_variance: DEFAULT_DEPTH_VARIANCE,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials < 1 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.anchor_count < fisher::MIN_ANCHORS {
            return Err(HarnessError::Deployment(DeploymentError::TooFewAnchors(self.anchor_count)));
        }
        if !self.auv_truth.is_finite() || !(self.auv_truth.z > 0.0) {
            return Err(invalid(format!("AUV depth must be positive, got {}", self.auv_truth.z)));
        }
        if !(self.depth_variance >= 0.0 && self.depth_variance.is_finite()) {
            return Err(invalid(format!("depth variance must be >= 0, got {}", self.depth_variance)));
        }
        self.noise.validate()?;
        self.estimator.validate()?;
        self.optimizer.validate()?;
        match self.scheme.deployment {
            Deployment::Usc { k: Some(k) } if !(k > 0.0 && k.is_finite()) => {
                return Err(invalid(format!("USC scale k must be positive, got {k}")));
            }
            Deployment::Cube { .. } if self.anchor_count > 8 => {
                return Err(HarnessError::Deployment(DeploymentError::UnsupportedCount(self.anchor_count)));
            }
            Deployment::Cube { side: Some(side) } if !(side > 0.0 && side.is_finite()) => {
                return Err(invalid(format!("cube side must be positive, got {side}")));
            }
            Deployment::Random { placement: RandomPlacement::Region { region }, .. } => region.validate()?,
            _ => {}
        }
        if let Movement::RmUsc { delta } | Movement::RsUsc { delta } = self.scheme.movement {
            if !(delta >= 0.0 && delta.is_finite()) {
                return Err(invalid(format!("movement delta must be >= 0, got {delta}")));
            }
        }
        Ok(())
    }

    /// The USC radius scale this scenario uses: fixed, or optimized for the
    /// AUV depth and noise model.
    pub fn usc_scale(&self) -> Result<f64, HarnessError> {
        match self.scheme.deployment {
            Deployment::Usc { k: Some(k) } => Ok(k),
            _ => optimized_k(self),
        }
    }
}

fn optimized_k(s: &Scenario) -> Result<f64, HarnessError> {
    let objective = UscObjective::new(s.auv_truth.z, s.anchor_count, s.ssp, s.noise)?;
    let outcome = deployment::optimize_k(&objective, &s.optimizer)?;
    Ok(outcome.k_star)
}

/// One line of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub axis_name: String,
    pub axis_value: f64,
    pub scheme: String,
    pub n_anchors: usize,
    /// USC radius scale; empty for other layouts.
    pub k: Option<f64>,
    pub rmse_m: Option<f64>,
    /// Mean over trials of the travel-time-only `tr(CRLB)` at the trial's
    /// geometry.
    pub trace_crlb_m2: Option<f64>,
    /// Trials excluded from the RMSE (diverged, iteration cap, or failed).
    pub diverged: usize,
    pub trials: usize,
    pub seed: u64,
    /// Why a row is incomplete, if it is.
    #[serde(skip)]
    pub annotation: Option<String>,
}

impl ResultRow {
    pub fn divergence_fraction(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.diverged as f64 / self.trials as f64
        }
    }

    pub fn flagged(&self) -> bool {
        self.divergence_fraction() > DIVERGENCE_FLAG_FRACTION
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    /// Free-form lines written as `#` comments above the header.
    pub metadata: Vec<String>,
    pub rows: Vec<ResultRow>,
}

/// Fixed or shared parts of a scenario, resolved once before the trials.
struct Prepared {
    k: Option<f64>,
    fixed_random: Option<Vec<Position>>,
}

struct TrialOutcome {
    squared_error: Option<f64>,
    trace_crlb: Option<f64>,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn prepare(s: &Scenario) -> Result<Prepared, HarnessError> {
    let needs_k = matches!(
        s.scheme.deployment,
        Deployment::Usc { .. } | Deployment::Random { placement: RandomPlacement::EqualRange, .. }
    );
    let k = if needs_k { Some(s.usc_scale()?) } else { None };
    let fixed_random = match s.scheme.deployment {
        Deployment::Random { placement, redraw_per_trial: false, seed } => {
            let region = random_region(placement, &s.auv_truth, k)?;
            let accept = deployment::fim_is_regular(s.auv_truth, s.ssp, s.noise);
            Some(deployment::random_positions(&region, s.anchor_count, seed, accept)?)
        }
        _ => None,
    };
    Ok(Prepared { k, fixed_random })
}

fn random_region(placement: RandomPlacement, auv: &Position, k: Option<f64>) -> Result<RandomRegion, HarnessError> {
    Ok(match placement {
        RandomPlacement::Around => RandomRegion::around(auv),
        RandomPlacement::Region { region } => region,
        RandomPlacement::EqualRange => {
            let k = k.ok_or_else(|| invalid("equal-range placement needs a USC scale"))?;
            RandomRegion::Shell { center: *auv, radius: auv.z * (1.0 + k * k).sqrt() }
        }
    })
}

fn layout_about(
    s: &Scenario,
    prepared: &Prepared,
    centre: &Position,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Position>, HarnessError> {
    Ok(match s.scheme.deployment {
        Deployment::Usc { .. } => deployment::usc_positions(centre, s.anchor_count, prepared.k.unwrap_or(1.0))?,
        Deployment::Cube { side } => deployment::cube_positions(centre, side.unwrap_or(2.0 * centre.z), s.anchor_count)?,
        Deployment::Random { placement, .. } => match &prepared.fixed_random {
            Some(layout) => layout.clone(),
            None => {
                let region = random_region(placement, centre, prepared.k)?;
                let accept = deployment::fim_is_regular(*centre, s.ssp, s.noise);
                deployment::random_positions_with(&region, s.anchor_count, rng, accept)?
            }
        },
    })
}

fn displaced(from: &Position, delta: f64, rng: &mut ChaCha8Rng) -> Position {
    let [dx, dy, dz] = estimation::random_direction(rng);
    let mut q = from.offset(delta * dx, delta * dy, delta * dz);
    q.z = q.z.max(MIN_DISPLACED_DEPTH);
    q
}

fn run_trial(s: &Scenario, prepared: &Prepared, trial: u64) -> TrialOutcome {
    let mut geometry_rng = stream(s.master_seed, 2 * trial + 1);
    let mut noise_rng = stream(s.master_seed, 2 * trial);
    let initial = s.auv_truth;
    let built = match s.scheme.movement {
        Movement::Static => layout_about(s, prepared, &initial, &mut geometry_rng).map(|a| (initial, a)),
        Movement::RmUsc { delta } => {
            let truth = displaced(&initial, delta, &mut geometry_rng);
            layout_about(s, prepared, &initial, &mut geometry_rng).map(|a| (truth, a))
        }
        Movement::RsUsc { delta } => {
            let truth = displaced(&initial, delta, &mut geometry_rng);
            layout_about(s, prepared, &truth, &mut geometry_rng).map(|a| (truth, a))
        }
    };
    let Ok((truth, anchors)) = built else {
        return TrialOutcome { squared_error: None, trace_crlb: None };
    };
    let trace_crlb = fisher::fim(&truth, &anchors, &s.ssp, &s.noise).ok().map(|f| f.trace_crlb);
    let squared_error = (|| {
        let sample = estimation::simulate_measurements_with(&truth, &anchors, &s.ssp, &s.noise, s.depth_variance, &mut noise_rng)?;
        let start = s.estimator.initial_point(&sample, &anchors, Some(&truth))?;
        let est = estimation::estimate_position_from(&sample, &anchors, &s.ssp, &s.noise, &s.estimator, start)?;
        Ok::<_, EstimationError>(est.converged.then(|| estimation::squared_error(&est.q_hat, &truth)))
    })()
    .ok()
    .flatten();
    TrialOutcome { squared_error, trace_crlb }
}

/// Runs `trials` simulate-then-estimate cycles and summarizes them.
///
/// Layouts with a singular FIM do not abort the run: the row comes back with
/// no bound, every trial counted as diverged, and an annotation.
pub fn run_scenario(s: &Scenario) -> Result<ResultRow, HarnessError> {
    s.validate()?;
    let prepared = prepare(s)?;
    let outcomes: Vec<TrialOutcome> = (0..s.trials as u64).into_par_iter().map(|t| run_trial(s, &prepared, t)).collect();

    let squared: Vec<f64> = outcomes.iter().filter_map(|o| o.squared_error).collect();
    let diverged = outcomes.len() - squared.len();
    let rmse_m = estimation::summarize_squared_errors(&squared, diverged).ok().map(|r| r.rmse);
    let traces: Vec<f64> = outcomes.iter().filter_map(|o| o.trace_crlb).collect();
    let trace_crlb_m2 = match traces.first() {
        None => None,
        // a layout that never changes keeps its exact value
        Some(&first) if traces.iter().all(|t| *t == first) => Some(first),
        Some(_) => Some(traces.iter().sum::<f64>() / traces.len() as f64),
    };

    let mut notes = Vec::new();
    if traces.len() < outcomes.len() {
        notes.push(format!("singular FIM in {} of {} trials", outcomes.len() - traces.len(), outcomes.len()));
    }
    if rmse_m.is_none() {
        notes.push("no converged trials".to_string());
    }
    Ok(ResultRow {
        axis_name: String::new(),
        axis_value: 0.0,
        scheme: s.scheme.label().to_string(),
        n_anchors: s.anchor_count,
        k: usc_k_column(s, &prepared),
        rmse_m,
        trace_crlb_m2,
        diverged,
        trials: s.trials,
        seed: s.master_seed,
        annotation: (!notes.is_empty()).then(|| notes.join("; ")),
    })
}

fn usc_k_column(s: &Scenario, prepared: &Prepared) -> Option<f64> {
    match s.scheme.deployment {
        Deployment::Usc { .. } => prepared.k,
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    AnchorCount,
    SigmaMs,
    SteepnessA,
    DeltaMeters,
    ScaleK,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::AnchorCount => "anchor_count",
            SweepAxis::SigmaMs => "sigma_ms",
            SweepAxis::SteepnessA => "steepness_a",
            SweepAxis::DeltaMeters => "delta_m",
            SweepAxis::ScaleK => "scale_k",
        }
    }

    fn label(&self) -> &'static str {
        match self {
            SweepAxis::AnchorCount => "number of anchors N",
            SweepAxis::SigmaMs => "ToF noise standard deviation σ (ms)",
            SweepAxis::SteepnessA => "SSP steepness a (1/s)",
            SweepAxis::DeltaMeters => "AUV deviation δ (m)",
            SweepAxis::ScaleK => "radius scale factor k",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub base: Scenario,
    /// One curve per scheme. Empty means the base scenario's scheme.
    #[serde(default)]
    pub schemes: Vec<Scheme>,
    /// Extra curves per anchor count (ignored on the anchor-count axis).
    /// Empty means the base anchor count.
    #[serde(default)]
    pub anchor_counts: Vec<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.values.is_empty() {
            return Err(HarnessError::InvalidSweep("values must be nonempty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) || self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HarnessError::InvalidSweep("values must be finite and strictly increasing".into()));
        }
        if self.axis == SweepAxis::AnchorCount && self.values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(HarnessError::InvalidSweep("anchor counts must be whole numbers".into()));
        }
        Ok(())
    }

    fn schemes(&self) -> Vec<Scheme> {
        if self.schemes.is_empty() {
            vec![self.base.scheme]
        } else {
            self.schemes.clone()
        }
    }

    fn anchor_counts(&self) -> Vec<usize> {
        if self.anchor_counts.is_empty() || self.axis == SweepAxis::AnchorCount {
            vec![self.base.anchor_count]
        } else {
            self.anchor_counts.clone()
        }
    }

    /// The scenario for one cell of the sweep.
    pub fn scenario(&self, value: f64, scheme: Scheme, anchor_count: usize) -> Result<Scenario, HarnessError> {
        let mut s = self.base.clone();
        s.scheme = scheme;
        s.anchor_count = anchor_count;
        match self.axis {
            SweepAxis::AnchorCount => s.anchor_count = value as usize,
            SweepAxis::SigmaMs => s.noise = NoiseModel::constant_ms(value),
            SweepAxis::SteepnessA => {
                s.ssp = SoundSpeedProfile::new(s.ssp.surface_speed(), value)
                    .map_err(|e| invalid(format!("steepness {value}: {e}")))?;
            }
            SweepAxis::DeltaMeters => {
                s.scheme.movement = match s.scheme.movement {
                    Movement::RmUsc { .. } => Movement::RmUsc { delta: value },
                    Movement::RsUsc { .. } => Movement::RsUsc { delta: value },
                    Movement::Static => Movement::Static,
                }
            }
            SweepAxis::ScaleK => s.scheme.deployment = Deployment::Usc { k: Some(value) },
        }
        Ok(s)
    }
}

/// One row per (value, scheme, anchor count), in that nesting order.
///
/// Scale-factor sweeps only evaluate the closed-form `tr(CRLB)(k)` objective.
/// A cell that fails becomes a row with an annotation rather than aborting the
/// sweep.
pub fn sweep(spec: &SweepSpec) -> Result<ResultTable, HarnessError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &value in &spec.values {
        for scheme in spec.schemes() {
            for n in spec.anchor_counts() {
                let result = spec.scenario(value, scheme, n).and_then(|s| {
                    if spec.axis == SweepAxis::ScaleK {
                        objective_row(&s, value)
                    } else {
                        run_scenario(&s)
                    }
                });
                let mut row = result.unwrap_or_else(|e| ResultRow {
                    axis_name: String::new(),
                    axis_value: value,
                    scheme: scheme.label().to_string(),
                    n_anchors: if spec.axis == SweepAxis::AnchorCount { value as usize } else { n },
                    k: None,
                    rmse_m: None,
                    trace_crlb_m2: None,
                    diverged: 0,
                    trials: 0,
                    seed: spec.base.master_seed,
                    annotation: Some(e.to_string()),
                });
                row.axis_name = spec.axis.name().to_string();
                row.axis_value = value;
                rows.push(row);
            }
        }
    }
    Ok(ResultTable { metadata: Vec::new(), rows })
}

fn objective_row(s: &Scenario, k: f64) -> Result<ResultRow, HarnessError> {
    let objective = UscObjective::new(s.auv_truth.z, s.anchor_count, s.ssp, s.noise)?;
    Ok(ResultRow {
        axis_name: String::new(),
        axis_value: k,
        scheme: "usc".into(),
        n_anchors: s.anchor_count,
        k: Some(k),
        rmse_m: None,
        trace_crlb_m2: Some(objective.evaluate(k)?),
        diverged: 0,
        trials: 0,
        seed: s.master_seed,
        annotation: None,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders the table as CSV text: metadata and row flags as `#` lines, then
/// the header, then rows in table order. Floats use Rust's shortest
/// round-trip formatting.
pub fn to_csv(table: &ResultTable) -> String {
    let mut out = String::new();
    for line in &table.metadata {
        for part in line.lines() {
            let _ = writeln!(out, "# {part}");
        }
    }
    for (i, row) in table.rows.iter().enumerate() {
        if row.flagged() {
            let _ = writeln!(
                out,
                "# flag: row {i} ({} n={} {}={}) excluded {} of {} trials",
                row.scheme, row.n_anchors, row.axis_name, row.axis_value, row.diverged, row.trials
            );
        }
        if let Some(note) = &row.annotation {
            let _ = writeln!(out, "# note: row {i} ({} n={} {}={}): {note}", row.scheme, row.n_anchors, row.axis_name, row.axis_value);
        }
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.axis_name,
            row.axis_value,
            row.scheme,
            row.n_anchors,
            opt(row.k),
            opt(row.rmse_m),
            opt(row.trace_crlb_m2),
            row.diverged,
            row.trials,
            row.seed
        );
    }
    out
}

pub fn export_csv(table: &ResultTable, path: &Path) -> Result<(), HarnessError> {
    write_file(path, &to_csv(table))
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

const PLOT_WIDTH: f64 = 640.0;
const PLOT_HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 95.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Draws one polyline per curve as a standalone SVG document.
///
/// Curves plot RMSE when the table has any, otherwise `tr(CRLB)`. The y axis is
/// logarithmic when the plotted values span two decades or more.
pub fn render_svg(table: &ResultTable, spec: &SweepSpec) -> Result<String, HarnessError> {
    let use_rmse = table.rows.iter().any(|r| r.rmse_m.is_some());
    let y_of = |r: &ResultRow| if use_rmse { r.rmse_m } else { r.trace_crlb_m2 };
    let split_by_n =
        spec.axis != SweepAxis::AnchorCount && table.rows.iter().any(|r| r.n_anchors != table.rows[0].n_anchors);

    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in &table.rows {
        let Some(y) = y_of(row).filter(|y| y.is_finite()) else { continue };
        let name = if split_by_n { format!("{} N={}", row.scheme, row.n_anchors) } else { row.scheme.clone() };
        match series.iter_mut().find(|(n, _)| *n == name) {
            Some((_, pts)) => pts.push((row.axis_value, y)),
            None => series.push((name, vec![(row.axis_value, y)])),
        }
    }
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if points.is_empty() {
        return Err(HarnessError::EmptyTable);
    }

    let (mut x_lo, mut x_hi) = min_max(points.iter().map(|p| p.0));
    let (y_min, y_max) = min_max(points.iter().map(|p| p.1));
    let log_y = y_min > 0.0 && y_max / y_min >= 100.0;
    if x_lo == x_hi {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    let (y_lo, y_hi) = if log_y {
        (y_min.log10().floor(), y_max.log10().ceil())
    } else {
        let pad = if y_max > y_min { 0.05 * (y_max - y_min) } else { 0.5 * y_max.abs().max(1.0) };
        ((y_min - pad).min(if y_min >= 0.0 { 0.0 } else { y_min - pad }), y_max + pad)
    };
    let plot_w = PLOT_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PLOT_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| {
        let v = if log_y { y.log10() } else { y };
        MARGIN_TOP + plot_h - (v - y_lo) / (y_hi - y_lo) * plot_h
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_WIDTH}" height="{PLOT_HEIGHT}" viewBox="0 0 {PLOT_WIDTH} {PLOT_HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );

    for x in nice_ticks(x_lo, x_hi) {
        let px = sx(x);
        let base = MARGIN_TOP + plot_h;
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{base}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, base + 5.0);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, base + 20.0, tick_label(x));
    }
    let y_ticks: Vec<f64> = if log_y {
        (y_lo as i32..=y_hi as i32).map(|e| 10f64.powi(e)).collect()
    } else {
        nice_ticks(y_lo, y_hi)
    };
    for y in y_ticks {
        let py = sy(y);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{MARGIN_LEFT}" y2="{py:.2}" stroke="black"/>"#,
            MARGIN_LEFT - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 8.0,
            py + 4.0,
            tick_label(y)
        );
    }

    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        PLOT_HEIGHT - 15.0,
        spec.axis.label()
    );
    let y_label = match (use_rmse, log_y) {
        (true, false) => "RMSE (m)",
        (true, true) => "RMSE (m, log scale)",
        (false, false) => "tr(CRLB) (m²)",
        (false, true) => "tr(CRLB) (m², log scale)",
    };
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{y_label}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );

    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = MARGIN_TOP + 15.0 + 18.0 * i as f64;
        let lx = PLOT_WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(table: &ResultTable, spec: &SweepSpec, path: &Path) -> Result<(), HarnessError> {
    if table.rows.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    write_file(path, &render_svg(table, spec)?)
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Tick positions on a 1-2-5 step inside `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * magnitude).find(|s| *s >= raw).unwrap_or(10.0 * magnitude);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Published figure set-ups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    /// `tr(CRLB)` against the radius scale for N = 4..8.
    Fig3,
    /// RMSE against N for the three layouts, AUV at (50, 50, 50).
    Fig4a,
    /// As `Fig4a` with the AUV at (100, 100, 100).
    Fig4b,
    /// RMSE against a distance-independent noise level, equal ranges.
    Fig5,
    /// RM-USC against RS-USC as the AUV drifts from the ring centre.
    Fig6,
    /// RMSE against SSP steepness at 1 ms noise.
    Steepness,
}

impl Figure {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name.to_ascii_lowercase().trim_start_matches("fig") {
            "3" => Figure::Fig3,
            "4a" => Figure::Fig4a,
            "4b" => Figure::Fig4b,
            "5" => Figure::Fig5,
            "6" => Figure::Fig6,
            "steepness" => Figure::Steepness,
            _ => return None,
        })
    }

    pub fn sweep(&self) -> SweepSpec {
        let three = vec![
            Scheme::new(Deployment::usc()),
            Scheme::new(Deployment::cube()),
            Scheme::new(Deployment::random(RandomPlacement::Around)),
        ];
        let base = Scenario::default();
        match self {
            Figure::Fig3 => SweepSpec {
                axis: SweepAxis::ScaleK,
                values: (0..=100).map(|i| 0.5 + i as f64 / 100.0).collect(),
                base,
                schemes: vec![Scheme::new(Deployment::usc())],
                anchor_counts: (4..=8).collect(),
            },
            Figure::Fig4a | Figure::Fig4b => SweepSpec {
                axis: SweepAxis::AnchorCount,
                values: (4..=8).map(f64::from).collect(),
                base: Scenario {
                    auv_truth: if *self == Figure::Fig4a {
                        Position::new(50.0, 50.0, 50.0)
                    } else {
                        Position::new(100.0, 100.0, 100.0)
                    },
                    ..base
                },
                schemes: three,
                anchor_counts: Vec::new(),
            },
            Figure::Fig5 => SweepSpec {
                axis: SweepAxis::SigmaMs,
                values: vec![0.1, 0.5, 1.0, 5.0, 10.0],
                base: Scenario { noise: NoiseModel::constant_ms(1.0), ..base },
                schemes: vec![
                    Scheme::new(Deployment::usc()),
                    Scheme::new(Deployment::cube()),
                    Scheme::new(Deployment::random(RandomPlacement::EqualRange)),
                ],
                anchor_counts: Vec::new(),
            },
            Figure::Fig6 => SweepSpec {
                axis: SweepAxis::DeltaMeters,
                values: vec![0.0, 50.0, 100.0, 200.0, 300.0, 500.0, 700.0, 900.0],
                base: Scenario { noise: NoiseModel::constant_ms(1.0), ..base },
                schemes: vec![
                    Scheme { deployment: Deployment::usc(), movement: Movement::RmUsc { delta: 0.0 } },
                    Scheme { deployment: Deployment::usc(), movement: Movement::RsUsc { delta: 0.0 } },
                ],
                anchor_counts: Vec::new(),
            },
            Figure::Steepness => SweepSpec {
                axis: SweepAxis::SteepnessA,
                values: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5],
                base: Scenario { noise: NoiseModel::constant_ms(1.0), ..base },
                schemes: three,
                anchor_counts: Vec::new(),
            },
        }
    }
}
