//! Simulated travel-time and depth measurements, and a Gauss-Newton position
//! fix that uses the bent-ray travel-time model.
//!
//! The estimator minimizes
//! `sum_i (rtt_i - t_i(q))^2 / sigma_i^2 + w_d (depth_meas - z)^2`
//! which for a static AUV is the same update an iterated EKF would make.

use crate::fisher::{self, FisherError, JacobianRow, NoiseModel, MIN_ANCHORS};
use crate::geometry::{self, GeometryError, Position, SoundSpeedProfile};
use crate::linalg::{self, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Depth-sensor variance (m^2) used when none is given.
pub const DEFAULT_DEPTH_VARIANCE: f64 = 1.0;

/// A step longer than this multiple of the anchor span marks the
/// trial as diverged.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

const MAX_STEP_HALVINGS: usize = 40;

/// Normal matrices with a larger eigenvalue spread are treated as singular.
const MAX_NORMAL_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fisher(#[from] FisherError),
    #[error("at least {MIN_ANCHORS} anchors are needed, got {0}")]
    TooFewAnchors(usize),
    #[error("sample has {rtt} travel times for {anchors} anchors")]
    LengthMismatch { rtt: usize, anchors: usize },
    #[error("measurement is not finite")]
    NonFiniteMeasurement,
    #[error("normal matrix is numerically singular")]
    SingularNormalMatrix,
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("initial guess perturbs the truth but no truth was supplied")]
    MissingTruth,
    #[error("no converged trials ({excluded} excluded)")]
    NoConvergedTrials { excluded: usize },
}

/// One round of measurements: a travel time per anchor (seconds) and a depth
/// reading (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub rtt: Vec<f64>,
    pub depth_meas: f64,
}

impl MeasurementSample {
    /// Exact travel times and depth, no noise.
    pub fn noiseless(q: &Position, anchors: &[Position], ssp: &SoundSpeedProfile) -> Result<Self, EstimationError> {
        let rtt = anchors.iter().map(|p| geometry::ray_travel_time(q, p, ssp)).collect::<Result<_, _>>()?;
        Ok(Self { rtt, depth_meas: q.z })
    }

    fn check(&self, anchors: &[Position]) -> Result<(), EstimationError> {
        if anchors.len() < MIN_ANCHORS {
            return Err(EstimationError::TooFewAnchors(anchors.len()));
        }
        if self.rtt.len() != anchors.len() {
            return Err(EstimationError::LengthMismatch { rtt: self.rtt.len(), anchors: anchors.len() });
        }
        if !self.depth_meas.is_finite() || self.rtt.iter().any(|t| !t.is_finite()) {
            return Err(EstimationError::NonFiniteMeasurement);
        }
        Ok(())
    }
}

/// Noisy sample with unit depth-noise variance from a fresh seeded generator.
pub fn simulate_measurements(
    q: &Position,
    anchors: &[Position],
    ssp: &SoundSpeedProfile,
    noise: &NoiseModel,
    seed: u64,
) -> Result<MeasurementSample, EstimationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_measurements_with(q, anchors, ssp, noise, DEFAULT_DEPTH_VARIANCE, &mut rng)
}

/// Draws `rtt_i = t_i + xi_i`, `xi_i ~ N(0, sigma_i^2)`, then
/// `depth_meas = z + eta`, `eta ~ N(0, depth_variance)`.
pub fn simulate_measurements_with<R: Rng>(
    q: &Position,
    anchors: &[Position],
    ssp: &SoundSpeedProfile,
    noise: &NoiseModel,
    depth_variance: f64,
    rng: &mut R,
) -> Result<MeasurementSample, EstimationError> {
    noise.validate()?;
    if !(depth_variance >= 0.0 && depth_variance.is_finite()) {
        return Err(EstimationError::InvalidConfig(format!("depth variance must be >= 0, got {depth_variance}")));
    }
    let mut rtt = Vec::with_capacity(anchors.len());
    for p in anchors {
        let t = geometry::ray_travel_time(q, p, ssp)?;
        let sigma = noise.variance_between(q, p, ssp)?.sqrt();
        let xi: f64 = rng.sample(StandardNormal);
        rtt.push(t + sigma * xi);
    }
    let eta: f64 = rng.sample(StandardNormal);
    Ok(MeasurementSample { rtt, depth_meas: q.z + depth_variance.sqrt() * eta })
}

/// Where the iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialGuess {
    /// The truth moved by exactly `radius` meters in a seeded random
    /// direction. Only usable when the caller knows the truth.
    TruthPerturbed { radius: f64, seed: u64 },
    FixedPoint { position: Position },
    /// Anchor centroid horizontally, measured depth vertically.
    #[default]
    DepthAnchored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub max_iterations: usize,
    /// Meters.
    pub position_tolerance: f64,
    pub initial_guess: InitialGuess,
    /// Inverse depth-measurement variance, 1/m^2. Zero disables the depth row.
    pub depth_weight: f64,
    /// Number of fixed-weight solves; weights are refreshed between them.
    pub reweight_passes: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            position_tolerance: 1e-4,
            initial_guess: InitialGuess::DepthAnchored,
            depth_weight: 1.0 / DEFAULT_DEPTH_VARIANCE,
            reweight_passes: 3,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimationError> {
        if self.max_iterations < 1 {
            return Err(EstimationError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if self.reweight_passes < 1 {
            return Err(EstimationError::InvalidConfig("reweight_passes must be >= 1".into()));
        }
        if !(self.position_tolerance > 0.0 && self.position_tolerance.is_finite()) {
            return Err(EstimationError::InvalidConfig(format!(
                "position_tolerance must be positive, got {}",
                self.position_tolerance
            )));
        }
        if !(self.depth_weight >= 0.0 && self.depth_weight.is_finite()) {
            return Err(EstimationError::InvalidConfig(format!(
                "depth_weight must be >= 0, got {}",
                self.depth_weight
            )));
        }
        if let InitialGuess::TruthPerturbed { radius, .. } = self.initial_guess {
            if !(radius >= 0.0 && radius.is_finite()) {
                return Err(EstimationError::InvalidConfig(format!("perturbation radius must be >= 0, got {radius}")));
            }
        }
        Ok(())
    }

    /// Resolves the starting point. `truth` is only consulted by
    /// [`InitialGuess::TruthPerturbed`].
    pub fn initial_point(
        &self,
        sample: &MeasurementSample,
        anchors: &[Position],
        truth: Option<&Position>,
    ) -> Result<Position, EstimationError> {
        Ok(match self.initial_guess {
            InitialGuess::TruthPerturbed { radius, seed } => {
                let truth = truth.ok_or(EstimationError::MissingTruth)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let [dx, dy, dz] = random_direction(&mut rng);
                truth.offset(radius * dx, radius * dy, radius * dz)
            }
            InitialGuess::FixedPoint { position } => position,
            InitialGuess::DepthAnchored => {
                let n = anchors.len() as f64;
                let cx = anchors.iter().map(|p| p.x).sum::<f64>() / n;
                let cy = anchors.iter().map(|p| p.y).sum::<f64>() / n;
                Position::new(cx, cy, sample.depth_meas)
            }
        })
    }
}

/// Uniform direction on the unit sphere.
pub fn random_direction<R: Rng>(rng: &mut R) -> [f64; 3] {
    let u: f64 = rng.random_range(-1.0..=1.0);
    let azimuth: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - u * u).sqrt();
    [s * azimuth.cos(), s * azimuth.sin(), u]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateResult {
    pub q_hat: Position,
    pub iterations: usize,
    pub converged: bool,
    /// Unweighted travel-time residual norm at `q_hat`, seconds.
    pub final_residual_norm: f64,
    pub status: EstimateStatus,
}

/// Position fix starting from the configured initial guess.
pub fn estimate_position(
    sample: &MeasurementSample,
    anchors: &[Position],
    ssp: &SoundSpeedProfile,
    noise: &NoiseModel,
    config: &EstimatorConfig,
) -> Result<EstimateResult, EstimationError> {
    config.validate()?;
    sample.check(anchors)?;
    let start = config.initial_point(sample, anchors, None)?;
    estimate_position_from(sample, anchors, ssp, noise, config, start)
}

/// Position fix from an explicit starting point.
///
/// Steps are Newton steps on the weighted cost where its Hessian is positive
/// definite and Gauss-Newton steps elsewhere. The travel-time variances are
/// frozen for the duration of a pass, which makes each pass an ordinary
/// weighted least-squares problem; step halving then guarantees the cost
/// never increases. Pass one weights by the variances
/// at `start`, later passes by those at the previous pass's solution.
/// Re-evaluating the weights on every iteration instead can cycle forever at
/// high noise.
pub fn estimate_position_from(
    sample: &MeasurementSample,
    anchors: &[Position],
    ssp: &SoundSpeedProfile,
    noise: &NoiseModel,
    config: &EstimatorConfig,
    start: Position,
) -> Result<EstimateResult, EstimationError> {
    config.validate()?;
    noise.validate()?;
    sample.check(anchors)?;
    if !start.is_finite() {
        return Err(EstimationError::NonFiniteMeasurement);
    }
    let divergence_limit = DIVERGENCE_FACTOR * anchor_span(anchors);
    let mut q = start;
    let mut used = 0;
    let mut last = None;
    for _ in 0..config.reweight_passes {
        let pass_start = q;
        let variances = fisher::anchor_variances(&q, anchors, ssp, noise)?;
        let mut state = Linearization::at(&q, sample, anchors, ssp, &variances, config.depth_weight)?;
        let mut status = EstimateStatus::MaxIterations;
        while used < config.max_iterations {
            used += 1;
            let (gauss_newton, newton) = state.steps(&q, anchors, ssp)?;
            let step = match newton {
                Some(n) if linalg::norm(&n) <= divergence_limit => n,
                _ => gauss_newton,
            };
            let step_norm = linalg::norm(&step);
            if !step_norm.is_finite() || step_norm > divergence_limit {
                return Ok(state.result(q, used, EstimateStatus::Diverged));
            }

            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_STEP_HALVINGS {
                let candidate = q.offset(scale * step[0], scale * step[1], scale * step[2]);
                if let Ok(cost) = state.cost_at(&candidate, sample, anchors, ssp, config.depth_weight) {
                    if cost <= state.cost {
                        accepted = Some(candidate);
                        break;
                    }
                }
                scale *= 0.5;
            }
            // No descent along the step direction: q is a stationary
            // point to working precision.
            let Some(next) = accepted else {
                status = EstimateStatus::Converged;
                break;
            };
            q = next;
            state = Linearization::at(&q, sample, anchors, ssp, &variances, config.depth_weight)?;
            if scale * step_norm <= config.position_tolerance {
                status = EstimateStatus::Converged;
                break;
            }
        }
        if status != EstimateStatus::Converged {
            return Ok(state.result(q, used, status));
        }
        last = Some(state);
        // Refreshing the weights at an unchanged point would change nothing.
        if q.distance(&pass_start) <= config.position_tolerance {
            break;
        }
    }
    let state = last.expect("at least one pass");
    Ok(state.result(q, used, EstimateStatus::Converged))
}

fn anchor_span(anchors: &[Position]) -> f64 {
    let mut span = 0.0f64;
    for (i, a) in anchors.iter().enumerate() {
        for b in &anchors[..i] {
            span = span.max(a.distance(b));
        }
    }
    span
}

/// Residuals, Jacobian and weights at one iterate.
struct Linearization {
    rows: Vec<JacobianRow>,
    residuals: Vec<f64>,
    variances: Vec<f64>,
    depth_residual: f64,
    depth_weight: f64,
    cost: f64,
}

impl Linearization {
    fn at(
        q: &Position,
        sample: &MeasurementSample,
        anchors: &[Position],
        ssp: &SoundSpeedProfile,
        variances: &[f64],
        depth_weight: f64,
    ) -> Result<Self, EstimationError> {
        let mut rows = Vec::with_capacity(anchors.len());
        let mut residuals = Vec::with_capacity(anchors.len());
        for (p, measured) in anchors.iter().zip(&sample.rtt) {
            rows.push(fisher::jacobian_row(q, p, ssp)?);
            residuals.push(measured - geometry::ray_travel_time(q, p, ssp)?);
        }
        let depth_residual = sample.depth_meas - q.z;
        let cost = weighted_cost(&residuals, variances, depth_residual, depth_weight);
        Ok(Self { rows, residuals, variances: variances.to_vec(), depth_residual, depth_weight, cost })
    }

    /// The Gauss-Newton step, and the full Newton step when the cost's
    /// Hessian is positive definite. Both solve for the same stationary point;
    /// Newton gets there in far fewer iterations when residuals are large.
    fn steps(
        &self,
        q: &Position,
        anchors: &[Position],
        ssp: &SoundSpeedProfile,
    ) -> Result<([f64; 3], Option<[f64; 3]>), EstimationError> {
        let mut normal: Matrix3 = fisher::weighted_normal_matrix(&self.rows, &self.variances);
        normal[2][2] += self.depth_weight;
        let mut rhs = [0.0; 3];
        for ((row, r), var) in self.rows.iter().zip(&self.residuals).zip(&self.variances) {
            for j in 0..3 {
                rhs[j] += row[j] * r / var;
            }
        }
        rhs[2] += self.depth_weight * self.depth_residual;
        if !(linalg::symmetric_condition_number(&normal) <= MAX_NORMAL_CONDITION) {
            return Err(EstimationError::SingularNormalMatrix);
        }
        let inv = linalg::inverse(&normal).ok_or(EstimationError::SingularNormalMatrix)?;
        let gauss_newton = linalg::mat_vec(&inv, &rhs);
        let newton = residual_curvature(q, anchors, ssp, &self.residuals, &self.variances).ok().and_then(|curvature| {
            let mut hessian = normal;
            for j in 0..3 {
                for k in 0..3 {
                    hessian[j][k] -= curvature[j][k];
                }
            }
            if linalg::symmetric_condition_number(&hessian) <= MAX_NORMAL_CONDITION {
                linalg::inverse(&hessian).map(|inv| linalg::mat_vec(&inv, &rhs))
            } else {
                None
            }
        });
        Ok((gauss_newton, newton))
    }

    /// Cost at `candidate` with this iterate's weights held fixed.
    fn cost_at(
        &self,
        candidate: &Position,
        sample: &MeasurementSample,
        anchors: &[Position],
        ssp: &SoundSpeedProfile,
        depth_weight: f64,
    ) -> Result<f64, GeometryError> {
        let residuals = anchors
            .iter()
            .zip(&sample.rtt)
            .map(|(p, measured)| geometry::ray_travel_time(candidate, p, ssp).map(|t| measured - t))
            .collect::<Result<Vec<_>, _>>()?;
        let cost = weighted_cost(&residuals, &self.variances, sample.depth_meas - candidate.z, depth_weight);
        Ok(if cost.is_finite() { cost } else { f64::INFINITY })
    }

    fn result(&self, q: Position, iterations: usize, status: EstimateStatus) -> EstimateResult {
        EstimateResult {
            q_hat: q,
            iterations,
            converged: status == EstimateStatus::Converged,
            final_residual_norm: self.residuals.iter().map(|r| r * r).sum::<f64>().sqrt(),
            status,
        }
    }
}

/// `sum_i r_i / sigma_i^2 * Hess t_i`, the second-order term Gauss-Newton
/// drops, with each travel-time Hessian taken by central differences of the
/// closed-form gradient.
fn residual_curvature(
    q: &Position,
    anchors: &[Position],
    ssp: &SoundSpeedProfile,
    residuals: &[f64],
    variances: &[f64],
) -> Result<Matrix3, FisherError> {
    let mut m = linalg::zeros();
    for ((p, r), var) in anchors.iter().zip(residuals).zip(variances) {
        let h = 1e-5 * q.distance(p);
        let w = r / var;
        for (j, unit) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().enumerate() {
            let plus = fisher::jacobian_row(&q.offset(h * unit[0], h * unit[1], h * unit[2]), p, ssp)?;
            let minus = fisher::jacobian_row(&q.offset(-h * unit[0], -h * unit[1], -h * unit[2]), p, ssp)?;
            for k in 0..3 {
                m[j][k] += w * (plus[k] - minus[k]) / (2.0 * h);
            }
        }
    }
    for j in 0..3 {
        for k in 0..j {
            let avg = 0.5 * (m[j][k] + m[k][j]);
            m[j][k] = avg;
            m[k][j] = avg;
        }
    }
    Ok(m)
}

fn weighted_cost(residuals: &[f64], variances: &[f64], depth_residual: f64, depth_weight: f64) -> f64 {
    let tof: f64 = residuals.iter().zip(variances).map(|(r, v)| r * r / v).sum();
    tof + depth_weight * depth_residual * depth_residual
}

/// Error statistics over a batch of estimates of the same truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseSummary {
    pub rmse: f64,
    /// Mean squared error, i.e. the trace of the sample error second moment.
    pub mse: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Root mean squared position error over converged estimates.
pub fn rmse(estimates: &[EstimateResult], truth: &Position) -> Result<RmseSummary, EstimationError> {
    let errors: Vec<f64> = estimates.iter().filter(|e| e.converged).map(|e| squared_error(&e.q_hat, truth)).collect();
    let excluded = estimates.len() - errors.len();
    summarize_squared_errors(&errors, excluded)
}

pub fn squared_error(estimate: &Position, truth: &Position) -> f64 {
    let d = estimate.distance(truth);
    d * d
}

/// Same as [`rmse`] for precomputed squared errors (used when every trial has
/// its own truth).
pub fn summarize_squared_errors(squared: &[f64], excluded: usize) -> Result<RmseSummary, EstimationError> {
    if squared.is_empty() {
        return Err(EstimationError::NoConvergedTrials { excluded });
    }
    let mse = squared.iter().sum::<f64>() / squared.len() as f64;
    Ok(RmseSummary { rmse: mse.sqrt(), mse, used: squared.len(), excluded })
}
