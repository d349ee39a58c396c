//! Anchor layouts: the uniform sea-surface circumference (USC) ring, its
//! univariate `tr(CRLB)(k)` objective and radius optimizer, and the cube and
//! random layouts used as comparison baselines.

use crate::fisher::{self, FisherError, NoiseModel, MIN_ANCHORS};
use crate::geometry::{Position, SoundSpeedProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Redraw budget for random layouts that come out singular.
pub const MAX_RANDOM_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeploymentError {
    #[error("at least {MIN_ANCHORS} anchors are needed, got {0}")]
    TooFewAnchors(usize),
    #[error("cube layouts support 4 to 8 anchors, got {0}")]
    UnsupportedCount(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("gradient step could not keep k positive (k = {k})")]
    NonPositiveK { k: f64 },
    #[error("random layout still degenerate after {0} redraws")]
    DegenerateAfterRetries(usize),
    #[error(transparent)]
    Fisher(#[from] FisherError),
}

fn invalid(msg: impl Into<String>) -> DeploymentError {
    DeploymentError::InvalidParameter(msg.into())
}

/// `N` surface anchors on a circle of radius `k * z` centred above the AUV.
/// Anchor `i` (1-based) sits at angle `2 pi i / N`.
pub fn usc_positions(auv: &Position, n: usize, k: f64) -> Result<Vec<Position>, DeploymentError> {
    if n < MIN_ANCHORS {
        return Err(DeploymentError::TooFewAnchors(n));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(invalid(format!("scale factor k must be positive, got {k}")));
    }
    if !(auv.z > 0.0) {
        return Err(invalid(format!("AUV depth must be positive, got {}", auv.z)));
    }
    let radius = k * auv.z;
    Ok((1..=n)
        .map(|i| {
            let angle = 2.0 * PI * i as f64 / n as f64;
            Position::new(auv.x + radius * angle.cos(), auv.y + radius * angle.sin(), 0.0)
        })
        .collect())
}

/// A USC layout with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UscLayout {
    pub scale_k: f64,
    pub auv: Position,
    pub anchors: Vec<Position>,
}

impl UscLayout {
    pub fn new(auv: Position, n: usize, k: f64) -> Result<Self, DeploymentError> {
        Ok(Self { scale_k: k, auv, anchors: usc_positions(&auv, n, k)? })
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    pub fn radius(&self) -> f64 {
        self.scale_k * self.auv.z
    }
}

/// `tr(CRLB)` of a USC ring with equal variances, as a function of `k`.
///
/// With `D = 2b/a + z` the two terms are the horizontal contribution
/// `a^2 sigma^2 (1 + k^2) (k^2 z^2 + D^2) / (N k^2)` and the vertical one,
/// the inverse of `N / ((1 + k^2)(D^2 + k^2 z^2)) ((k^2 z - D) / (2b/a + 2z))^2 / sigma^2`
/// scaled by `a^2 / 4`.
pub fn usc_trace_crlb_closed_form(
    k: f64,
    z: f64,
    n: usize,
    ssp: &SoundSpeedProfile,
    sigma2: f64,
) -> Result<f64, DeploymentError> {
    if n < MIN_ANCHORS {
        return Err(DeploymentError::TooFewAnchors(n));
    }
    if !(k > 0.0 && z > 0.0 && sigma2 > 0.0) {
        return Err(invalid(format!("need k > 0, z > 0, sigma^2 > 0 (got {k}, {z}, {sigma2})")));
    }
    let a = ssp.steepness();
    let two_b_over_a = ssp.curvature_length();
    let big_d = two_b_over_a + z;
    let nf = n as f64;
    let k2 = k * k;
    let horizontal = a * a * sigma2 * (1.0 + k2) * (k2 * z * z + big_d * big_d) / (nf * k2);
    let ratio = (k2 * z - big_d) / (two_b_over_a + 2.0 * z);
    let vertical_information = nf / ((1.0 + k2) * (big_d * big_d + k2 * z * z)) * ratio * ratio / sigma2;
    Ok(horizontal + a * a / 4.0 / vertical_information)
}

/// The USC radius problem for one AUV depth: everything except `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UscObjective {
    pub depth: f64,
    pub anchor_count: usize,
    pub ssp: SoundSpeedProfile,
    pub noise: NoiseModel,
}

impl UscObjective {
    pub fn new(depth: f64, anchor_count: usize, ssp: SoundSpeedProfile, noise: NoiseModel) -> Result<Self, DeploymentError> {
        if anchor_count < MIN_ANCHORS {
            return Err(DeploymentError::TooFewAnchors(anchor_count));
        }
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(invalid(format!("AUV depth must be positive, got {depth}")));
        }
        noise.validate()?;
        Ok(Self { depth, anchor_count, ssp, noise })
    }

    /// Variance shared by every ring anchor at scale `k`. Distance-dependent
    /// noise is evaluated at the anchor-AUV distance of the ring.
    pub fn variance(&self, k: f64) -> Result<f64, DeploymentError> {
        let auv = Position::new(0.0, 0.0, self.depth);
        let anchor = Position::new(k * self.depth, 0.0, 0.0);
        Ok(self.noise.variance_between(&auv, &anchor, &self.ssp)?)
    }

    pub fn evaluate(&self, k: f64) -> Result<f64, DeploymentError> {
        usc_trace_crlb_closed_form(k, self.depth, self.anchor_count, &self.ssp, self.variance(k)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub initial_k: f64,
    /// Gradient step `t`, in (0, 1). Halved whenever a step fails to descend.
    pub step_size: f64,
    /// Stop once `|f'(k)| / f(k0)` falls to this.
    pub precision: f64,
    pub max_iterations: usize,
    /// Central-difference step, relative to `k`.
    pub fd_step: f64,
    /// Iterates are kept inside this interval.
    pub bracket: (f64, f64),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_k: 1.0,
            step_size: 0.1,
            precision: 1e-6,
            max_iterations: 10_000,
            fd_step: 1e-5,
            bracket: (0.1, 3.0),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), DeploymentError> {
        let (lo, hi) = self.bracket;
        if !(self.initial_k > 0.0 && self.precision > 0.0 && self.fd_step > 0.0 && self.max_iterations > 0) {
            return Err(invalid("optimizer parameters must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size < 1.0) {
            return Err(invalid(format!("step size must lie in (0, 1), got {}", self.step_size)));
        }
        if !(lo > 0.0 && lo < hi && (lo..=hi).contains(&self.initial_k)) {
            return Err(invalid(format!("bracket ({lo}, {hi}) must be positive and contain initial k {}", self.initial_k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOutcome {
    pub k_star: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient descent on `f(k) = tr(CRLB)(k)`.
///
/// The objective is divided by `f(k0)` so that `step_size` and `precision`
/// are dimensionless. The derivative is a central difference. A step that
/// would raise the objective, leave the bracket, or make `k` non-positive is
/// retried with half the step size; the halved size is kept afterwards.
pub fn optimize_k(objective: &UscObjective, config: &OptimizerConfig) -> Result<OptimizeOutcome, DeploymentError> {
    config.validate()?;
    let (lo, hi) = config.bracket;
    let f0 = objective.evaluate(config.initial_k)?;
    let f = |k: f64| objective.evaluate(k).map(|v| v / f0);
    let gradient = |k: f64| -> Result<f64, DeploymentError> {
        let h = config.fd_step * k;
        Ok((f(k + h)? - f(k - h)?) / (2.0 * h))
    };

    let mut k = config.initial_k;
    let mut value = 1.0;
    let mut step = config.step_size;
    let mut grad = gradient(k)?;
    let mut iterations = 0;
    while iterations < config.max_iterations && grad.abs() > config.precision {
        iterations += 1;
        let mut halvings = 0;
        loop {
            let candidate = k - step * grad;
            if candidate > 0.0 && (lo..=hi).contains(&candidate) {
                let candidate_value = f(candidate)?;
                if candidate_value <= value {
                    k = candidate;
                    value = candidate_value;
                    break;
                }
            }
            step *= 0.5;
            halvings += 1;
            if halvings > 200 {
                if candidate <= 0.0 {
                    return Err(DeploymentError::NonPositiveK { k: candidate });
                }
                // No representable descent step left: k is a numerical minimum.
                return Ok(OptimizeOutcome { k_star: k, objective: value * f0, iterations, converged: true });
            }
        }
        grad = gradient(k)?;
    }
    Ok(OptimizeOutcome {
        k_star: k,
        objective: value * f0,
        iterations,
        converged: grad.abs() <= config.precision,
    })
}

/// Minimiser of the objective over `steps + 1` evenly spaced points of `[k_min, k_max]`.
pub fn grid_search_k(objective: &UscObjective, k_min: f64, k_max: f64, steps: usize) -> Result<f64, DeploymentError> {
    if !(k_min > 0.0 && k_min < k_max) {
        return Err(invalid(format!("grid needs 0 < k_min < k_max, got [{k_min}, {k_max}]")));
    }
    if steps < 100 {
        return Err(invalid(format!("grid needs at least 100 steps, got {steps}")));
    }
    let mut best = (f64::INFINITY, k_min);
    for i in 0..=steps {
        let k = k_min + (k_max - k_min) * i as f64 / steps as f64;
        let v = objective.evaluate(k)?;
        if v < best.0 {
            best = (v, k);
        }
    }
    Ok(best.1)
}

/// Horizontal-sign pattern and top/bottom flag of the cube vertices, in the
/// order anchors are taken. The first four alternate top and bottom and form
/// a regular tetrahedron; the last four complete the cube.
const CUBE_VERTEX_ORDER: [(f64, f64, bool); 8] = [
    (-1.0, -1.0, true),
    (1.0, -1.0, false),
    (1.0, 1.0, true),
    (-1.0, 1.0, false),
    (1.0, -1.0, true),
    (-1.0, -1.0, false),
    (-1.0, 1.0, true),
    (1.0, 1.0, false),
];

/// Cube vertices centred horizontally on `center`, top face at the surface
/// and bottom face at depth `side`. `center.z` is ignored.
pub fn cube_positions(center: &Position, side: f64, n: usize) -> Result<Vec<Position>, DeploymentError> {
    if n < MIN_ANCHORS {
        return Err(DeploymentError::TooFewAnchors(n));
    }
    if n > CUBE_VERTEX_ORDER.len() {
        return Err(DeploymentError::UnsupportedCount(n));
    }
    if !(side > 0.0 && side.is_finite()) {
        return Err(invalid(format!("cube side must be positive, got {side}")));
    }
    let half = side / 2.0;
    Ok(CUBE_VERTEX_ORDER[..n]
        .iter()
        .map(|&(sx, sy, top)| Position::new(center.x + sx * half, center.y + sy * half, if top { 0.0 } else { side }))
        .collect())
}

/// Region random anchors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomRegion {
    /// Axis-aligned box; depths must stay within `[0, max_depth]`.
    Box { min: Position, max: Position },
    /// Uniform directions on a sphere of `radius` about `center`, restricted
    /// to non-negative depth, so every anchor sits at the same distance.
    Shell { center: Position, radius: f64 },
}

impl RandomRegion {
    /// Default box for an AUV at depth `z`: horizontal half-width `2 z`,
    /// depth range `[0, 2 z]`.
    pub fn around(auv: &Position) -> Self {
        let w = 2.0 * auv.z;
        RandomRegion::Box {
            min: Position::new(auv.x - w, auv.y - w, 0.0),
            max: Position::new(auv.x + w, auv.y + w, 2.0 * auv.z),
        }
    }

    pub fn validate(&self) -> Result<(), DeploymentError> {
        match self {
            RandomRegion::Box { min, max } => {
                if !(min.x < max.x && min.y < max.y && min.z < max.z && min.z >= 0.0) {
                    return Err(invalid("random box must be nondegenerate with depths >= 0"));
                }
            }
            RandomRegion::Shell { center, radius } => {
                if !(*radius > 0.0 && center.z >= 0.0) {
                    return Err(invalid("random shell needs positive radius and non-negative centre depth"));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Position {
        match *self {
            RandomRegion::Box { min, max } => Position::new(
                rng.random_range(min.x..max.x),
                rng.random_range(min.y..max.y),
                rng.random_range(min.z..max.z),
            ),
            RandomRegion::Shell { center, radius } => loop {
                let u: f64 = rng.random_range(-1.0..1.0);
                let azimuth: f64 = rng.random_range(0.0..2.0 * PI);
                let s = (1.0 - u * u).sqrt();
                let p = center.offset(radius * s * azimuth.cos(), radius * s * azimuth.sin(), radius * u);
                if p.z >= 0.0 {
                    break p;
                }
            },
        }
    }
}

/// `n` anchors drawn uniformly from `region`. Layouts rejected by `accept`
/// (typically a singular-FIM check) are redrawn from the same generator.
pub fn random_positions(
    region: &RandomRegion,
    n: usize,
    seed: u64,
    accept: impl Fn(&[Position]) -> bool,
) -> Result<Vec<Position>, DeploymentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_positions_with(region, n, &mut rng, accept)
}

pub fn random_positions_with<R: Rng>(
    region: &RandomRegion,
    n: usize,
    rng: &mut R,
    accept: impl Fn(&[Position]) -> bool,
) -> Result<Vec<Position>, DeploymentError> {
    if n < MIN_ANCHORS {
        return Err(DeploymentError::TooFewAnchors(n));
    }
    region.validate()?;
    for _ in 0..MAX_RANDOM_REDRAWS {
        let layout: Vec<Position> = (0..n).map(|_| region.sample(rng)).collect();
        let distinct = layout.iter().enumerate().all(|(i, a)| layout[..i].iter().all(|b| a != b));
        if distinct && accept(&layout) {
            return Ok(layout);
        }
    }
    Err(DeploymentError::DegenerateAfterRetries(MAX_RANDOM_REDRAWS))
}

/// Acceptance test for random layouts: the FIM at `auv` must be invertible.
pub fn fim_is_regular(auv: Position, ssp: SoundSpeedProfile, noise: NoiseModel) -> impl Fn(&[Position]) -> bool {
    move |anchors| fisher::fim(&auv, anchors, &ssp, &noise).is_ok()
}
