//! Measurement noise, the travel-time Jacobian, and the Fisher information /
//! Cramer-Rao bound for an anchor set observing one AUV position.

use crate::geometry::{self, GeometryError, Position, SoundSpeedProfile};
use crate::linalg::{self, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of anchors for a 3-D fix.
pub const MIN_ANCHORS: usize = 4;

/// `|cos^2 theta - sin^2 alpha|` below this makes the chain-rule terms blow up.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;

/// FIMs with a larger eigenvalue spread are treated as singular.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FisherError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("at least {MIN_ANCHORS} anchors are needed, got {0}")]
    TooFewAnchors(usize),
    #[error("anchor {index}: {source}")]
    Anchor {
        index: usize,
        #[source]
        source: Box<FisherError>,
    },
    #[error("Fisher information matrix is singular (condition number {condition:e})")]
    SingularFim { condition: f64 },
    #[error("Fisher information has a zero diagonal entry")]
    ZeroDiagonal,
    #[error("noise distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

/// Which length drives the distance-dependent variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMeasure {
    #[default]
    SlantRange,
    RayArc,
}

/// Spreading-plus-absorption path loss converted to a travel-time variance.
///
/// `sigma^2 [s^2] = 10^((K_E + A(l)) / 10)` with
/// `A(l) = 10 beta log10(l / l0) + (l - l0) L / 1000`, all terms in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossNoise {
    pub ke_db: f64,
    pub beta: f64,
    /// Reference distance, meters.
    pub l0: f64,
    pub absorption_db_per_km: f64,
    /// Carrier frequency. Informational; absorption is supplied directly.
    pub frequency_hz: Option<f64>,
    pub distance: RangeMeasure,
}

impl Default for PathLossNoise {
    fn default() -> Self {
        Self {
            ke_db: -10.0,
            beta: 2.0,
            l0: 1000.0,
            absorption_db_per_km: 1.0,
            frequency_hz: None,
            distance: RangeMeasure::SlantRange,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Same standard deviation (seconds) on every travel time.
    ConstantVariance { sigma: f64 },
    DistanceDependent(PathLossNoise),
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::DistanceDependent(PathLossNoise::default())
    }
}

impl NoiseModel {
    pub fn constant_ms(sigma_ms: f64) -> Self {
        NoiseModel::ConstantVariance { sigma: sigma_ms * 1e-3 }
    }

    pub fn validate(&self) -> Result<(), FisherError> {
        match *self {
            NoiseModel::ConstantVariance { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(FisherError::InvalidNoise(format!("sigma must be positive, got {sigma}")))
            }
            NoiseModel::DistanceDependent(p) if !(1.0..=2.0).contains(&p.beta) => {
                Err(FisherError::InvalidNoise(format!("beta must lie in [1, 2], got {}", p.beta)))
            }
            NoiseModel::DistanceDependent(p) if !(p.l0 > 0.0 && p.l0.is_finite()) => {
                Err(FisherError::InvalidNoise(format!("l0 must be positive, got {}", p.l0)))
            }
            NoiseModel::DistanceDependent(p) if !(p.ke_db.is_finite() && p.absorption_db_per_km.is_finite()) => {
                Err(FisherError::InvalidNoise("K_E and absorption must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_distance_dependent(&self) -> bool {
        matches!(self, NoiseModel::DistanceDependent(_))
    }

    /// Variance for the pair `(q, p)`, using the configured distance measure.
    pub fn variance_between(&self, q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> Result<f64, FisherError> {
        let distance = match self {
            NoiseModel::ConstantVariance { .. } => return noise_variance(self, 1.0),
            NoiseModel::DistanceDependent(PathLossNoise { distance: RangeMeasure::SlantRange, .. }) => q.distance(p),
            NoiseModel::DistanceDependent(PathLossNoise { distance: RangeMeasure::RayArc, .. }) => {
                geometry::ray_arc_length(q, p, ssp)
            }
        };
        noise_variance(self, distance)
    }
}

/// Travel-time variance in s^2 at propagation distance `distance_l` (meters).
pub fn noise_variance(model: &NoiseModel, distance_l: f64) -> Result<f64, FisherError> {
    if !(distance_l > 0.0) {
        return Err(FisherError::NonPositiveDistance(distance_l));
    }
    Ok(match model {
        NoiseModel::ConstantVariance { sigma } => sigma * sigma,
        NoiseModel::DistanceDependent(p) => {
            let loss_db = 10.0 * p.beta * (distance_l / p.l0).log10() + (distance_l - p.l0) * p.absorption_db_per_km / 1000.0;
            10f64.powf((p.ke_db + loss_db) / 10.0)
        }
    })
}

/// One row of the Jacobian: partial derivatives of the travel time with
/// respect to the AUV's `(x, y, z)`, in s/m.
pub type JacobianRow = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: Vec<JacobianRow>,
}

fn check_row_geometry(q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> Result<geometry::RayGeometry, FisherError> {
    if geometry::horizontal_range(q, p) == 0.0 {
        return Err(FisherError::DegenerateGeometry("zero horizontal range"));
    }
    let g = geometry::ray_geometry(q, p, ssp)?;
    let denominator = g.elevation.cos().powi(2) - g.deviation.sin().powi(2);
    if denominator.abs() < DEGENERACY_TOLERANCE {
        return Err(FisherError::DegenerateGeometry("cos^2(theta) - sin^2(alpha) vanishes"));
    }
    Ok(g)
}

/// Closed-form Jacobian row `(2/a) sin(alpha) / r * (cos phi, sin phi, tan(theta - alpha))`.
pub fn jacobian_row(q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> Result<JacobianRow, FisherError> {
    let g = check_row_geometry(q, p, ssp)?;
    let scale = 2.0 / ssp.steepness() * g.deviation.sin() / g.slant_range;
    Ok([
        scale * g.bearing.cos(),
        scale * g.bearing.sin(),
        scale * (g.elevation - g.deviation).tan(),
    ])
}

/// The same row assembled term by term from the partials of `t` with respect
/// to `theta` and `alpha` and their derivatives with respect to `(x, y, z)`.
pub fn jacobian_row_chain_rule(q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> Result<JacobianRow, FisherError> {
    let g = check_row_geometry(q, p, ssp)?;
    let a = ssp.steepness();
    let (sin_t, cos_t) = g.elevation.sin_cos();
    let (sin_a, cos_a) = g.deviation.sin_cos();
    let (sin_p, cos_p) = g.bearing.sin_cos();
    let denominator = cos_t * cos_t - sin_a * sin_a;
    let dt_dtheta = 2.0 * sin_t * sin_a / (a * denominator);
    let dt_dalpha = 2.0 * cos_t * cos_a / (a * denominator);
    let (r, l) = (g.slant_range, g.aux_l);
    let dtheta = [-sin_t * cos_p / r, -sin_t * sin_p / r, cos_t / r];
    let dalpha = [cos_a * cos_p / l, cos_a * sin_p / l, -sin_a / l];
    Ok([
        dt_dtheta * dtheta[0] + dt_dalpha * dalpha[0],
        dt_dtheta * dtheta[1] + dt_dalpha * dalpha[1],
        dt_dtheta * dtheta[2] + dt_dalpha * dalpha[2],
    ])
}

fn require_anchor_count(anchors: &[Position]) -> Result<(), FisherError> {
    if anchors.len() < MIN_ANCHORS {
        return Err(FisherError::TooFewAnchors(anchors.len()));
    }
    Ok(())
}

fn tag(index: usize) -> impl Fn(FisherError) -> FisherError {
    move |e| FisherError::Anchor { index, source: Box::new(e) }
}

pub fn jacobian(q: &Position, anchors: &[Position], ssp: &SoundSpeedProfile) -> Result<Jacobian, FisherError> {
    require_anchor_count(anchors)?;
    let rows = anchors
        .iter()
        .enumerate()
        .map(|(i, p)| jacobian_row(q, p, ssp).map_err(tag(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Jacobian { rows })
}

/// Per-anchor travel-time variances at the true AUV position.
pub fn anchor_variances(
    q: &Position,
    anchors: &[Position],
    ssp: &SoundSpeedProfile,
    noise: &NoiseModel,
) -> Result<Vec<f64>, FisherError> {
    anchors
        .iter()
        .enumerate()
        .map(|(i, p)| noise.variance_between(q, p, ssp).map_err(tag(i)))
        .collect()
}

/// `J^T Sigma^-1 J` with `Sigma = diag(sigma_i^2)`.
pub fn information_matrix(
    q: &Position,
    anchors: &[Position],
    ssp: &SoundSpeedProfile,
    noise: &NoiseModel,
) -> Result<Matrix3, FisherError> {
    noise.validate()?;
    let jac = jacobian(q, anchors, ssp)?;
    let variances = anchor_variances(q, anchors, ssp, noise)?;
    Ok(weighted_normal_matrix(&jac.rows, &variances))
}

pub(crate) fn weighted_normal_matrix(rows: &[JacobianRow], variances: &[f64]) -> Matrix3 {
    let mut m = linalg::zeros();
    for (row, var) in rows.iter().zip(variances) {
        for j in 0..3 {
            for k in 0..3 {
                m[j][k] += row[j] * row[k] / var;
            }
        }
    }
    m
}

/// The FIM written out entry by entry in terms of `alpha, theta, phi, d`.
/// Independent of [`information_matrix`]; used to cross-check it.
pub fn fim_entrywise(
    q: &Position,
    anchors: &[Position],
    ssp: &SoundSpeedProfile,
    noise: &NoiseModel,
) -> Result<Matrix3, FisherError> {
    require_anchor_count(anchors)?;
    let mut m = linalg::zeros();
    for (i, p) in anchors.iter().enumerate() {
        let g = check_row_geometry(q, p, ssp).map_err(tag(i))?;
        let var = noise.variance_between(q, p, ssp).map_err(tag(i))?;
        let (sin_p, cos_p) = g.bearing.sin_cos();
        let tan_d = (g.elevation - g.deviation).tan();
        let common = g.deviation.sin().powi(2) * g.elevation.cos().powi(2) / (g.horizontal_range.powi(2) * var);
        m[0][0] += common * cos_p * cos_p;
        m[0][1] += common * sin_p * cos_p;
        m[0][2] += common * tan_d * cos_p;
        m[1][1] += common * sin_p * sin_p;
        m[1][2] += common * tan_d * sin_p;
        m[2][2] += common * tan_d * tan_d;
    }
    let scale = 4.0 / ssp.steepness().powi(2);
    for j in 0..3 {
        for k in j..3 {
            m[j][k] *= scale;
            m[k][j] = m[j][k];
        }
    }
    Ok(m)
}

/// A Fisher information matrix together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct FimResult {
    pub fim: Matrix3,
    pub crlb: Matrix3,
    pub trace_crlb: f64,
    /// Largest off-diagonal magnitude over the largest diagonal entry.
    pub offdiag_residual: f64,
    pub condition_number: f64,
}

impl FimResult {
    pub fn from_information(fim: Matrix3) -> Result<Self, FisherError> {
        let condition = linalg::symmetric_condition_number(&fim);
        if !(condition <= MAX_CONDITION_NUMBER) {
            return Err(FisherError::SingularFim { condition });
        }
        let crlb = linalg::inverse(&fim).ok_or(FisherError::SingularFim { condition })?;
        let max_diag = fim[0][0].abs().max(fim[1][1].abs()).max(fim[2][2].abs());
        let max_off = fim[0][1].abs().max(fim[0][2].abs()).max(fim[1][2].abs());
        Ok(Self {
            fim,
            trace_crlb: linalg::trace(&crlb),
            crlb,
            offdiag_residual: max_off / max_diag,
            condition_number: condition,
        })
    }

    /// Adds an independent direct depth observation with inverse variance
    /// `depth_information` (1/m^2) and re-inverts.
    pub fn with_depth_information(&self, depth_information: f64) -> Result<Self, FisherError> {
        let mut fim = self.fim;
        fim[2][2] += depth_information;
        Self::from_information(fim)
    }
}

pub fn fim(q: &Position, anchors: &[Position], ssp: &SoundSpeedProfile, noise: &NoiseModel) -> Result<FimResult, FisherError> {
    let info = information_matrix(q, anchors, ssp, noise)?;
    debug_assert!({
        let direct = fim_entrywise(q, anchors, ssp, noise)?;
        let scale = info.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
        info.iter().flatten().zip(direct.iter().flatten()).all(|(a, b)| (a - b).abs() <= 1e-10 * scale)
    });
    FimResult::from_information(info)
}

/// `1/psi_11 + 1/psi_22 + 1/psi_33`, a lower bound on `tr(CRLB)` that is
/// tight exactly when the FIM is diagonal.
pub fn diagonal_lower_bound(fim: &FimResult) -> Result<f64, FisherError> {
    let diag = [fim.fim[0][0], fim.fim[1][1], fim.fim[2][2]];
    if diag.iter().any(|v| *v <= 0.0) {
        return Err(FisherError::ZeroDiagonal);
    }
    Ok(diag.iter().map(|v| 1.0 / v).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ssp() -> SoundSpeedProfile {
        SoundSpeedProfile::new(1480.0, 0.1).unwrap()
    }

    fn ring(center: Position, radius: f64, n: usize) -> Vec<Position> {
        (1..=n)
            .map(|i| {
                let phi = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                Position::new(center.x + radius * phi.cos(), center.y + radius * phi.sin(), 0.0)
            })
            .collect()
    }

    #[test]
    fn variance_at_reference_distance() {
        let noise = NoiseModel::default();
        assert_relative_eq!(noise_variance(&noise, 1000.0).unwrap(), 0.1, max_relative = 1e-15);
    }

    #[test]
    fn constant_variance_of_one_millisecond() {
        let noise = NoiseModel::constant_ms(1.0);
        assert_relative_eq!(noise_variance(&noise, 42.0).unwrap(), 1e-6, max_relative = 1e-15);
    }

    #[test]
    fn variance_at_twice_reference_distance() {
        // A(2000) = 20 log10(2) + 1 dB; reference value from a 30-digit evaluation.
        let expected = 10f64.powf((-10.0 + 20.0 * 2f64.log10() + 1.0) / 10.0);
        assert_relative_eq!(expected, 0.503_570_164_717_667, max_relative = 1e-13);
        assert_relative_eq!(noise_variance(&NoiseModel::default(), 2000.0).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn nonpositive_distance_rejected() {
        assert_eq!(noise_variance(&NoiseModel::default(), 0.0), Err(FisherError::NonPositiveDistance(0.0)));
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseModel::ConstantVariance { sigma: 0.0 }.validate().is_err());
        let bad_beta = NoiseModel::DistanceDependent(PathLossNoise { beta: 3.0, ..Default::default() });
        assert!(bad_beta.validate().is_err());
        let bad_l0 = NoiseModel::DistanceDependent(PathLossNoise { l0: 0.0, ..Default::default() });
        assert!(bad_l0.validate().is_err());
        assert!(NoiseModel::default().validate().is_ok());
    }

    #[test]
    fn usc_rows_share_vertical_component() {
        let q = Position::new(50.0, 50.0, 50.0);
        let jac = jacobian(&q, &ring(q, 42.0, 6), &ssp()).unwrap();
        let z0 = jac.rows[0][2];
        for row in &jac.rows {
            assert_relative_eq!(row[2], z0, max_relative = 1e-12);
        }
    }

    #[test]
    fn mirrored_anchors_have_opposite_x_partials() {
        let q = Position::new(0.0, 0.0, 40.0);
        let left = jacobian_row(&q, &Position::new(-30.0, 10.0, 0.0), &ssp()).unwrap();
        let right = jacobian_row(&q, &Position::new(30.0, 10.0, 0.0), &ssp()).unwrap();
        assert_relative_eq!(left[0], -right[0], max_relative = 1e-14);
        assert_relative_eq!(left[1], right[1], max_relative = 1e-14);
    }

    #[test]
    fn three_anchors_are_too_few() {
        let q = Position::new(50.0, 50.0, 50.0);
        assert_eq!(jacobian(&q, &ring(q, 40.0, 3), &ssp()), Err(FisherError::TooFewAnchors(3)));
    }

    #[test]
    fn anchor_errors_carry_index() {
        let q = Position::new(50.0, 50.0, 50.0);
        let mut anchors = ring(q, 40.0, 4);
        anchors[2] = Position::new(50.0, 50.0, 0.0);
        match jacobian(&q, &anchors, &ssp()) {
            Err(FisherError::Anchor { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn planar_layout_is_singular() {
        let q = Position::new(0.0, 0.0, 50.0);
        let anchors: Vec<_> = [-80.0, -30.0, 20.0, 60.0, 100.0].iter().map(|&x| Position::new(x, 0.0, if x > 0.0 { 0.0 } else { 10.0 })).collect();
        match fim(&q, &anchors, &ssp(), &NoiseModel::default()) {
            Err(FisherError::SingularFim { .. }) => {}
            other => panic!("expected SingularFim, got {other:?}"),
        }
    }

    #[test]
    fn diagonal_fim_bound_is_tight() {
        let fim = FimResult::from_information([[2.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 8.0]]).unwrap();
        assert_eq!(diagonal_lower_bound(&fim).unwrap(), fim.trace_crlb);
        assert_eq!(fim.offdiag_residual, 0.0);
    }

    #[test]
    fn zero_diagonal_rejected() {
        let fim = FimResult {
            fim: [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            crlb: linalg::zeros(),
            trace_crlb: 0.0,
            offdiag_residual: 0.0,
            condition_number: f64::INFINITY,
        };
        assert_eq!(diagonal_lower_bound(&fim), Err(FisherError::ZeroDiagonal));
    }

    #[test]
    fn usc_fim_is_diagonal() {
        let q = Position::new(50.0, 50.0, 50.0);
        let result = fim(&q, &ring(q, 42.0, 8), &ssp(), &NoiseModel::default()).unwrap();
        assert!(result.offdiag_residual < 1e-9, "{}", result.offdiag_residual);
        let bound = diagonal_lower_bound(&result).unwrap();
        assert!((result.trace_crlb - bound).abs() / result.trace_crlb < 1e-8);
    }

    #[test]
    fn perturbed_usc_bound_is_strict() {
        let q = Position::new(50.0, 50.0, 50.0);
        let mut anchors = ring(q, 42.0, 8);
        anchors[3].x += 5.0;
        let result = fim(&q, &anchors, &ssp(), &NoiseModel::default()).unwrap();
        let bound = diagonal_lower_bound(&result).unwrap();
        assert!(bound < result.trace_crlb);

        // Brute force: invert the FIM by Gaussian elimination.
        let mut a = result.fim;
        let mut inv = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for c in 0..3 {
            let pivot = a[c][c];
            for k in 0..3 {
                a[c][k] /= pivot;
                inv[c][k] /= pivot;
            }
            for r in 0..3 {
                if r != c {
                    let f = a[r][c];
                    for k in 0..3 {
                        a[r][k] -= f * a[c][k];
                        inv[r][k] -= f * inv[c][k];
                    }
                }
            }
        }
        assert_relative_eq!(inv[0][0] + inv[1][1] + inv[2][2], result.trace_crlb, max_relative = 1e-10);
    }

    #[test]
    fn depth_information_only_shrinks_bound() {
        let q = Position::new(50.0, 50.0, 50.0);
        let base = fim(&q, &ring(q, 42.0, 8), &ssp(), &NoiseModel::constant_ms(1.0)).unwrap();
        let aided = base.with_depth_information(1.0).unwrap();
        assert!(aided.trace_crlb < base.trace_crlb);
        assert_relative_eq!(aided.crlb[2][2], 1.0 / (base.fim[2][2] + 1.0), max_relative = 1e-12);
    }

    #[test]
    fn arc_measure_changes_variance_slightly() {
        let q = Position::new(50.0, 50.0, 50.0);
        let p = Position::new(92.0, 50.0, 0.0);
        let slant = NoiseModel::default().variance_between(&q, &p, &ssp()).unwrap();
        let arc = NoiseModel::DistanceDependent(PathLossNoise { distance: RangeMeasure::RayArc, ..Default::default() })
            .variance_between(&q, &p, &ssp())
            .unwrap();
        assert!(arc >= slant);
        assert!((arc - slant) / slant < 1e-3);
    }
}
