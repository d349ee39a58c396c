//! Bent-ray geometry between a surface (or shallow) anchor and the AUV under
//! an isogradient sound-speed profile `C(z) = b + a z`.
//!
//! Depth `z` is positive downward with the sea surface at `z = 0`. For an
//! anchor `p` and the AUV `q` the closed forms are
//!
//! ```text
//! d     = sqrt((x - x_i)^2 + (y - y_i)^2)
//! theta = atan((z - z_i) / d)                 straight-line elevation
//! alpha = atan(d / (2b/a + z + z_i))          deviation of the bent ray
//! t     = (1/a) [ g(theta + alpha) - g(theta - alpha) ],  g(u) = ln((1 + sin u) / cos u)
//! ```
//!
//! [`snell_travel_time_oracle`] recomputes `t` by shooting rays that obey
//! Snell's law and integrating numerically, which gives an independent check
//! of the closed form.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

/// `cos(theta +- alpha)` below this makes the travel-time logarithm singular.
pub const GRAZING_TOLERANCE: f64 = 1e-12;

/// Bisection tolerance on the launch angle used by the Snell oracle, radians.
pub const ORACLE_ANGLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid sound-speed profile: surface speed {surface_speed} m/s, steepness {steepness} 1/s")]
    InvalidProfile { surface_speed: f64, steepness: f64 },
    #[error("horizontal range is zero; bearing is undefined")]
    ZeroHorizontalRange,
    #[error("anchor and AUV are vertically aligned; elevation is +-pi/2")]
    VerticalRay,
    #[error("anchor and AUV coincide")]
    CoincidentPoints,
    #[error("ray grazes: cos(theta +- alpha) = {0:e}")]
    GrazingRay(f64),
    #[error("no direct eigenray connects the endpoints")]
    NoEigenray,
    #[error("depth {0} m is outside the profile's valid region")]
    InvalidDepth(f64),
    #[error("oracle needs at least 1000 quadrature panels, got {0}")]
    TooFewSteps(usize),
}

/// Linear sound-speed profile `C(z) = b + a z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoundSpeedProfile {
    surface_speed: f64,
    steepness: f64,
}

impl SoundSpeedProfile {
    pub fn new(surface_speed: f64, steepness: f64) -> Result<Self, GeometryError> {
        if !(surface_speed > 0.0 && surface_speed.is_finite() && steepness > 0.0 && steepness.is_finite()) {
            return Err(GeometryError::InvalidProfile { surface_speed, steepness });
        }
        Ok(Self { surface_speed, steepness })
    }

    /// Surface speed `b`, m/s.
    pub fn surface_speed(&self) -> f64 {
        self.surface_speed
    }

    /// Steepness `a`, 1/s.
    pub fn steepness(&self) -> f64 {
        self.steepness
    }

    /// `2b/a`, the recurring length scale of the ray formulas.
    pub fn curvature_length(&self) -> f64 {
        2.0 * self.surface_speed / self.steepness
    }

    pub fn speed_at(&self, z: f64) -> f64 {
        self.surface_speed + self.steepness * z
    }
}

impl Default for SoundSpeedProfile {
    fn default() -> Self {
        Self { surface_speed: 1480.0, steepness: 0.1 }
    }
}

/// A point in the local frame; `z` is depth in meters, positive downward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn offset(&self, dx: f64, dy: f64, dz: f64) -> Position {
        Position::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Everything the closed forms know about one anchor-AUV pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayGeometry {
    pub horizontal_range: f64,
    pub slant_range: f64,
    pub bearing: f64,
    pub elevation: f64,
    pub deviation: f64,
    pub aux_l: f64,
    pub travel_time: f64,
}

pub fn sound_speed(ssp: &SoundSpeedProfile, z: f64) -> f64 {
    ssp.speed_at(z)
}

pub fn horizontal_range(q: &Position, p: &Position) -> f64 {
    (q.x - p.x).hypot(q.y - p.y)
}

/// Four-quadrant bearing of `(x - x_i, y - y_i)`, in `(-pi, pi]`.
pub fn bearing(q: &Position, p: &Position) -> Result<f64, GeometryError> {
    let (dx, dy) = (q.x - p.x, q.y - p.y);
    if dx == 0.0 && dy == 0.0 {
        return Err(GeometryError::ZeroHorizontalRange);
    }
    Ok(dy.atan2(dx))
}

/// Elevation of the straight anchor-AUV line above the horizontal.
pub fn elevation_angle(q: &Position, p: &Position) -> Result<f64, GeometryError> {
    let d = horizontal_range(q, p);
    let dz = q.z - p.z;
    if d == 0.0 {
        return Err(if dz == 0.0 { GeometryError::CoincidentPoints } else { GeometryError::VerticalRay });
    }
    Ok(dz.atan2(d))
}

fn curvature_depth(q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> f64 {
    ssp.curvature_length() + q.z + p.z
}

/// Angle between the bent ray and the straight chord, in `[0, pi/2)`.
pub fn deviation_angle(q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> f64 {
    let depth = curvature_depth(q, p, ssp);
    debug_assert!(depth > 0.0, "2b/a + z + z_i must be positive");
    horizontal_range(q, p).atan2(depth)
}

pub fn aux_l(q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> f64 {
    let d = horizontal_range(q, p);
    d.hypot(curvature_depth(q, p, ssp))
}

/// Closed-form ray travel time between `p` and `q`.
///
/// The difference of the two logarithms is evaluated as one `ln_1p` of
/// `2 sin(alpha) (sin(theta) + cos(alpha)) / ((1 + sin(theta - alpha)) cos(theta + alpha))`,
/// which is the same quantity without the cancellation that plagues small `a`.
pub fn ray_travel_time(q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> Result<f64, GeometryError> {
    if q == p {
        return Ok(0.0);
    }
    let theta = elevation_angle(q, p).map_err(|e| match e {
        // Vertical rays have theta = +-pi/2, which the logarithm cannot take.
        GeometryError::VerticalRay => GeometryError::GrazingRay(0.0),
        other => other,
    })?;
    let alpha = deviation_angle(q, p, ssp);
    travel_time_from_angles(theta, alpha, ssp.steepness())
}

pub(crate) fn travel_time_from_angles(theta: f64, alpha: f64, steepness: f64) -> Result<f64, GeometryError> {
    let cos_plus = (theta + alpha).cos();
    let cos_minus = (theta - alpha).cos();
    let worst = cos_plus.min(cos_minus);
    if worst < GRAZING_TOLERANCE {
        return Err(GeometryError::GrazingRay(worst));
    }
    let numerator = 2.0 * alpha.sin() * (theta.sin() + alpha.cos());
    let denominator = (1.0 + (theta - alpha).sin()) * cos_plus;
    Ok((numerator / denominator).ln_1p() / steepness)
}

/// The literal two-logarithm form of the travel time. Kept for tests and for
/// readers comparing against the textbook expression.
pub fn ray_travel_time_log_form(theta: f64, alpha: f64, steepness: f64) -> f64 {
    let g = |u: f64| ((1.0 + u.sin()) / u.cos()).ln();
    (g(theta + alpha) - g(theta - alpha)) / steepness
}

/// Bundles every closed-form quantity for one pair.
pub fn ray_geometry(q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> Result<RayGeometry, GeometryError> {
    let bearing = bearing(q, p)?;
    let elevation = elevation_angle(q, p)?;
    let deviation = deviation_angle(q, p, ssp);
    let travel_time = travel_time_from_angles(elevation, deviation, ssp.steepness())?;
    Ok(RayGeometry {
        horizontal_range: horizontal_range(q, p),
        slant_range: q.distance(p),
        bearing,
        elevation,
        deviation,
        aux_l: aux_l(q, p, ssp),
        travel_time,
    })
}

/// Numerical travel time from Snell's law.
///
/// The ray leaves the shallower endpoint at grazing angle `g0` (measured
/// from horizontal, downward positive). Snell's invariant `cos g / C(z)`
/// fixes the angle at every depth, so the horizontal distance covered and
/// the time spent are
///
/// ```text
/// X(g0) = int cos g / sin g dz,    T(g0) = int 1 / (C(z) sin g) dz
/// ```
///
/// over the depth interval. `g0` is found by bisection on `X(g0) = d`, then
/// `T` is integrated with composite Simpson over `steps` panels. Only direct
/// rays (monotone in depth) are handled; geometries that need a turning ray
/// return [`GeometryError::NoEigenray`].
pub fn snell_travel_time_oracle(
    q: &Position,
    p: &Position,
    ssp: &SoundSpeedProfile,
    steps: usize,
) -> Result<f64, GeometryError> {
    if steps < 1000 {
        return Err(GeometryError::TooFewSteps(steps));
    }
    let (shallow, deep) = if q.z <= p.z { (q.z, p.z) } else { (p.z, q.z) };
    if shallow == deep {
        return Err(GeometryError::NoEigenray);
    }
    let c_top = ssp.speed_at(shallow);
    let c_bottom = ssp.speed_at(deep);
    if c_top <= 0.0 {
        return Err(GeometryError::InvalidDepth(shallow));
    }
    let d = horizontal_range(q, p);
    let steps = steps + steps % 2;

    // Snell invariant for launch angle g0 at the shallow end.
    let invariant = |g0: f64| g0.cos() / c_top;
    let range_for = |g0: f64| {
        let xi = invariant(g0);
        simpson(shallow, deep, steps, |z| {
            let cos_g = xi * ssp.speed_at(z);
            cos_g / (1.0 - cos_g * cos_g).max(0.0).sqrt()
        })
    };

    // The ray that just grazes at the deep end is the flattest direct ray.
    let g_flat = (c_top / c_bottom).acos();
    let mut lo = g_flat;
    let mut hi = FRAC_PI_2;
    if d == 0.0 {
        lo = FRAC_PI_2;
    } else {
        // Nudge off the integrable endpoint singularity before testing the bracket.
        let probe = g_flat + 1e-9;
        let max_range = range_for(probe);
        if !(max_range.is_finite() && max_range > d) {
            return Err(GeometryError::NoEigenray);
        }
        lo = lo.max(probe);
        while hi - lo > ORACLE_ANGLE_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            // Steeper launch covers less horizontal distance.
            if range_for(mid) > d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let g0 = 0.5 * (lo + hi);
    let xi = invariant(g0);
    let time = simpson(shallow, deep, steps, |z| {
        let c = ssp.speed_at(z);
        let cos_g = xi * c;
        1.0 / (c * (1.0 - cos_g * cos_g).max(0.0).sqrt())
    });
    if time.is_finite() {
        Ok(time)
    } else {
        Err(GeometryError::NoEigenray)
    }
}

fn simpson(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * i as f64);
    }
    sum * h / 3.0
}

/// Length of the circular ray arc between two points.
///
/// Isogradient rays are arcs of circles centred at depth `-b/a`, where the
/// extrapolated sound speed vanishes.
pub fn ray_arc_length(q: &Position, p: &Position, ssp: &SoundSpeedProfile) -> f64 {
    let d = horizontal_range(q, p);
    let dz = (q.z - p.z).abs();
    if d == 0.0 {
        return dz;
    }
    let h = ssp.surface_speed() / ssp.steepness();
    let (u_p, u_q) = (p.z + h, q.z + h);
    // Centre's horizontal offset from p along the p -> q direction.
    let xc = (d * d + u_q * u_q - u_p * u_p) / (2.0 * d);
    let radius = xc.hypot(u_p);
    let chord = d.hypot(dz);
    2.0 * radius * (chord / (2.0 * radius)).min(1.0).asin()
}
