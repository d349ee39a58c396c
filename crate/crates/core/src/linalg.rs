//! Fixed-size 3x3 helpers. Everything here is closed form so results are
//! reproducible bit for bit across platforms that share an `f64` libm.

use std::f64::consts::PI;

pub type Matrix3 = [[f64; 3]; 3];
pub type Vector3 = [f64; 3];

pub fn zeros() -> Matrix3 {
    [[0.0; 3]; 3]
}

pub fn determinant(m: &Matrix3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Adjugate over determinant. Returns `None` for an exactly singular matrix;
/// callers that care about conditioning check [`symmetric_condition_number`].
pub fn inverse(m: &Matrix3) -> Option<Matrix3> {
    let det = determinant(m);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let mut out = zeros();
    for (row, adj_row) in out.iter_mut().zip(adj.iter()) {
        for (v, a) in row.iter_mut().zip(adj_row.iter()) {
            *v = a / det;
        }
    }
    Some(out)
}

pub fn trace(m: &Matrix3) -> f64 {
    m[0][0] + m[1][1] + m[2][2]
}

pub fn mat_vec(m: &Matrix3, v: &Vector3) -> Vector3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn norm(v: &Vector3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Eigenvalues of a symmetric matrix in ascending order (trigonometric
/// solution of the characteristic cubic).
pub fn symmetric_eigenvalues(m: &Matrix3) -> [f64; 3] {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    if p1 == 0.0 {
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let q = trace(m) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *m;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - if i == j { q } else { 0.0 }) / p;
        }
    }
    let r = (determinant(&b) / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let largest = q + 2.0 * p * phi.cos();
    let smallest = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let middle = 3.0 * q - largest - smallest;
    [smallest, middle, largest]
}

/// Ratio of extreme eigenvalue magnitudes; infinite when the smallest is zero
/// or negative.
pub fn symmetric_condition_number(m: &Matrix3) -> f64 {
    let [lo, _, hi] = symmetric_eigenvalues(m);
    if lo <= 0.0 {
        return f64::INFINITY;
    }
    hi / lo
}
