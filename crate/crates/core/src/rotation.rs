//! Rotation helpers shared by the geometric stages and the solver.
//!
//! Quaternions are Hamilton, scalar-first `(w, x, y, z)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

/// Converts a rotation matrix to a unit quaternion with Shepperd's method.
///
/// The branch is chosen by the largest of `trace`, `r00`, `r11`, `r22`, so
/// the square root is always taken of a quantity at least one quarter of
/// its maximum. The result has `w >= 0`.
pub fn quaternion_from_matrix(r: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let diag = [r[(0, 0)], r[(1, 1)], r[(2, 2)]];
    let (w, x, y, z);
    if trace >= diag[0] && trace >= diag[1] && trace >= diag[2] {
        let s = 2.0 * (1.0 + trace).sqrt();
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if diag[0] >= diag[1] && diag[0] >= diag[2] {
        let s = 2.0 * (1.0 + diag[0] - diag[1] - diag[2]).sqrt();
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if diag[1] >= diag[2] {
        let s = 2.0 * (1.0 - diag[0] + diag[1] - diag[2]).sqrt();
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = 2.0 * (1.0 - diag[0] - diag[1] + diag[2]).sqrt();
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let q = Quaternion::new(w, x, y, z);
    let q = if w < 0.0 { -q } else { q };
    UnitQuaternion::new_normalize(q)
}

/// URDF roll-pitch-yaw: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn matrix_from_rpy(rpy: [f64; 3]) -> Matrix3<f64> {
    let [roll, pitch, yaw] = rpy;
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Rotation vector (axis times angle, angle in `[0, pi]`) of `r`.
pub fn rotation_vector(r: &Matrix3<f64>) -> Vector3<f64> {
    quaternion_from_matrix(r).scaled_axis()
}

/// Largest absolute entry of `RᵀR − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}
