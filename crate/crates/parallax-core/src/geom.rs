//! Small SO(3) and similarity-transform utilities shared by the solvers and
//! their validation harnesses.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Rotation3, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

/// Projects an arbitrary 3x3 matrix to the nearest rotation (Frobenius sense).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("3x3 svd");
    let v_t = svd.v_t.expect("3x3 svd");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Rotation3::from_matrix_unchecked(r)
}

/// Geodesic angle between two rotations, in radians.
pub fn geodesic_angle(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    let rel = a.transpose() * b;
    // Clamp the trace to dodge acos domain errors from rounding.
    let cos = ((rel.matrix().trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    cos.acos()
}

/// Deviation of a matrix from orthonormality, max-norm of R^T R - I.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let e = r.transpose() * r - Matrix3::identity();
    e.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Chordal L2 mean of a set of rotations (SVD projection of the sum).
pub fn chordal_mean(rotations: &[Rotation3<f64>]) -> Rotation3<f64> {
    assert!(!rotations.is_empty(), "mean of empty rotation set");
    let mut sum = Matrix3::zeros();
    for r in rotations {
        sum += r.matrix();
    }
    nearest_rotation(&sum)
}

/// Gauge-aligns an estimated rotation set against a reference.
///
/// Rotation averaging determines world-to-camera rotations only up to a
/// global right factor G (R_i -> R_i G leaves every relative rotation
/// unchanged). Returns the G minimizing chordal error and the per-element
/// geodesic residuals of `est_i * G^-1` against `ref_i`.
pub fn align_rotation_sets(
    estimated: &[Rotation3<f64>],
    reference: &[Rotation3<f64>],
) -> (Rotation3<f64>, Vec<f64>) {
    assert_eq!(estimated.len(), reference.len());
    let relatives: Vec<Rotation3<f64>> = reference
        .iter()
        .zip(estimated)
        .map(|(gt, est)| gt.transpose() * est)
        .collect();
    let gauge = chordal_mean(&relatives);
    let residuals = reference
        .iter()
        .zip(estimated)
        .map(|(gt, est)| geodesic_angle(&(est * gauge.inverse()), gt))
        .collect();
    (gauge, residuals)
}

/// Similarity transform (s, R, t) mapping `src` onto `dst` in least squares,
/// the Umeyama closed form. Panics on fewer than three points.
pub fn fit_similarity(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> (f64, Rotation3<f64>, Vector3<f64>) {
    assert!(src.len() == dst.len() && src.len() >= 3, "need >= 3 point pairs");
    let n = src.len() as f64;
    let mean_src: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mean_dst: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mean_src;
        let dc = d - mean_dst;
        cov += dc * sc.transpose();
        var_src += sc.norm_squared();
    }
    cov /= n;
    var_src /= n;

    let svd = cov.svd(true, true);
    let u = svd.u.expect("3x3 svd");
    let v_t = svd.v_t.expect("3x3 svd");
    let mut s_diag = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        s_diag.z = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let rot = Rotation3::from_matrix_unchecked(r);
    let scale = if var_src > 0.0 {
        (svd.singular_values.component_mul(&s_diag)).sum() / var_src
    } else {
        1.0
    };
    let t = mean_dst - scale * (rot * mean_src);
    (scale, rot, t)
}

/// Applies a similarity transform to a point.
#[inline]
pub fn apply_similarity(
    (s, r, t): &(f64, Rotation3<f64>, Vector3<f64>),
    p: &Vector3<f64>,
) -> Vector3<f64> {
    *s * (r * p) + t
}
