//! Descriptor matching and two-view geometric verification.
//!
//! Candidate correspondences are mutual nearest neighbours that pass the
//! ratio test in both directions. Verification runs RANSAC over normalized
//! coordinates with the eight-point essential-matrix solver, scores by
//! Sampson distance, picks the (R, t) decomposition by cheirality and
//! re-estimates on the final inlier set. The resulting edge carries the
//! rotation of the second camera relative to the first (x_j = R x_i + t)
//! and the unit translation direction in the second camera's frame.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, Matrix3, Point2, Rotation3, Unit, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraIntrinsics;
use crate::geom::nearest_rotation;
use crate::liop::LiopDescriptor;
use crate::scalespace::Keypoint;

/// One verified or candidate correspondence between two keypoint sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: u32,
    pub index_b: u32,
    /// Euclidean descriptor distance.
    pub distance: f32,
}

/// A verified pairwise constraint for the pose graph.
#[derive(Debug, Clone)]
pub struct PoseGraphEdge {
    pub cam_i: usize,
    pub cam_j: usize,
    /// Rotation of camera j relative to camera i: x_j = R x_i + t.
    pub relative_rotation: Rotation3<f64>,
    /// Unit translation direction t / |t| in camera j's frame.
    pub relative_direction: Unit<Vector3<f64>>,
    pub inlier_count: usize,
    pub inlier_matches: Vec<Match>,
}

/// RANSAC configuration for [`verify_epipolar`].
#[derive(Debug, Clone, Copy)]
pub struct RansacParams {
    /// Sampson inlier threshold in full-resolution pixels.
    pub threshold_px: f64,
    pub max_iterations: usize,
    /// Early-exit confidence on having seen an outlier-free sample.
    pub confidence: f64,
    /// Minimum inliers for an edge to be kept.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold_px: 2.0,
            max_iterations: 2048,
            confidence: 0.99,
            min_inliers: 30,
            seed: 0,
        }
    }
}

/// Geometric verification errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EpipolarError {
    /// Fewer matches than the eight-point solver needs.
    InsufficientMatches(usize),
    /// No decomposition passes cheirality, or the edge is under-supported.
    DegenerateGeometry,
}

impl fmt::Display for EpipolarError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpipolarError::InsufficientMatches(n) => {
                write!(f, "need at least 8 matches, got {n}")
            }
            EpipolarError::DegenerateGeometry => {
                write!(f, "two-view geometry is degenerate or under-supported")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EpipolarError {}

/// Mutual nearest-neighbour matching with a two-sided ratio test.
///
/// A pair is kept when each descriptor is the other's nearest neighbour and
/// the best distance is below `ratio` times the second best on both sides
/// (sets with a single descriptor have no second best and pass). The output
/// is one-to-one by construction.
pub fn match_descriptors(
    feats_a: &[LiopDescriptor],
    feats_b: &[LiopDescriptor],
    ratio: f64,
) -> Vec<Match> {
    assert!(ratio > 0.0 && ratio < 1.0, "ratio must be in (0, 1)");
    if feats_a.is_empty() || feats_b.is_empty() {
        return Vec::new();
    }
    let ratio_sq = ratio * ratio;
    let nearest = |from: &[LiopDescriptor], to: &[LiopDescriptor]| -> Vec<(usize, f64, f64)> {
        from.iter()
            .map(|q| {
                let mut best = (0usize, f64::INFINITY);
                let mut second = f64::INFINITY;
                for (j, c) in to.iter().enumerate() {
                    let d = sq_distance(&q.values, &c.values);
                    if d < best.1 {
                        second = best.1;
                        best = (j, d);
                    } else if d < second {
                        second = d;
                    }
                }
                (best.0, best.1, second)
            })
            .collect()
    };
    let fwd = nearest(feats_a, feats_b);
    let bwd = nearest(feats_b, feats_a);

    let mut out = Vec::new();
    for (ia, &(ib, d, second_fwd)) in fwd.iter().enumerate() {
        let (back, _, second_bwd) = bwd[ib];
        if back != ia {
            continue;
        }
        if d >= ratio_sq * second_fwd || d >= ratio_sq * second_bwd {
            continue;
        }
        out.push(Match {
            index_a: ia as u32,
            index_b: ib as u32,
            distance: d.sqrt() as f32,
        });
    }
    out
}

fn sq_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len(), "descriptor lengths differ");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Normalized eight-point essential matrix estimate.
///
/// Points are in normalized camera coordinates; Hartley conditioning is
/// applied internally and the result is projected to the essential manifold
/// (singular values 1, 1, 0). Returns `None` for rank-deficient systems.
fn eight_point(pa: &[Point2<f64>], pb: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    debug_assert!(pa.len() >= 8 && pa.len() == pb.len());
    let condition = |pts: &[Point2<f64>]| {
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
        let mean_dist = pts
            .iter()
            .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
            .sum::<f64>()
            / n;
        let s = if mean_dist > 1e-12 {
            core::f64::consts::SQRT_2 / mean_dist
        } else {
            1.0
        };
        Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
    };
    let ta = condition(pa);
    let tb = condition(pb);

    let mut a = DMatrix::<f64>::zeros(pa.len(), 9);
    for (row, (p, q)) in pa.iter().zip(pb).enumerate() {
        let xa = ta * Vector3::new(p.x, p.y, 1.0);
        let xb = tb * Vector3::new(q.x, q.y, 1.0);
        a[(row, 0)] = xb.x * xa.x;
        a[(row, 1)] = xb.x * xa.y;
        a[(row, 2)] = xb.x;
        a[(row, 3)] = xb.y * xa.x;
        a[(row, 4)] = xb.y * xa.y;
        a[(row, 5)] = xb.y;
        a[(row, 6)] = xa.x;
        a[(row, 7)] = xa.y;
        a[(row, 8)] = 1.0;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let e_vec = v_t.row(v_t.nrows() - 1);
    let e_cond = Matrix3::new(
        e_vec[0], e_vec[1], e_vec[2], e_vec[3], e_vec[4], e_vec[5], e_vec[6], e_vec[7], e_vec[8],
    );
    // Undo conditioning, then project to the essential manifold.
    let e = tb.transpose() * e_cond * ta;
    let svd = e.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    if svd.singular_values[1] <= 1e-12 {
        return None;
    }
    Some(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t)
}

/// Sampson distance in normalized coordinates.
fn sampson_distance(e: &Matrix3<f64>, pa: &Point2<f64>, pb: &Point2<f64>) -> f64 {
    let xa = Vector3::new(pa.x, pa.y, 1.0);
    let xb = Vector3::new(pb.x, pb.y, 1.0);
    let exa = e * xa;
    let etxb = e.transpose() * xb;
    let num = xb.dot(&exa);
    let den = exa.x * exa.x + exa.y * exa.y + etxb.x * etxb.x + etxb.y * etxb.y;
    if den <= 1e-300 {
        return f64::INFINITY;
    }
    (num * num / den).sqrt()
}

/// Midpoint two-view triangulation used for cheirality voting.
///
/// Returns (depth in camera a, depth in camera b, parallax angle in rad).
fn two_view_depths(
    r: &Rotation3<f64>,
    t: &Vector3<f64>,
    pa: &Point2<f64>,
    pb: &Point2<f64>,
) -> Option<(f64, f64, f64)> {
    let da = Vector3::new(pa.x, pa.y, 1.0).normalize();
    // Camera b's ray expressed in camera a's frame.
    let db = r.transpose() * Vector3::new(pb.x, pb.y, 1.0).normalize();
    let origin_b = -(r.transpose() * t);

    let parallax = da.dot(&db).clamp(-1.0, 1.0).acos();
    // Closest points between the two rays: solve for segment parameters.
    let w = -origin_b;
    let a = 1.0;
    let b = da.dot(&db);
    let c = 1.0;
    let d = da.dot(&w);
    let e = db.dot(&w);
    let denom = a * c - b * b;
    if denom.abs() < 1e-14 {
        return None;
    }
    let s = (b * e - c * d) / denom;
    let u = (a * e - b * d) / denom;
    let x = (da * s + (origin_b + db * u)) * 0.5;
    let depth_a = x.z;
    let depth_b = (r * x + t).z;
    Some((depth_a, depth_b, parallax))
}

/// Minimum parallax for a correspondence to vote in cheirality selection.
const CHEIRALITY_MIN_PARALLAX: f64 = 1e-3;

fn cheirality_votes(
    r: &Rotation3<f64>,
    t: &Vector3<f64>,
    pa: &[Point2<f64>],
    pb: &[Point2<f64>],
) -> usize {
    pa.iter()
        .zip(pb)
        .filter(|(a, b)| {
            two_view_depths(r, t, a, b).is_some_and(|(da, db, parallax)| {
                da > 0.0 && db > 0.0 && parallax > CHEIRALITY_MIN_PARALLAX
            })
        })
        .count()
}

/// Decomposes an essential matrix into the cheirality-consistent (R, t).
fn decompose_essential(
    e: &Matrix3<f64>,
    pa: &[Point2<f64>],
    pb: &[Point2<f64>],
) -> Option<(Rotation3<f64>, Unit<Vector3<f64>>)> {
    let svd = e.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let fix = |m: Matrix3<f64>| {
        if m.determinant() < 0.0 {
            nearest_rotation(&(-m))
        } else {
            nearest_rotation(&m)
        }
    };
    let r1 = fix(u * w * v_t);
    let r2 = fix(u * w.transpose() * v_t);
    let t = u.column(2).into_owned();

    let mut best: Option<((Rotation3<f64>, Vector3<f64>), usize)> = None;
    for (r, tv) in [(r1, t), (r1, -t), (r2, t), (r2, -t)] {
        let votes = cheirality_votes(&r, &tv, pa, pb);
        if votes > 0 && best.as_ref().is_none_or(|(_, b)| votes > *b) {
            best = Some(((r, tv), votes));
        }
    }
    best.map(|((r, tv), _)| (r, Unit::new_normalize(tv)))
}

/// RANSAC essential-matrix verification of a match set.
///
/// Estimates the relative pose of camera `cam_j` with respect to `cam_i`
/// from the matched keypoints and returns a pose-graph edge over the final
/// inlier set.
pub fn verify_epipolar(
    cam_i: usize,
    cam_j: usize,
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    k: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<PoseGraphEdge, EpipolarError> {
    if matches.len() < 8 {
        return Err(EpipolarError::InsufficientMatches(matches.len()));
    }
    let pa: Vec<Point2<f64>> = matches
        .iter()
        .map(|m| {
            let kp = &kps_a[m.index_a as usize];
            k.normalize(Point2::new(kp.x, kp.y))
        })
        .collect();
    let pb: Vec<Point2<f64>> = matches
        .iter()
        .map(|m| {
            let kp = &kps_b[m.index_b as usize];
            k.normalize(Point2::new(kp.x, kp.y))
        })
        .collect();
    let threshold = params.threshold_px / k.focal_px;
    let n = matches.len();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best_inliers: Vec<usize> = Vec::new();
    let mut needed = params.max_iterations;
    let mut sample_a = vec![Point2::origin(); 8];
    let mut sample_b = vec![Point2::origin(); 8];
    let mut it = 0;
    while it < needed.min(params.max_iterations) {
        it += 1;
        let mut picked = [usize::MAX; 8];
        for slot in 0..8 {
            loop {
                let cand = rng.gen_range(0..n);
                if !picked[..slot].contains(&cand) {
                    picked[slot] = cand;
                    break;
                }
            }
            sample_a[slot] = pa[picked[slot]];
            sample_b[slot] = pb[picked[slot]];
        }
        let Some(e) = eight_point(&sample_a, &sample_b) else {
            continue;
        };
        let inliers: Vec<usize> = (0..n)
            .filter(|&i| sampson_distance(&e, &pa[i], &pb[i]) < threshold)
            .collect();
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
            // Adaptive iteration count at the requested confidence.
            let w = best_inliers.len() as f64 / n as f64;
            let denom = (1.0 - w.powi(8)).max(1e-12).ln();
            if denom < 0.0 {
                let est = ((1.0 - params.confidence).ln() / denom).ceil();
                needed = (est.max(1.0) as usize).min(params.max_iterations);
            }
        }
    }

    if best_inliers.len() < 8.max(params.min_inliers) {
        return Err(EpipolarError::DegenerateGeometry);
    }

    // Re-estimate on all inliers and refresh the inlier set once.
    let ia: Vec<Point2<f64>> = best_inliers.iter().map(|&i| pa[i]).collect();
    let ib: Vec<Point2<f64>> = best_inliers.iter().map(|&i| pb[i]).collect();
    let e = eight_point(&ia, &ib).ok_or(EpipolarError::DegenerateGeometry)?;
    let final_inliers: Vec<usize> = (0..n)
        .filter(|&i| sampson_distance(&e, &pa[i], &pb[i]) < threshold)
        .collect();
    if final_inliers.len() < 8.max(params.min_inliers) {
        return Err(EpipolarError::DegenerateGeometry);
    }
    let fa: Vec<Point2<f64>> = final_inliers.iter().map(|&i| pa[i]).collect();
    let fb: Vec<Point2<f64>> = final_inliers.iter().map(|&i| pb[i]).collect();
    let e = eight_point(&fa, &fb).ok_or(EpipolarError::DegenerateGeometry)?;
    let (rotation, direction) =
        decompose_essential(&e, &fa, &fb).ok_or(EpipolarError::DegenerateGeometry)?;

    Ok(PoseGraphEdge {
        cam_i,
        cam_j,
        relative_rotation: rotation,
        relative_direction: direction,
        inlier_count: final_inliers.len(),
        inlier_matches: final_inliers.iter().map(|&i| matches[i]).collect(),
    })
}
