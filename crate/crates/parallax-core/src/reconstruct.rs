//! Track building, camera position recovery and sparse triangulation.
//!
//! Tracks connect matched keypoints across images with union-find; tracks
//! observing the same image twice are inconsistent and dropped. Camera
//! centers come from a linear least-squares problem over the pairwise
//! baseline directions (rotated into the world frame by the solved
//! rotations): for every edge the recovered baseline must be parallel to the
//! measured direction. The gauge pins the tree root to the origin and the
//! scale pins unit distance along the tree's first edge. Points are
//! triangulated by multi-view DLT and kept only when they pass cheirality
//! and reprojection checks in every view.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector, Point2, Rotation3, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::camera::CameraIntrinsics;
use crate::matching::Match;
use crate::rotation::{spanning_tree, PoseGraph, RotationError, RotationSet};

/// A camera with a solved orientation and recovered center.
#[derive(Debug, Clone, Copy)]
pub struct CameraPose {
    pub cam: usize,
    /// World-to-camera rotation.
    pub rotation: Rotation3<f64>,
    /// Camera center in world coordinates (arbitrary global scale).
    pub center: Vector3<f64>,
}

impl CameraPose {
    /// Transforms a world point into this camera's frame.
    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.center)
    }
}

/// One multi-view observation set: (camera id, keypoint index).
pub type Track = Vec<(usize, u32)>;

/// A triangulated point with its supporting track.
#[derive(Debug, Clone)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    /// Mean reprojection error over the track, pixels.
    pub mean_reproj_px: f64,
    pub track: Track,
    /// Optional RGB in [0, 1], sampled from the source images.
    pub color: Option<[f32; 3]>,
}

/// Sparse reconstruction output.
#[derive(Debug, Clone, Default)]
pub struct SparseCloud {
    pub points: Vec<CloudPoint>,
}

impl SparseCloud {
    /// Axis-aligned bounding box, `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut points = self.points.iter().map(|p| p.position);
        let first = points.next()?;
        let mut lo = first;
        let mut hi = first;
        for p in points {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        Some((lo, hi))
    }
}

/// Reconstruction errors.
#[derive(Debug, Clone, PartialEq)]
pub enum ReconstructError {
    /// The direction constraint system is rank deficient; positions of the
    /// listed cameras are not determined (collinear configuration).
    CollinearDegenerate { cameras: Vec<usize> },
    Rotation(RotationError),
    /// A camera in the graph has no solved rotation.
    MissingRotation(usize),
}

impl fmt::Display for ReconstructError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReconstructError::CollinearDegenerate { cameras } => {
                write!(f, "camera positions underdetermined, offenders: {cameras:?}")
            }
            ReconstructError::Rotation(e) => write!(f, "{e}"),
            ReconstructError::MissingRotation(c) => {
                write!(f, "no solved rotation for camera {c}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ReconstructError {}

impl From<RotationError> for ReconstructError {
    fn from(e: RotationError) -> Self {
        ReconstructError::Rotation(e)
    }
}

/// Per-point triangulation rejections.
#[derive(Debug, Clone, PartialEq)]
pub enum TriangulateError {
    /// Fewer than two observations.
    TrackTooShort(usize),
    /// No pose available for a referenced camera.
    MissingPose(usize),
    /// All viewing rays are within the minimum parallax angle.
    DegenerateRays,
    /// Negative or zero depth in one of the views.
    BehindCamera(usize),
    /// Reprojection error above the limit in one of the views.
    ExcessiveReprojection { cam: usize, error_px: f64 },
    /// The homogeneous solution is at infinity.
    SolveFailed,
}

impl fmt::Display for TriangulateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriangulateError::TrackTooShort(n) => write!(f, "track has {n} observations, need 2"),
            TriangulateError::MissingPose(c) => write!(f, "no pose for camera {c}"),
            TriangulateError::DegenerateRays => write!(f, "parallax below minimum"),
            TriangulateError::BehindCamera(c) => write!(f, "point behind camera {c}"),
            TriangulateError::ExcessiveReprojection { cam, error_px } => {
                write!(f, "reprojection {error_px:.2} px in camera {cam}")
            }
            TriangulateError::SolveFailed => write!(f, "triangulation system is singular"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TriangulateError {}

/// Triangulation acceptance thresholds.
#[derive(Debug, Clone, Copy)]
pub struct TriangulationParams {
    pub max_reproj_px: f64,
    pub min_parallax_deg: f64,
}

impl Default for TriangulationParams {
    fn default() -> Self {
        Self {
            max_reproj_px: 4.0,
            min_parallax_deg: 1.0,
        }
    }
}

/// Connects pairwise inlier matches into multi-view tracks.
///
/// Tracks that would contain two keypoints of the same image are dropped as
/// inconsistent. Output order is deterministic (sorted by first
/// observation).
pub fn build_tracks(pair_matches: &[((usize, usize), Vec<Match>)]) -> Vec<Track> {
    // Dense ids for every observation node.
    let mut ids: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for ((cam_a, cam_b), matches) in pair_matches {
        for m in matches {
            let next = ids.len();
            ids.entry((*cam_a, m.index_a)).or_insert(next);
            let next = ids.len();
            ids.entry((*cam_b, m.index_b)).or_insert(next);
        }
    }
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for ((cam_a, cam_b), matches) in pair_matches {
        for m in matches {
            let a = ids[&(*cam_a, m.index_a)];
            let b = ids[&(*cam_b, m.index_b)];
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[rb.max(ra)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, Track> = BTreeMap::new();
    for (&(cam, kp), &id) in &ids {
        let root = find(&mut parent, id);
        groups.entry(root).or_default().push((cam, kp));
    }
    groups
        .into_values()
        .filter(|track| {
            track.len() >= 2 && track.windows(2).all(|w| w[0].0 != w[1].0)
        })
        .collect()
}

/// Recovers camera centers from pairwise baseline directions.
///
/// Each edge constrains (c_j - c_i) to be parallel to the measured direction
/// rotated into the world frame; the tree root sits at the origin and the
/// tree's first edge has unit length. Positions are the least-squares
/// solution; a rank-deficient system reports the cameras whose positions
/// stay undetermined.
pub fn recover_positions(
    graph: &PoseGraph,
    rotations: &RotationSet,
) -> Result<Vec<CameraPose>, ReconstructError> {
    let tree = spanning_tree(graph)?;
    let nodes = graph.nodes();
    for node in nodes {
        if !rotations.rotations.contains_key(node) {
            return Err(ReconstructError::MissingRotation(*node));
        }
    }
    if nodes.len() == 1 {
        return Ok(vec![CameraPose {
            cam: nodes[0],
            rotation: rotations.rotations[&nodes[0]],
            center: Vector3::zeros(),
        }]);
    }

    let index: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let root = tree.root;
    // Reduced unknown layout: 3 coordinates per non-root camera.
    let col_of = |cam: usize| -> Option<usize> {
        let i = index[&cam];
        let r = index[&root];
        match i.cmp(&r) {
            core::cmp::Ordering::Less => Some(3 * i),
            core::cmp::Ordering::Equal => None,
            core::cmp::Ordering::Greater => Some(3 * (i - 1)),
        }
    };
    let n_unknowns = 3 * (nodes.len() - 1);
    let n_rows = 3 * graph.edges().len() + 1;
    let mut a = DMatrix::<f64>::zeros(n_rows, n_unknowns);
    let mut b = DVector::<f64>::zeros(n_rows);

    // World-frame baseline direction of an edge: c_j - c_i is parallel to
    // -R_j^T t_ij.
    let world_dir = |e: &crate::matching::PoseGraphEdge| -> Vector3<f64> {
        (-(rotations.rotations[&e.cam_j].transpose() * e.relative_direction.into_inner()))
            .normalize()
    };

    for (row_block, e) in graph.edges().iter().enumerate() {
        let d = world_dir(e);
        let cross = Matrix3_cross(&d);
        // cross * (c_j - c_i) = 0
        for r in 0..3 {
            let row = 3 * row_block + r;
            for c in 0..3 {
                if let Some(cj) = col_of(e.cam_j) {
                    a[(row, cj + c)] += cross[(r, c)];
                }
                if let Some(ci) = col_of(e.cam_i) {
                    a[(row, ci + c)] -= cross[(r, c)];
                }
            }
        }
    }
    // Scale: unit distance along the tree's first edge.
    {
        let (_, _, idx) = tree.edges[0];
        let e = &graph.edges()[idx];
        let d = world_dir(e);
        let row = n_rows - 1;
        for c in 0..3 {
            if let Some(cj) = col_of(e.cam_j) {
                a[(row, cj + c)] += d[c];
            }
            if let Some(ci) = col_of(e.cam_i) {
                a[(row, ci + c)] -= d[c];
            }
        }
        b[row] = 1.0;
    }

    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank_tol = max_sv * 1e-10;
    if svd.singular_values.iter().any(|&s| s < rank_tol) {
        // Identify cameras touched by the null space.
        let v_t = svd.v_t.as_ref().expect("svd v_t");
        let mut offenders = Vec::new();
        for (si, &s) in svd.singular_values.iter().enumerate() {
            if s >= rank_tol {
                continue;
            }
            let null = v_t.row(si);
            let mut norms: Vec<(usize, f64)> = Vec::new();
            for &cam in nodes {
                if let Some(col) = col_of(cam) {
                    let n = (null[col].powi(2) + null[col + 1].powi(2) + null[col + 2].powi(2))
                        .sqrt();
                    norms.push((cam, n));
                }
            }
            let max_n = norms.iter().fold(0.0f64, |m, &(_, n)| m.max(n));
            for (cam, n) in norms {
                if n > 0.5 * max_n && !offenders.contains(&cam) {
                    offenders.push(cam);
                }
            }
        }
        offenders.sort_unstable();
        return Err(ReconstructError::CollinearDegenerate { cameras: offenders });
    }
    let x = svd
        .solve(&b, rank_tol)
        .map_err(|_| ReconstructError::CollinearDegenerate {
            cameras: nodes.to_vec(),
        })?;

    Ok(nodes
        .iter()
        .map(|&cam| {
            let center = match col_of(cam) {
                None => Vector3::zeros(),
                Some(col) => Vector3::new(x[col], x[col + 1], x[col + 2]),
            };
            CameraPose {
                cam,
                rotation: rotations.rotations[&cam],
                center,
            }
        })
        .collect())
}

#[allow(non_snake_case)]
fn Matrix3_cross(v: &Vector3<f64>) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Multi-view linear triangulation of one track with acceptance checks.
///
/// `observations` pair camera ids with pixel positions. The point must show
/// enough parallax, lie in front of every camera and reproject within the
/// limit in every view.
pub fn triangulate(
    observations: &[(usize, Point2<f64>)],
    poses: &BTreeMap<usize, CameraPose>,
    k: &CameraIntrinsics,
    params: &TriangulationParams,
) -> Result<(Vector3<f64>, f64), TriangulateError> {
    if observations.len() < 2 {
        return Err(TriangulateError::TrackTooShort(observations.len()));
    }
    let mut rays: Vec<Vector3<f64>> = Vec::with_capacity(observations.len());
    for (cam, px) in observations {
        let pose = poses.get(cam).ok_or(TriangulateError::MissingPose(*cam))?;
        let n = k.normalize(*px);
        rays.push((pose.rotation.transpose() * Vector3::new(n.x, n.y, 1.0)).normalize());
    }
    let min_parallax = params.min_parallax_deg.to_radians();
    let mut max_angle = 0.0f64;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            max_angle = max_angle.max(rays[i].dot(&rays[j]).clamp(-1.0, 1.0).acos());
        }
    }
    if max_angle < min_parallax {
        return Err(TriangulateError::DegenerateRays);
    }

    // DLT over normalized projections.
    let mut a = DMatrix::<f64>::zeros(2 * observations.len(), 4);
    for (row, (cam, px)) in observations.iter().enumerate() {
        let pose = &poses[cam];
        let n = k.normalize(*px);
        let r = pose.rotation.matrix();
        let t = -(pose.rotation * pose.center);
        // P = [R | t], rows indexed 0..3.
        let p = |i: usize, j: usize| if j < 3 { r[(i, j)] } else { t[i] };
        for j in 0..4 {
            a[(2 * row, j)] = n.x * p(2, j) - p(0, j);
            a[(2 * row + 1, j)] = n.y * p(2, j) - p(1, j);
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(TriangulateError::SolveFailed)?;
    let h = v_t.row(v_t.nrows() - 1);
    if h[3].abs() < 1e-14 {
        return Err(TriangulateError::SolveFailed);
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let mut err_sum = 0.0;
    for (cam, px) in observations {
        let pose = &poses[cam];
        let p_cam = pose.world_to_camera(&point);
        if p_cam.z <= 0.0 {
            return Err(TriangulateError::BehindCamera(*cam));
        }
        let proj = k.project(&p_cam).ok_or(TriangulateError::BehindCamera(*cam))?;
        let err = ((proj.x - px.x).powi(2) + (proj.y - px.y).powi(2)).sqrt();
        if err > params.max_reproj_px {
            return Err(TriangulateError::ExcessiveReprojection {
                cam: *cam,
                error_px: err,
            });
        }
        err_sum += err;
    }
    Ok((point, err_sum / observations.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_similarity, fit_similarity};
    use crate::matching::PoseGraphEdge;
    use nalgebra::Unit;

    fn m(a: u32, b: u32) -> Match {
        Match {
            index_a: a,
            index_b: b,
            distance: 0.0,
        }
    }

    #[test]
    fn tracks_union_transitively() {
        let pairs = vec![((0usize, 1usize), vec![m(1, 2)]), ((1, 2), vec![m(2, 3)])];
        let tracks = build_tracks(&pairs);
        assert_eq!(tracks, vec![vec![(0, 1), (1, 2), (2, 3)]]);
    }

    #[test]
    fn conflicting_track_is_discarded() {
        // (0,1)-(1,2) and (1,2)-(0,5) puts two image-0 keypoints in one track.
        let pairs = vec![((0usize, 1usize), vec![m(1, 2)]), ((1, 0), vec![m(2, 5)])];
        assert!(build_tracks(&pairs).is_empty());
        // Empty input stays empty.
        assert!(build_tracks(&[]).is_empty());
    }

    fn edge_between(
        i: usize,
        j: usize,
        poses: &BTreeMap<usize, CameraPose>,
        inliers: usize,
    ) -> PoseGraphEdge {
        let (pi, pj) = (&poses[&i], &poses[&j]);
        let relative_rotation = pj.rotation * pi.rotation.transpose();
        // t_ij = R_j (c_i - c_j).
        let t = pj.rotation * (pi.center - pj.center);
        PoseGraphEdge {
            cam_i: i,
            cam_j: j,
            relative_rotation,
            relative_direction: Unit::new_normalize(t),
            inlier_count: inliers,
            inlier_matches: Vec::new(),
        }
    }

    fn rotation_set(poses: &BTreeMap<usize, CameraPose>, gauge: usize) -> RotationSet {
        RotationSet {
            rotations: poses.iter().map(|(&c, p)| (c, p.rotation)).collect(),
            gauge,
        }
    }

    #[test]
    fn two_cameras_fix_gauge_and_scale() {
        let mut poses = BTreeMap::new();
        poses.insert(
            0,
            CameraPose {
                cam: 0,
                rotation: Rotation3::identity(),
                center: Vector3::zeros(),
            },
        );
        poses.insert(
            1,
            CameraPose {
                cam: 1,
                rotation: Rotation3::identity(),
                center: Vector3::new(3.0, 0.0, 0.0),
            },
        );
        let graph = PoseGraph::new(vec![0, 1], vec![edge_between(0, 1, &poses, 50)]).unwrap();
        let recovered = recover_positions(&graph, &rotation_set(&poses, 0)).unwrap();
        assert!((recovered[0].center - Vector3::zeros()).norm() < 1e-12);
        assert!((recovered[1].center - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-10);
    }

    fn ring_poses(n: usize, radius: f64) -> BTreeMap<usize, CameraPose> {
        (0..n)
            .map(|i| {
                let angle = core::f64::consts::TAU * i as f64 / n as f64;
                let center = Vector3::new(radius * angle.cos(), radius * angle.sin(), 0.0);
                // Look at the origin: z axis toward -center.
                let rotation = Rotation3::look_at_rh(&(-center), &Vector3::z());
                (i, CameraPose { cam: i, rotation, center })
            })
            .collect()
    }

    #[test]
    fn ring_positions_recovered_up_to_similarity() {
        let n = 6;
        let poses = ring_poses(n, 4.0);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push(edge_between(i, j, &poses, 40 + i + j));
            }
        }
        let graph = PoseGraph::new((0..n).collect(), edges).unwrap();
        let recovered = recover_positions(&graph, &rotation_set(&poses, 0)).unwrap();
        let est: Vec<Vector3<f64>> = recovered.iter().map(|p| p.center).collect();
        let truth: Vec<Vector3<f64>> = (0..n).map(|i| poses[&i].center).collect();
        let sim = fit_similarity(&est, &truth);
        for (e, t) in est.iter().zip(&truth) {
            assert!((apply_similarity(&sim, e) - t).norm() < 1e-6);
        }
    }

    #[test]
    fn collinear_cameras_are_degenerate() {
        // Three cameras on the x axis, all baselines along x.
        let mut poses = BTreeMap::new();
        for i in 0..3usize {
            poses.insert(
                i,
                CameraPose {
                    cam: i,
                    rotation: Rotation3::identity(),
                    center: Vector3::new(i as f64, 0.0, 0.0),
                },
            );
        }
        let mut edges = Vec::new();
        for (i, j) in [(0usize, 1usize), (1, 2), (0, 2)] {
            edges.push(edge_between(i, j, &poses, 30));
        }
        let graph = PoseGraph::new(vec![0, 1, 2], edges).unwrap();
        match recover_positions(&graph, &rotation_set(&poses, 0)) {
            Err(ReconstructError::CollinearDegenerate { cameras }) => {
                assert!(!cameras.is_empty());
            }
            other => panic!("expected CollinearDegenerate, got {other:?}"),
        }
    }

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, (320.0, 240.0), (640, 480)).unwrap()
    }

    #[test]
    fn triangulates_exact_point() {
        let poses = ring_poses(3, 5.0);
        let k = test_intrinsics();
        let point = Vector3::new(0.4, -0.3, 0.5);
        let obs: Vec<(usize, Point2<f64>)> = (0..3)
            .map(|i| {
                let p = k.project(&poses[&i].world_to_camera(&point)).unwrap();
                (i, p)
            })
            .collect();
        let (est, err) =
            triangulate(&obs, &poses, &k, &TriangulationParams::default()).unwrap();
        assert!((est - point).norm() < 1e-6, "point error {}", (est - point).norm());
        assert!(err < 1e-6);
    }

    #[test]
    fn identical_centers_are_degenerate() {
        let mut poses = BTreeMap::new();
        for i in 0..2usize {
            poses.insert(
                i,
                CameraPose {
                    cam: i,
                    rotation: Rotation3::new(Vector3::y() * (0.1 * i as f64)),
                    center: Vector3::new(1.0, 2.0, -3.0),
                },
            );
        }
        let k = test_intrinsics();
        let point = Vector3::new(1.0, 2.0, 3.0);
        let obs: Vec<(usize, Point2<f64>)> = (0..2)
            .map(|i| (i, k.project(&poses[&i].world_to_camera(&point)).unwrap()))
            .collect();
        assert_eq!(
            triangulate(&obs, &poses, &k, &TriangulationParams::default()).unwrap_err(),
            TriangulateError::DegenerateRays
        );
    }

    #[test]
    fn cheirality_rejects_points_behind_cameras() {
        let k = test_intrinsics();
        let mut poses = BTreeMap::new();
        poses.insert(0, CameraPose {
            cam: 0,
            rotation: Rotation3::identity(),
            center: Vector3::zeros(),
        });
        poses.insert(1, CameraPose {
            cam: 1,
            rotation: Rotation3::identity(),
            center: Vector3::new(1.0, 0.0, 0.0),
        });
        // Observations that intersect behind the cameras: swap the disparity
        // sign so the rays diverge in front and cross at negative depth.
        let obs = vec![
            (0usize, Point2::new(300.0, 240.0)),
            (1usize, Point2::new(420.0, 240.0)),
        ];
        match triangulate(&obs, &poses, &k, &TriangulationParams::default()) {
            Err(TriangulateError::BehindCamera(_)) => {}
            other => panic!("expected BehindCamera, got {other:?}"),
        }
    }

    #[test]
    fn short_track_rejected() {
        let poses = ring_poses(3, 5.0);
        let k = test_intrinsics();
        assert_eq!(
            triangulate(&[(0, Point2::new(1.0, 1.0))], &poses, &k, &Default::default())
                .unwrap_err(),
            TriangulateError::TrackTooShort(1)
        );
    }

    #[test]
    fn recovered_cloud_follows_similarity_gauge() {
        // Same observations, similarity-transformed poses: the triangulated
        // points must move by exactly that similarity.
        let k = test_intrinsics();
        let poses = ring_poses(4, 5.0);
        let sim = (
            2.5,
            Rotation3::new(Vector3::new(0.3, -0.2, 0.4)),
            Vector3::new(10.0, -4.0, 2.0),
        );
        let poses_t: BTreeMap<usize, CameraPose> = poses
            .iter()
            .map(|(&c, p)| {
                (
                    c,
                    CameraPose {
                        cam: c,
                        rotation: p.rotation * sim.1.transpose(),
                        center: apply_similarity(&sim, &p.center),
                    },
                )
            })
            .collect();
        let params = TriangulationParams::default();
        let points = [
            Vector3::new(0.2, 0.1, -0.4),
            Vector3::new(-0.5, 0.3, 0.2),
            Vector3::new(0.0, -0.2, 0.6),
        ];
        let mut rms = 0.0;
        for point in points {
            let obs: Vec<(usize, Point2<f64>)> = (0..4)
                .map(|i| (i, k.project(&poses[&i].world_to_camera(&point)).unwrap()))
                .collect();
            let (a, _) = triangulate(&obs, &poses, &k, &params).unwrap();
            let (b, _) = triangulate(&obs, &poses_t, &k, &params).unwrap();
            rms += (apply_similarity(&sim, &a) - b).norm_squared();
        }
        rms = (rms / points.len() as f64).sqrt();
        assert!(rms < 1e-6, "similarity gauge RMS {rms}");
    }
}
