//! Robust rotation averaging over the pose graph.
//!
//! Absolute world-to-camera orientations are solved simultaneously from the
//! verified pairwise relative rotations. Initialization composes rotations
//! along a maximum-weight spanning tree (weighted by edge inlier counts);
//! refinement is iteratively reweighted least squares in the tangent space:
//! each outer step maps the per-edge residual log(R_j^T R_ij R_i) into the
//! Lie algebra, solves the weighted graph-Laplacian system for per-node
//! increments (conjugate gradients with Jacobi preconditioning), retracts
//! through the exponential map and re-orthonormalizes. L1 behaviour comes
//! from weights 1/max(angle, eps); near-pi residuals get the epsilon floor
//! weight instead, where the log map is unreliable. A step is only applied
//! if it does not increase the weighted objective (halving otherwise), so
//! the reported objective trace is non-increasing.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Rotation3, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::geom::nearest_rotation;
use crate::matching::PoseGraphEdge;

/// Cameras as nodes, verified relative rotations as edges.
#[derive(Debug, Clone)]
pub struct PoseGraph {
    nodes: Vec<usize>,
    edges: Vec<PoseGraphEdge>,
}

/// Absolute orientation per camera, world-to-camera, with a fixed gauge.
#[derive(Debug, Clone)]
pub struct RotationSet {
    pub rotations: BTreeMap<usize, Rotation3<f64>>,
    /// Camera whose rotation is pinned to the identity.
    pub gauge: usize,
}

/// Weighting mode for the iterative refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// 1 / max(residual, eps): robust L1 behaviour.
    L1,
    /// Unit weights: plain least squares, kept as a comparison baseline.
    Constant,
}

/// Solver configuration.
#[derive(Debug, Clone, Copy)]
pub struct L1raParams {
    pub max_outer: usize,
    /// Convergence threshold on the largest node update, radians.
    pub tol_rad: f64,
    /// IRLS residual floor.
    pub irls_epsilon: f64,
    pub weight_mode: WeightMode,
}

impl Default for L1raParams {
    fn default() -> Self {
        Self {
            max_outer: 100,
            tol_rad: 1e-6,
            irls_epsilon: 1e-5,
            weight_mode: WeightMode::L1,
        }
    }
}

/// Residual angles above this get the floor weight; the log map is
/// ill-conditioned approaching pi.
const NEAR_PI_GUARD: f64 = 170.0 * core::f64::consts::PI / 180.0;

/// Final per-edge diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeResidual {
    pub cam_i: usize,
    pub cam_j: usize,
    /// Geodesic residual of the edge under the solved rotations, radians.
    pub residual_rad: f64,
    /// IRLS weight at the last iteration.
    pub weight: f64,
}

/// Rotation averaging output.
#[derive(Debug, Clone)]
pub struct L1raSolution {
    pub rotations: RotationSet,
    pub residuals: Vec<EdgeResidual>,
    /// False when the iteration cap was hit before the update tolerance.
    pub converged: bool,
    /// Outer iterations that applied an update.
    pub iterations: usize,
    /// Weighted objective at the start of each outer iteration.
    pub objective_trace: Vec<f64>,
}

/// Pose-graph construction and solver errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RotationError {
    SelfLoop(usize),
    DuplicateEdge(usize, usize),
    UnknownNode(usize),
    DisconnectedGraph,
}

impl fmt::Display for RotationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RotationError::SelfLoop(n) => write!(f, "self-loop edge on camera {n}"),
            RotationError::DuplicateEdge(i, j) => {
                write!(f, "duplicate edge between cameras {i} and {j}")
            }
            RotationError::UnknownNode(n) => write!(f, "edge references unknown camera {n}"),
            RotationError::DisconnectedGraph => write!(f, "pose graph is not connected"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for RotationError {}

impl PoseGraph {
    /// Builds a graph, rejecting self-loops, duplicate pairs and edges that
    /// reference cameras outside `nodes`.
    pub fn new(mut nodes: Vec<usize>, edges: Vec<PoseGraphEdge>) -> Result<Self, RotationError> {
        nodes.sort_unstable();
        nodes.dedup();
        let mut seen: BTreeMap<(usize, usize), ()> = BTreeMap::new();
        for e in &edges {
            if e.cam_i == e.cam_j {
                return Err(RotationError::SelfLoop(e.cam_i));
            }
            for cam in [e.cam_i, e.cam_j] {
                if nodes.binary_search(&cam).is_err() {
                    return Err(RotationError::UnknownNode(cam));
                }
            }
            let key = (e.cam_i.min(e.cam_j), e.cam_i.max(e.cam_j));
            if seen.insert(key, ()).is_some() {
                return Err(RotationError::DuplicateEdge(key.0, key.1));
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[PoseGraphEdge] {
        &self.edges
    }

    fn components(&self) -> Vec<Vec<usize>> {
        let index: BTreeMap<usize, usize> =
            self.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (i, j) = (index[&e.cam_i], index[&e.cam_j]);
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut components = Vec::new();
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(i) = stack.pop() {
                comp.push(self.nodes[i]);
                for &j in &adjacency[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    /// Restriction of the graph to its largest connected component
    /// (ties broken toward the component with the smallest camera id).
    pub fn largest_component(&self) -> PoseGraph {
        let mut components = self.components();
        components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        let Some(keep) = components.first() else {
            return self.clone();
        };
        let edges = self
            .edges
            .iter()
            .filter(|e| keep.binary_search(&e.cam_i).is_ok())
            .cloned()
            .collect();
        PoseGraph {
            nodes: keep.clone(),
            edges,
        }
    }
}

/// Maximum-weight spanning tree of the pose graph.
#[derive(Debug, Clone)]
pub struct SpanningTree {
    /// Highest-degree camera (smallest id on ties); the solve gauge.
    pub root: usize,
    /// (parent, child, edge index) in the order Prim's algorithm grew the
    /// tree, preferring edges with more inliers.
    pub edges: Vec<(usize, usize, usize)>,
}

/// Grows the maximum-weight spanning tree (weights are inlier counts) from
/// the highest-degree camera.
pub fn spanning_tree(graph: &PoseGraph) -> Result<SpanningTree, RotationError> {
    if !graph.is_connected() {
        return Err(RotationError::DisconnectedGraph);
    }
    let nodes = graph.nodes();
    let mut degree: BTreeMap<usize, usize> = nodes.iter().map(|&n| (n, 0)).collect();
    for e in graph.edges() {
        *degree.get_mut(&e.cam_i).unwrap() += 1;
        *degree.get_mut(&e.cam_j).unwrap() += 1;
    }
    let root = nodes
        .iter()
        .copied()
        .max_by(|a, b| degree[a].cmp(&degree[b]).then(b.cmp(a)))
        .expect("graph has at least one node");

    let mut in_tree: alloc::collections::BTreeSet<usize> = [root].into_iter().collect();
    let mut tree_edges = Vec::with_capacity(nodes.len().saturating_sub(1));
    // Prim's algorithm with a deterministic scan per round.
    while in_tree.len() < nodes.len() {
        let mut best: Option<(usize, usize, usize, usize)> = None; // inliers, parent, child, idx
        for (idx, e) in graph.edges().iter().enumerate() {
            let has_i = in_tree.contains(&e.cam_i);
            let has_j = in_tree.contains(&e.cam_j);
            if has_i == has_j {
                continue;
            }
            let (parent, child) = if has_i {
                (e.cam_i, e.cam_j)
            } else {
                (e.cam_j, e.cam_i)
            };
            let better = match best {
                None => true,
                Some((bw, bp, bc, _)) => (e.inlier_count, core::cmp::Reverse((parent, child)))
                    > (bw, core::cmp::Reverse((bp, bc))),
            };
            if better {
                best = Some((e.inlier_count, parent, child, idx));
            }
        }
        let (_, parent, child, idx) = best.ok_or(RotationError::DisconnectedGraph)?;
        in_tree.insert(child);
        tree_edges.push((parent, child, idx));
    }
    Ok(SpanningTree {
        root,
        edges: tree_edges,
    })
}

/// Initializes absolute rotations along the maximum-weight spanning tree.
///
/// The root gets the identity; each child is the composition of its parent
/// with the edge rotation.
pub fn spanning_tree_init(graph: &PoseGraph) -> Result<RotationSet, RotationError> {
    let tree = spanning_tree(graph)?;
    let mut rotations: BTreeMap<usize, Rotation3<f64>> = BTreeMap::new();
    rotations.insert(tree.root, Rotation3::identity());
    for &(parent, child, idx) in &tree.edges {
        let edge = &graph.edges()[idx];
        let parent_rot = rotations[&parent];
        // Edge stores R_j relative to R_i: R_j = R_ij R_i.
        let child_rot = if parent == edge.cam_i {
            edge.relative_rotation * parent_rot
        } else {
            edge.relative_rotation.inverse() * parent_rot
        };
        rotations.insert(child, child_rot);
    }
    Ok(RotationSet {
        rotations,
        gauge: tree.root,
    })
}

/// Per-edge tangent residual log(R_j^T R_ij R_i); zero for consistent edges.
fn edge_residual(edge: &PoseGraphEdge, rotations: &BTreeMap<usize, Rotation3<f64>>) -> Vector3<f64> {
    let r_i = &rotations[&edge.cam_i];
    let r_j = &rotations[&edge.cam_j];
    (r_j.transpose() * edge.relative_rotation * r_i).scaled_axis()
}

fn irls_weight(angle: f64, params: &L1raParams) -> f64 {
    match params.weight_mode {
        WeightMode::Constant => 1.0,
        WeightMode::L1 => {
            if angle > NEAR_PI_GUARD {
                params.irls_epsilon
            } else {
                1.0 / angle.max(params.irls_epsilon)
            }
        }
    }
}

/// Preconditioned conjugate gradients on the reduced weighted Laplacian.
///
/// `edges` hold (i, j, w) in reduced indices (gauge removed, marked by
/// usize::MAX); `diag` is the Laplacian diagonal.
fn solve_laplacian_cg(
    n: usize,
    edges: &[(usize, usize, f64)],
    diag: &[f64],
    rhs: &[f64],
) -> Vec<f64> {
    let apply = |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = diag[i] * x[i];
        }
        for &(i, j, w) in edges {
            if i != usize::MAX && j != usize::MAX {
                out[i] -= w * x[j];
                out[j] -= w * x[i];
            }
        }
    };
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let rhs_norm: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        return x;
    }
    let tol = 1e-13 * rhs_norm;
    let mut ap = vec![0.0; n];
    for _ in 0..(10 * n + 100) {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm < tol {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

/// Solves all absolute camera orientations from pairwise relative rotations.
///
/// Returns the refined rotations together with per-edge residual
/// diagnostics. A hit iteration cap is reported through `converged`, not an
/// error; the result is still usable.
pub fn l1ra_solve(
    graph: &PoseGraph,
    init: &RotationSet,
    params: &L1raParams,
) -> Result<L1raSolution, RotationError> {
    if !graph.is_connected() {
        return Err(RotationError::DisconnectedGraph);
    }
    for node in graph.nodes() {
        if !init.rotations.contains_key(node) {
            return Err(RotationError::UnknownNode(*node));
        }
    }
    let nodes = graph.nodes();
    let index: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let gauge_reduced = index[&init.gauge];
    // Reduced index: gauge maps to usize::MAX (fixed at zero increment).
    let reduced: Vec<usize> = (0..nodes.len())
        .map(|i| {
            use core::cmp::Ordering::*;
            match i.cmp(&gauge_reduced) {
                Less => i,
                Equal => usize::MAX,
                Greater => i - 1,
            }
        })
        .collect();
    let n_free = nodes.len() - 1;

    let mut rotations = init.rotations.clone();
    rotations.insert(init.gauge, Rotation3::identity());

    let objective = |rots: &BTreeMap<usize, Rotation3<f64>>, weights: &[f64]| -> f64 {
        graph
            .edges()
            .iter()
            .zip(weights)
            .map(|(e, w)| w * edge_residual(e, rots).norm_squared())
            .sum()
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;
    let mut weights: Vec<f64> = vec![1.0; graph.edges().len()];

    for _outer in 0..params.max_outer {
        // Residuals and weights for this iteration.
        let residuals: Vec<Vector3<f64>> = graph
            .edges()
            .iter()
            .map(|e| edge_residual(e, &rotations))
            .collect();
        for (w, r) in weights.iter_mut().zip(&residuals) {
            *w = irls_weight(r.norm(), params);
        }
        let current = objective(&rotations, &weights);
        trace.push(current);

        if n_free == 0 {
            converged = true;
            break;
        }

        // Weighted Laplacian normal equations, gauge removed.
        let mut diag = vec![0.0f64; n_free];
        let mut lap_edges: Vec<(usize, usize, f64)> = Vec::with_capacity(graph.edges().len());
        let mut rhs = [vec![0.0f64; n_free], vec![0.0; n_free], vec![0.0; n_free]];
        for (e, (res, &w)) in graph.edges().iter().zip(residuals.iter().zip(&weights)) {
            let ri = reduced[index[&e.cam_i]];
            let rj = reduced[index[&e.cam_j]];
            if ri != usize::MAX {
                diag[ri] += w;
            }
            if rj != usize::MAX {
                diag[rj] += w;
            }
            lap_edges.push((ri, rj, w));
            // Gradient of sum w |omega + d_i - d_j|^2.
            for axis in 0..3 {
                if ri != usize::MAX {
                    rhs[axis][ri] -= w * res[axis];
                }
                if rj != usize::MAX {
                    rhs[axis][rj] += w * res[axis];
                }
            }
        }
        let solved: [Vec<f64>; 3] = [
            solve_laplacian_cg(n_free, &lap_edges, &diag, &rhs[0]),
            solve_laplacian_cg(n_free, &lap_edges, &diag, &rhs[1]),
            solve_laplacian_cg(n_free, &lap_edges, &diag, &rhs[2]),
        ];

        let mut deltas: Vec<Vector3<f64>> = (0..nodes.len())
            .map(|i| {
                let r = reduced[i];
                if r == usize::MAX {
                    Vector3::zeros()
                } else {
                    Vector3::new(solved[0][r], solved[1][r], solved[2][r])
                }
            })
            .collect();

        // Retract, halving the step if the weighted objective would grow.
        let mut applied = None;
        for _ in 0..8 {
            let mut candidate = rotations.clone();
            for (i, &node) in nodes.iter().enumerate() {
                if node == init.gauge {
                    continue;
                }
                let r = candidate[&node] * Rotation3::new(deltas[i]);
                candidate.insert(node, nearest_rotation(r.matrix()));
            }
            if objective(&candidate, &weights) <= current * (1.0 + 1e-12) {
                applied = Some(candidate);
                break;
            }
            for d in &mut deltas {
                *d *= 0.5;
            }
        }
        let Some(candidate) = applied else {
            // No descent step exists at this linearization; stop.
            converged = true;
            break;
        };
        rotations = candidate;
        iterations += 1;

        let max_update = deltas.iter().map(|d| d.norm()).fold(0.0f64, f64::max);
        if max_update < params.tol_rad {
            converged = true;
            break;
        }
    }

    let residual_report = graph
        .edges()
        .iter()
        .map(|e| {
            let angle = edge_residual(e, &rotations).norm();
            EdgeResidual {
                cam_i: e.cam_i,
                cam_j: e.cam_j,
                residual_rad: angle,
                weight: irls_weight(angle, params),
            }
        })
        .collect();

    Ok(L1raSolution {
        rotations: RotationSet {
            rotations,
            gauge: init.gauge,
        },
        residuals: residual_report,
        converged,
        iterations,
        objective_trace: trace,
    })
}
