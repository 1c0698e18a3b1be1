//! Local intensity order pattern descriptor.
//!
//! A keypoint's measurement region (radius_multiplier * sigma) is resampled
//! to a fixed square patch and masked to the inscribed circle. Pixels are
//! ranked by intensity and split into B equal-population ordinal bins; each
//! pixel then contributes an indicator over the N! orderings of its N circle
//! neighbours, pooled per bin and concatenated into a B * N! vector.
//!
//! Two implementation rules keep the descriptor exactly order-based:
//! neighbour samples interpolate a rank-transformed copy of the patch (so
//! any strictly monotone intensity change leaves every comparison bitwise
//! identical), and the first neighbour direction follows the ray from the
//! patch centre through the pixel (so the sampling pattern rotates with the
//! patch). The centre pixel has no such ray and is skipped.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::filters::gaussian_blur;
use crate::image::GrayImage;
use crate::scalespace::Keypoint;

/// Descriptor configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiopParams {
    /// Neighbours sampled per pixel (N).
    pub neighbors: usize,
    /// Ordinal bins (B).
    pub bins: usize,
    /// Side length of the resampled square patch; must be odd.
    pub patch_diameter: usize,
    /// Measurement region radius as a multiple of the keypoint sigma.
    pub radius_multiplier: f64,
    /// Neighbour sampling circle radius, in patch pixels.
    pub neighbor_radius: f64,
    /// Gaussian smoothing applied to the patch before ordering.
    pub smoothing_sigma: f64,
}

impl Default for LiopParams {
    fn default() -> Self {
        Self {
            neighbors: 4,
            bins: 6,
            patch_diameter: 41,
            radius_multiplier: 6.0,
            neighbor_radius: 3.0,
            smoothing_sigma: 1.2,
        }
    }
}

impl LiopParams {
    /// Descriptor length B * N!.
    pub fn descriptor_len(&self) -> usize {
        self.bins * factorial(self.neighbors)
    }

    fn validate(&self) -> Result<(), LiopError> {
        if self.neighbors < 2 || self.neighbors > 8 {
            return Err(LiopError::InvalidParams("neighbors must be in 2..=8"));
        }
        if self.bins < 1 {
            return Err(LiopError::InvalidParams("bins must be >= 1"));
        }
        if self.patch_diameter < 9 || self.patch_diameter % 2 == 0 {
            return Err(LiopError::InvalidParams("patch_diameter must be odd and >= 9"));
        }
        if !(self.neighbor_radius > 0.0) || !(self.radius_multiplier > 0.0) {
            return Err(LiopError::InvalidParams("radii must be > 0"));
        }
        Ok(())
    }
}

/// Fixed-length normalized descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct LiopDescriptor {
    /// B * N! non-negative entries with unit L2 norm.
    pub values: Vec<f32>,
    /// Index of the keypoint this descriptor belongs to (caller-assigned).
    pub keypoint_ref: u32,
}

/// Pixel-level assignments behind a descriptor, exposed for validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LiopAssignments {
    /// (patch pixel linear index, ordinal bin) for every circle pixel.
    pub bins: Vec<(u32, u8)>,
    /// (patch pixel linear index, permutation code) for contributing pixels.
    pub permutations: Vec<(u32, u32)>,
}

/// Descriptor computation errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LiopError {
    InvalidParams(&'static str),
    /// Measurement region exceeds the image; the keypoint should be skipped.
    OutOfBounds,
    /// All patch intensities equal after smoothing; no ordering exists.
    DegeneratePatch,
}

impl fmt::Display for LiopError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LiopError::InvalidParams(msg) => write!(f, "invalid LIOP parameters: {msg}"),
            LiopError::OutOfBounds => write!(f, "measurement region exceeds image bounds"),
            LiopError::DegeneratePatch => write!(f, "patch has no intensity variation"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LiopError {}

fn factorial(n: usize) -> usize {
    (1..=n).product::<usize>().max(1)
}

/// Resamples the keypoint's measurement region to a normalized patch.
///
/// The region must lie fully inside the image. The patch is lightly smoothed
/// before any ordering happens downstream.
pub fn sample_patch(
    img: &GrayImage,
    kp: &Keypoint,
    params: &LiopParams,
) -> Result<GrayImage, LiopError> {
    params.validate()?;
    let region_radius = params.radius_multiplier * kp.sigma;
    let (w, h) = (img.width() as f64, img.height() as f64);
    if kp.x - region_radius < 0.0
        || kp.y - region_radius < 0.0
        || kp.x + region_radius > w - 1.0
        || kp.y + region_radius > h - 1.0
    {
        return Err(LiopError::OutOfBounds);
    }
    let d = params.patch_diameter;
    let c = (d as f64 - 1.0) * 0.5;
    let scale = region_radius / c;
    let patch = GrayImage::from_fn(d, d, |i, j| {
        let u = kp.x + (i as f64 - c) * scale;
        let v = kp.y + (j as f64 - c) * scale;
        img.sample_bilinear(u, v) as f32
    });
    Ok(gaussian_blur(&patch, params.smoothing_sigma))
}

/// Ranks `values` ascending with ties broken by original index.
///
/// Returns rank per element; strictly monotone transforms of the values
/// produce identical ranks.
fn stable_ranks(values: &[(u32, f32)]) -> Vec<(u32, u32)> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].1.total_cmp(&values[b].1).then(a.cmp(&b)));
    let mut ranks = vec![(0u32, 0u32); values.len()];
    for (rank, &pos) in order.iter().enumerate() {
        ranks[pos] = (values[pos].0, rank as u32);
    }
    ranks
}

/// Lehmer code of the stable-sort permutation of `values`, in [0, N!).
fn permutation_code(values: &[f64]) -> u32 {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut code = 0u32;
    for i in 0..n {
        let mut smaller_later = 0u32;
        for j in i + 1..n {
            if order[j] < order[i] {
                smaller_later += 1;
            }
        }
        code = code * (n - i) as u32 + smaller_later;
    }
    code
}

/// Neighbour direction table: unit rotations by 2 pi k / N with quarter-turn
/// entries snapped exact so axis-aligned geometry stays symmetric.
fn rotation_table(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let angle = core::f64::consts::TAU * k as f64 / n as f64;
            let (mut s, mut c) = angle.sin_cos();
            for v in [&mut s, &mut c] {
                if v.abs() < 1e-15 {
                    *v = 0.0;
                } else if (v.abs() - 1.0).abs() < 1e-15 {
                    *v = v.signum();
                }
            }
            (c, s)
        })
        .collect()
}

/// Computes the per-pixel ordinal bins and neighbour-order permutations.
pub fn liop_assignments(
    patch: &GrayImage,
    params: &LiopParams,
) -> Result<LiopAssignments, LiopError> {
    params.validate()?;
    let d = params.patch_diameter;
    if patch.width() != d || patch.height() != d {
        return Err(LiopError::InvalidParams("patch does not match patch_diameter"));
    }
    let c = (d as f64 - 1.0) * 0.5;
    let circle_radius = c;

    // Circle-interior pixels, ranked for binning.
    let mut circle: Vec<(u32, f32)> = Vec::new();
    for j in 0..d {
        for i in 0..d {
            let dx = i as f64 - c;
            let dy = j as f64 - c;
            if dx * dx + dy * dy <= circle_radius * circle_radius {
                circle.push(((j * d + i) as u32, patch.get(i, j)));
            }
        }
    }
    let (lo, hi) = circle
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &(_, v)| {
            (lo.min(v), hi.max(v))
        });
    if !(hi - lo > 1e-12) {
        return Err(LiopError::DegeneratePatch);
    }

    let count = circle.len();
    let bins = stable_ranks(&circle)
        .into_iter()
        .map(|(idx, rank)| {
            let bin = (rank as usize * params.bins) / count;
            (idx, bin.min(params.bins - 1) as u8)
        })
        .collect::<Vec<_>>();

    // Rank-transform the whole square so neighbour comparisons depend only
    // on intensity order.
    let all: Vec<(u32, f32)> = patch
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as u32, v))
        .collect();
    let mut rank_img = GrayImage::zeros(d, d);
    for (idx, rank) in stable_ranks(&all) {
        rank_img.data_mut()[idx as usize] = rank as f32;
    }

    let rot = rotation_table(params.neighbors);
    let max_r = circle_radius - params.neighbor_radius;
    let mut permutations = Vec::new();
    let mut samples = vec![0.0f64; params.neighbors];
    for j in 0..d {
        for i in 0..d {
            let dx = i as f64 - c;
            let dy = j as f64 - c;
            let r2 = dx * dx + dy * dy;
            if r2 <= 0.0 || r2 > max_r * max_r {
                continue;
            }
            let r = r2.sqrt();
            let (ux, uy) = (dx / r, dy / r);
            for (k, &(cos_k, sin_k)) in rot.iter().enumerate() {
                let ox = params.neighbor_radius * (cos_k * ux - sin_k * uy);
                let oy = params.neighbor_radius * (sin_k * ux + cos_k * uy);
                samples[k] = rank_img.sample_bilinear(i as f64 + ox, j as f64 + oy);
            }
            permutations.push(((j * d + i) as u32, permutation_code(&samples)));
        }
    }

    Ok(LiopAssignments { bins, permutations })
}

/// Computes the LIOP descriptor of a normalized patch.
pub fn compute_liop(patch: &GrayImage, params: &LiopParams) -> Result<LiopDescriptor, LiopError> {
    let assignments = liop_assignments(patch, params)?;
    let nfact = factorial(params.neighbors);
    let mut bin_of = vec![u8::MAX; patch.data().len()];
    for &(idx, bin) in &assignments.bins {
        bin_of[idx as usize] = bin;
    }
    let mut values = vec![0.0f32; params.bins * nfact];
    for &(idx, code) in &assignments.permutations {
        let bin = bin_of[idx as usize];
        debug_assert!(bin != u8::MAX, "contributing pixel outside the circle");
        values[bin as usize * nfact + code as usize] += 1.0;
    }
    let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(LiopError::DegeneratePatch);
    }
    let inv = (1.0 / norm) as f32;
    for v in &mut values {
        *v *= inv;
    }
    Ok(LiopDescriptor {
        values,
        keypoint_ref: 0,
    })
}
