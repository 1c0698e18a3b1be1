//! Structural similarity scoring and point-cloud view rendering.
//!
//! SSIM follows the standard sliding-window protocol: per-window means,
//! variances and covariance under an 11x11 Gaussian window (sigma 1.5),
//! stabilized by c1 = (k1 L)^2 and c2 = (k2 L)^2. The map holds one value
//! per window position fully inside the image; the reported score is its
//! arithmetic mean. A single global uniform window is available for direct
//! formula checks. All statistics are accumulated in f64 with expressions
//! arranged symmetrically, so ssim(x, x) is exactly 1 and ssim(x, y) equals
//! ssim(y, x) bitwise.
//!
//! Rendering projects a sparse cloud through a camera with z-buffered
//! splats, producing the synthetic view that gets compared against the
//! original photo.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::camera::CameraIntrinsics;
use crate::image::{to_grayscale, GrayImage};
use crate::reconstruct::{CameraPose, SparseCloud};

/// Windowing mode for SSIM statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    /// Sliding Gaussian window; the standard protocol.
    Gaussian { size: usize, sigma: f64 },
    /// One uniform window covering the whole image.
    Global,
}

/// SSIM configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range L of the samples (1 for unit-range images).
    pub dynamic_range: f64,
    pub window: Window,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            window: Window::Gaussian {
                size: 11,
                sigma: 1.5,
            },
        }
    }
}

/// Signed per-window SSIM values.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// SSIM evaluation result for one image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimResult {
    /// Arithmetic mean of the map, in [-1, 1].
    pub mean_ssim: f64,
    pub map: SsimMap,
}

/// SSIM errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SsimError {
    DimensionMismatch,
    /// Image smaller than the window.
    ImageTooSmall,
    InvalidConstants,
    /// evaluate_set pairing is not a bijection.
    InvalidPairing,
}

impl fmt::Display for SsimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SsimError::DimensionMismatch => write!(f, "images have different dimensions"),
            SsimError::ImageTooSmall => write!(f, "image is smaller than the SSIM window"),
            SsimError::InvalidConstants => write!(f, "k1, k2 and L must be positive"),
            SsimError::InvalidPairing => write!(f, "pairing is not a bijection"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SsimError {}

/// Structural similarity of two equally sized images.
pub fn ssim(x: &GrayImage, y: &GrayImage, config: &SsimConfig) -> Result<SsimResult, SsimError> {
    if x.width() != y.width() || x.height() != y.height() {
        return Err(SsimError::DimensionMismatch);
    }
    if !(config.k1 > 0.0) || !(config.k2 > 0.0) || !(config.dynamic_range > 0.0) {
        return Err(SsimError::InvalidConstants);
    }
    let c1 = (config.k1 * config.dynamic_range).powi(2);
    let c2 = (config.k2 * config.dynamic_range).powi(2);

    let (weights, win_w, win_h) = match config.window {
        Window::Gaussian { size, sigma } => {
            if size == 0 || sigma <= 0.0 {
                return Err(SsimError::InvalidConstants);
            }
            if x.width() < size || x.height() < size {
                return Err(SsimError::ImageTooSmall);
            }
            (gaussian_window(size, sigma), size, size)
        }
        Window::Global => {
            let n = x.width() * x.height();
            (vec![1.0 / n as f64; n], x.width(), x.height())
        }
    };
    let (map_w, map_h) = (x.width() - win_w + 1, x.height() - win_h + 1);

    let mut values = Vec::with_capacity(map_w * map_h);
    for wy in 0..map_h {
        for wx in 0..map_w {
            values.push(windowed_ssim(x, y, wx, wy, win_w, win_h, &weights, c1, c2));
        }
    }
    let mean_ssim = values.iter().sum::<f64>() / values.len() as f64;
    Ok(SsimResult {
        mean_ssim,
        map: SsimMap {
            width: map_w,
            height: map_h,
            values,
        },
    })
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) * 0.5;
    let inv = -0.5 / (sigma * sigma);
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let dx = (i % size) as f64 - c;
            let dy = (i / size) as f64 - c;
            ((dx * dx + dy * dy) * inv).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

#[allow(clippy::too_many_arguments)]
fn windowed_ssim(
    x: &GrayImage,
    y: &GrayImage,
    ox: usize,
    oy: usize,
    win_w: usize,
    win_h: usize,
    weights: &[f64],
    c1: f64,
    c2: f64,
) -> f64 {
    let mut mu_x = 0.0f64;
    let mut mu_y = 0.0f64;
    let mut xx = 0.0f64;
    let mut yy = 0.0f64;
    let mut xy = 0.0f64;
    for dy in 0..win_h {
        for dx in 0..win_w {
            let w = weights[dy * win_w + dx];
            let vx = x.get(ox + dx, oy + dy) as f64;
            let vy = y.get(ox + dx, oy + dy) as f64;
            mu_x += w * vx;
            mu_y += w * vy;
            xx += w * (vx * vx);
            yy += w * (vy * vy);
            xy += w * (vx * vy);
        }
    }
    let sigma_x = xx - mu_x * mu_x;
    let sigma_y = yy - mu_y * mu_y;
    let sigma_xy = xy - mu_x * mu_y;
    let num = (2.0 * (mu_x * mu_y) + c1) * (2.0 * sigma_xy + c2);
    let den = (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2);
    num / den
}

/// Renders a z-buffered splat view of the cloud through the given camera.
///
/// Colored points draw their BT.601 intensity; colorless points draw white.
/// Pixels no point reaches keep the background intensity.
pub fn render_pointcloud(
    cloud: &SparseCloud,
    pose: &CameraPose,
    k: &CameraIntrinsics,
    splat_radius_px: f64,
    background: f32,
) -> GrayImage {
    let (w, h) = (k.image_size.0 as usize, k.image_size.1 as usize);
    let mut out = GrayImage::filled(w, h, background);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let reach = splat_radius_px.max(0.0).ceil() as isize;
    let r2 = splat_radius_px * splat_radius_px;
    for point in &cloud.points {
        let p_cam = pose.world_to_camera(&point.position);
        let Some(px) = k.project(&p_cam) else {
            continue;
        };
        let cx = px.x.round() as isize;
        let cy = px.y.round() as isize;
        let intensity = match point.color {
            Some([r, g, b]) => to_grayscale(r as f64, g as f64, b as f64) as f32,
            None => 1.0,
        };
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if (dx * dx + dy * dy) as f64 > r2 {
                    continue;
                }
                let (qx, qy) = (cx + dx, cy + dy);
                if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                    continue;
                }
                let idx = qy as usize * w + qx as usize;
                if p_cam.z < zbuf[idx] {
                    zbuf[idx] = p_cam.z;
                    out.data_mut()[idx] = intensity;
                }
            }
        }
    }
    out
}

/// Score of one render/original pair within a set evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub render: usize,
    pub original: usize,
    pub mean_ssim: f64,
}

/// Per-pair SSIM scores and their arithmetic set average.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEvaluation {
    pub pairs: Vec<PairScore>,
    pub average: f64,
}

/// Evaluates a set of rendered views against their original photos.
///
/// `pairing` maps render indices to original indices and must be a
/// bijection between the two lists.
pub fn evaluate_set(
    renders: &[GrayImage],
    originals: &[GrayImage],
    pairing: &[(usize, usize)],
    config: &SsimConfig,
) -> Result<SetEvaluation, SsimError> {
    if renders.len() != originals.len() || pairing.len() != renders.len() {
        return Err(SsimError::InvalidPairing);
    }
    let mut seen_r = vec![false; renders.len()];
    let mut seen_o = vec![false; originals.len()];
    for &(r, o) in pairing {
        if r >= renders.len() || o >= originals.len() || seen_r[r] || seen_o[o] {
            return Err(SsimError::InvalidPairing);
        }
        seen_r[r] = true;
        seen_o[o] = true;
    }
    let mut pairs = Vec::with_capacity(pairing.len());
    let mut sum = 0.0f64;
    for &(r, o) in pairing {
        let result = ssim(&renders[r], &originals[o], config)?;
        sum += result.mean_ssim;
        pairs.push(PairScore {
            render: r,
            original: o,
            mean_ssim: result.mean_ssim,
        });
    }
    let average = if pairs.is_empty() {
        0.0
    } else {
        sum / pairs.len() as f64
    };
    Ok(SetEvaluation { pairs, average })
}
