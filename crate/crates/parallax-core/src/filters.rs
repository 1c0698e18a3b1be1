//! Smoothing and derivative kernels.
//!
//! All convolutions use replicate (clamp-to-edge) borders so the image frame
//! does not produce spurious responses. Derivatives use Scharr-style separable
//! kernels whose footprint grows with the requested scale; second-order
//! derivatives are compositions of first-order passes.

use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::image::GrayImage;

/// Derivative axis selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Xx,
    Yy,
    Xy,
}

/// Errors from the filtering operations.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterError {
    /// Scale (sigma) must be strictly positive.
    InvalidScale(f64),
}

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterError::InvalidScale(s) => write!(f, "derivative scale must be > 0, got {s}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FilterError {}

/// Separable Gaussian blur with replicate borders.
///
/// The kernel is truncated at three sigma and normalized to unit sum.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    assert!(sigma > 0.0, "gaussian sigma must be > 0");
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let inv = -0.5 / (sigma * sigma);
    let mut sum = 0.0f64;
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        let w = (d * d * inv).exp();
        kernel.push(w);
        sum += w;
    }
    for w in &mut kernel {
        *w /= sum;
    }

    let (w, h) = (img.width(), img.height());
    let mut tmp = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (i, &k) in kernel.iter().enumerate() {
                let xi = x as isize + i as isize - radius as isize;
                acc += k * img.get_clamped(xi, y as isize) as f64;
            }
            tmp.put(x, y, acc as f32);
        }
    }
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (i, &k) in kernel.iter().enumerate() {
                let yi = y as isize + i as isize - radius as isize;
                acc += k * tmp.get_clamped(x as isize, yi) as f64;
            }
            out.put(x, y, acc as f32);
        }
    }
    out
}

/// Integer box downscale; output dimensions are floor(w/k) x floor(h/k).
///
/// Each output sample is the mean of a k x k block, so unit-range inputs stay
/// in unit range.
pub fn box_downscale(img: &GrayImage, factor: usize) -> GrayImage {
    assert!(factor >= 1, "downscale factor must be >= 1");
    if factor == 1 {
        return img.clone();
    }
    let w = (img.width() / factor).max(1);
    let h = (img.height() / factor).max(1);
    let norm = 1.0 / (factor * factor) as f64;
    GrayImage::from_fn(w, h, |x, y| {
        let mut acc = 0.0f64;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += img.get(x * factor + dx, y * factor + dy) as f64;
            }
        }
        (acc * norm) as f32
    })
}

/// Scharr-style first derivative at an integer scale.
///
/// The derivative tap is [-1, 0.., +1] spanning 2*scale pixels along the
/// derivative axis; the cross axis is smoothed with [1, 10/3, 1] weights
/// normalized by 1/(2*scale*(10/3 + 2)), which makes a unit-slope ramp come
/// out as 1 in the interior.
fn scharr_pass(img: &GrayImage, along_x: bool, scale: usize) -> GrayImage {
    let s = scale.max(1) as isize;
    let w_center = 10.0f64 / 3.0;
    let norm = 1.0 / (2.0 * s as f64 * (w_center + 2.0));
    let (w, h) = (img.width(), img.height());

    // Derivative along the chosen axis.
    let mut tmp = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let v = if along_x {
                img.get_clamped(xi + s, yi) - img.get_clamped(xi - s, yi)
            } else {
                img.get_clamped(xi, yi + s) - img.get_clamped(xi, yi - s)
            };
            tmp.put(x, y, v);
        }
    }
    // Smoothing along the other axis.
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let (a, c, b) = if along_x {
                (
                    tmp.get_clamped(xi, yi - s),
                    tmp.get_clamped(xi, yi),
                    tmp.get_clamped(xi, yi + s),
                )
            } else {
                (
                    tmp.get_clamped(xi - s, yi),
                    tmp.get_clamped(xi, yi),
                    tmp.get_clamped(xi + s, yi),
                )
            };
            out.put(
                x,
                y,
                ((a as f64 + b as f64 + w_center * c as f64) * norm) as f32,
            );
        }
    }
    out
}

/// First-order gradient pair (Lx, Ly) at an integer scale.
pub fn scharr_gradients(img: &GrayImage, scale: usize) -> (GrayImage, GrayImage) {
    (scharr_pass(img, true, scale), scharr_pass(img, false, scale))
}

/// Scale-appropriate smoothed derivative of the image.
///
/// `scale` is a sigma in pixels; the kernel footprint uses round(sigma)
/// clamped to at least one. Output values are signed.
pub fn derivative(img: &GrayImage, axis: Axis, scale: f64) -> Result<GrayImage, FilterError> {
    if !(scale > 0.0) {
        return Err(FilterError::InvalidScale(scale));
    }
    let s = scale.round().max(1.0) as usize;
    Ok(match axis {
        Axis::X => scharr_pass(img, true, s),
        Axis::Y => scharr_pass(img, false, s),
        Axis::Xx => scharr_pass(&scharr_pass(img, true, s), true, s),
        Axis::Yy => scharr_pass(&scharr_pass(img, false, s), false, s),
        Axis::Xy => scharr_pass(&scharr_pass(img, true, s), false, s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_interior(img: &GrayImage, margin: usize, expected: f32) -> f32 {
        let mut worst = 0.0f32;
        for y in margin..img.height() - margin {
            for x in margin..img.width() - margin {
                worst = worst.max((img.get(x, y) - expected).abs());
            }
        }
        worst
    }

    #[test]
    fn derivative_of_constant_is_zero_everywhere() {
        let img = GrayImage::filled(24, 20, 0.42);
        for axis in [Axis::X, Axis::Y, Axis::Xx, Axis::Yy, Axis::Xy] {
            let d = derivative(&img, axis, 1.6).unwrap();
            // Includes the border: replicate padding keeps the signal constant.
            let (lo, hi) = d.min_max();
            assert_eq!(lo, 0.0, "{axis:?}");
            assert_eq!(hi, 0.0, "{axis:?}");
        }
    }

    #[test]
    fn derivative_of_ramp_is_one_in_interior() {
        let img = GrayImage::from_fn(32, 32, |x, _| x as f32);
        let d = derivative(&img, Axis::X, 2.0).unwrap();
        assert!(max_abs_interior(&d, 6, 1.0) < 1e-5);
        // And zero across the ramp.
        let dy = derivative(&img, Axis::Y, 2.0).unwrap();
        assert!(max_abs_interior(&dy, 6, 0.0) < 1e-5);
    }

    #[test]
    fn second_derivative_of_quadratic_matches_finite_differences() {
        // I = x^2 has Lxx = 2 everywhere; compare against an independent
        // central-difference oracle as well as the analytic value.
        let img = GrayImage::from_fn(40, 16, |x, _| (x * x) as f32);
        let sigma = 1.3;
        let d = derivative(&img, Axis::Xx, sigma).unwrap();
        assert!(max_abs_interior(&d, 8, 2.0) < 1e-3);

        // Oracle: second central difference of the raw image.
        for y in 8..img.height() - 8 {
            for x in 8..img.width() - 8 {
                let fd = img.get(x + 1, y) as f64 - 2.0 * img.get(x, y) as f64
                    + img.get(x - 1, y) as f64;
                assert!((d.get(x, y) as f64 - fd).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn first_derivative_matches_finite_differences_on_bandlimited_input() {
        // Smooth sinusoid; compare the Scharr derivative against central
        // finite differences of the smoothed image.
        let img = GrayImage::from_fn(48, 48, |x, y| {
            let xf = x as f64 * 0.22;
            let yf = y as f64 * 0.17;
            (0.5 + 0.25 * (xf).sin() + 0.2 * (yf).cos()) as f32
        });
        let d = derivative(&img, Axis::X, 1.0).unwrap();
        // The scale-1 pass smooths the cross axis only, so the oracle is the
        // cross-smoothed image differentiated by central differences.
        let smoothed = {
            let w_center = 10.0f64 / 3.0;
            let norm = 1.0 / (2.0 * (w_center + 2.0));
            GrayImage::from_fn(48, 48, |x, y| {
                let (xi, yi) = (x as isize, y as isize);
                ((img.get_clamped(xi, yi - 1) as f64
                    + img.get_clamped(xi, yi + 1) as f64
                    + w_center * img.get_clamped(xi, yi) as f64)
                    * norm
                    * 2.0) as f32
            })
        };
        for y in 4..44 {
            for x in 4..44 {
                let fd = (smoothed.get(x + 1, y) as f64 - smoothed.get(x - 1, y) as f64) / 2.0;
                assert!(
                    (d.get(x, y) as f64 - fd).abs() < 1e-3,
                    "at ({x},{y}): {} vs {}",
                    d.get(x, y),
                    fd
                );
            }
        }
    }

    #[test]
    fn invalid_scale_rejected() {
        let img = GrayImage::zeros(8, 8);
        assert!(matches!(
            derivative(&img, Axis::X, 0.0),
            Err(FilterError::InvalidScale(_))
        ));
        assert!(matches!(
            derivative(&img, Axis::X, -1.0),
            Err(FilterError::InvalidScale(_))
        ));
    }

    #[test]
    fn gaussian_preserves_constants_and_range() {
        let img = GrayImage::filled(16, 16, 0.7);
        let blurred = gaussian_blur(&img, 2.0);
        let (lo, hi) = blurred.min_max();
        assert!((lo - 0.7).abs() < 1e-6 && (hi - 0.7).abs() < 1e-6);
    }

    #[test]
    fn box_downscale_dimensions_and_mean() {
        let img = GrayImage::filled(4000, 6016, 0.25);
        let out = box_downscale(&img, 8);
        assert_eq!((out.width(), out.height()), (500, 752));
        let (lo, hi) = out.min_max();
        assert!((lo - 0.25).abs() < 1e-6 && (hi - 0.25).abs() < 1e-6);
    }
}
