//! Pinhole camera intrinsics.
//!
//! One calibration is shared by every photo of an object set; the value comes
//! from configuration (focal length in pixels, or millimetres converted by the
//! pipeline), never from estimation.

use core::fmt;

use nalgebra::{Point2, Vector3};

/// Pinhole intrinsics with a single focal length and zero skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    /// Principal point (px, py) in pixels.
    pub principal_point: (f64, f64),
    /// Image size (width, height) in pixels.
    pub image_size: (u32, u32),
}

/// Intrinsics validation errors.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraError {
    NonPositiveFocal(f64),
    PrincipalPointOutsideImage,
}

impl fmt::Display for CameraError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CameraError::NonPositiveFocal(v) => write!(f, "focal length must be > 0, got {v}"),
            CameraError::PrincipalPointOutsideImage => {
                write!(f, "principal point lies outside the image bounds")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CameraError {}

impl CameraIntrinsics {
    pub fn new(
        focal_px: f64,
        principal_point: (f64, f64),
        image_size: (u32, u32),
    ) -> Result<Self, CameraError> {
        if !(focal_px > 0.0) {
            return Err(CameraError::NonPositiveFocal(focal_px));
        }
        let (px, py) = principal_point;
        let (w, h) = image_size;
        if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
            return Err(CameraError::PrincipalPointOutsideImage);
        }
        Ok(Self {
            focal_px,
            principal_point,
            image_size,
        })
    }

    /// Intrinsics for a downscaled copy of the image (integer factor).
    pub fn downscaled(&self, factor: u32) -> Self {
        let f = factor.max(1) as f64;
        Self {
            focal_px: self.focal_px / f,
            principal_point: (self.principal_point.0 / f, self.principal_point.1 / f),
            image_size: (
                (self.image_size.0 / factor.max(1)).max(1),
                (self.image_size.1 / factor.max(1)).max(1),
            ),
        }
    }

    /// Pixel coordinates to normalized camera coordinates (unit focal plane).
    #[inline]
    pub fn normalize(&self, pixel: Point2<f64>) -> Point2<f64> {
        Point2::new(
            (pixel.x - self.principal_point.0) / self.focal_px,
            (pixel.y - self.principal_point.1) / self.focal_px,
        )
    }

    /// Projects a camera-frame point with positive depth to pixels.
    ///
    /// Returns `None` for non-positive depth.
    #[inline]
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<Point2<f64>> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some(Point2::new(
            self.focal_px * p_cam.x / p_cam.z + self.principal_point.0,
            self.focal_px * p_cam.y / p_cam.z + self.principal_point.1,
        ))
    }
}
