//! Thin-lens geometry relating scene depth to signed defocus blur.
//!
//! The signed circle-of-confusion diameter of a point at depth `z` is
//!
//! ```text
//! D(z) = L f / (1 - f/g) * (1/g - 1/z)
//! ```
//!
//! with `L` the aperture diameter, `f` the focal length and `g` the focus
//! distance. Points behind the focal plane get positive blur.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub focal_length_mm: f64,
    pub aperture_diameter_mm: f64,
    pub focus_distance_mm: f64,
    pub pixel_pitch_um: f64,
    pub num_planes: usize,
    pub max_blur_px: f64,
}

impl Default for CameraConfig {
    /// 50 mm lens at f/4 focused at 40 cm on a 10.72 um pitch sensor.
    fn default() -> Self {
        CameraConfig {
            focal_length_mm: 50.0,
            aperture_diameter_mm: 12.5,
            focus_distance_mm: 400.0,
            pixel_pitch_um: 10.72,
            num_planes: 21,
            max_blur_px: 40.0,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        ensure(positive(self.focal_length_mm), || {
            format!("focal length must be positive, got {}", self.focal_length_mm)
        })?;
        ensure(positive(self.aperture_diameter_mm), || {
            format!("aperture diameter must be positive, got {}", self.aperture_diameter_mm)
        })?;
        ensure(positive(self.pixel_pitch_um), || {
            format!("pixel pitch must be positive, got {}", self.pixel_pitch_um)
        })?;
        ensure(positive(self.max_blur_px), || {
            format!("max blur must be positive, got {}", self.max_blur_px)
        })?;
        ensure(
            self.focus_distance_mm.is_finite() && self.focus_distance_mm > self.focal_length_mm,
            || {
                format!(
                    "focus distance g={} mm must exceed focal length f={} mm (defocus model needs 1 - f/g > 0)",
                    self.focus_distance_mm, self.focal_length_mm
                )
            },
        )?;
        ensure(self.num_planes >= 3 && self.num_planes % 2 == 1, || {
            format!("num_planes must be odd and >= 3, got {}", self.num_planes)
        })?;
        Ok(())
    }

    /// `L f / (1 - f/g)` in mm^2.
    pub fn defocus_gain_mm2(&self) -> f64 {
        let f = self.focal_length_mm;
        self.aperture_diameter_mm * f / (1.0 - f / self.focus_distance_mm)
    }

    pub fn pixel_pitch_mm(&self) -> f64 {
        self.pixel_pitch_um * 1e-3
    }

    /// Signed blur diameter on the sensor in mm.
    pub fn blur_mm_at_depth(&self, depth_mm: f64) -> f64 {
        self.defocus_gain_mm2() * (1.0 / self.focus_distance_mm - 1.0 / depth_mm)
    }

    pub fn blur_px_at_depth(&self, depth_mm: f64) -> f64 {
        self.blur_mm_at_depth(depth_mm) / self.pixel_pitch_mm()
    }

    /// Inverse of [`blur_mm_at_depth`](Self::blur_mm_at_depth). Returns
    /// `f64::INFINITY` at or beyond the far-field asymptote.
    pub fn depth_at_blur_mm(&self, blur_mm: f64) -> f64 {
        let inv = 1.0 / self.focus_distance_mm - blur_mm / self.defocus_gain_mm2();
        if inv <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / inv
        }
    }

    pub fn depth_at_blur_px(&self, blur_px: f64) -> f64 {
        self.depth_at_blur_mm(blur_px * self.pixel_pitch_mm())
    }

    /// Largest blur (px) reachable as depth goes to infinity.
    pub fn far_asymptote_px(&self) -> f64 {
        self.defocus_gain_mm2() / self.focus_distance_mm / self.pixel_pitch_mm()
    }

    /// Uniformly spaced signed blur sizes of the depth planes, from
    /// `-max_blur_px` to `+max_blur_px`.
    pub fn plane_blurs(&self) -> Vec<f64> {
        let n = self.num_planes;
        let half = (n / 2) as f64;
        (0..n)
            .map(|i| {
                let k = i as f64 - half;
                if k == 0.0 {
                    0.0
                } else {
                    self.max_blur_px * k / half
                }
            })
            .collect()
    }

    pub fn plane_spacing_px(&self) -> f64 {
        self.max_blur_px / (self.num_planes / 2) as f64
    }

    /// Odd kernel extent large enough for the widest blur disc.
    pub fn kernel_extent(&self) -> usize {
        2 * (self.max_blur_px / 2.0).ceil() as usize + 1
    }
}
