//! Rectified epipolar model tying camera pixels, pattern columns, depth and
//! disparity together.
//!
//! The projector is treated as a second, pattern-displaying camera on the
//! same horizontal baseline. After rectification a scene point at depth `Z`
//! seen at camera column `x` appears at pattern column `x - d` on the same
//! row, with `d = f * b / Z`.

use crate::error::{Error, Result};

/// Rectified camera-projector pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RigModel {
    /// Focal length in pixels (shared by camera and projector).
    pub focal_px: f64,
    /// Baseline between camera and projector centers, meters.
    pub baseline_m: f64,
    /// Image width in pixels.
    pub width: usize,
    /// Image height in pixels.
    pub height: usize,
    /// Smallest valid disparity, pixels.
    pub d_min: f64,
    /// Largest valid disparity, pixels.
    pub d_max: f64,
    /// Reduced-resolution factor used by flow computation and warping.
    pub downsample_factor: usize,
}

impl RigModel {
    pub fn new(
        focal_px: f64,
        baseline_m: f64,
        width: usize,
        height: usize,
        d_min: f64,
        d_max: f64,
        downsample_factor: usize,
    ) -> Result<Self> {
        if !(focal_px > 0.0) {
            return Err(Error::InvalidParam(format!(
                "focal_px must be > 0, got {focal_px}"
            )));
        }
        if !(baseline_m > 0.0) {
            return Err(Error::InvalidParam(format!(
                "baseline_m must be > 0, got {baseline_m}"
            )));
        }
        if !(d_min >= 0.0 && d_max > d_min) {
            return Err(Error::InvalidParam(format!(
                "need d_max > d_min >= 0, got d_min={d_min}, d_max={d_max}"
            )));
        }
        if downsample_factor < 1 {
            return Err(Error::InvalidParam(
                "downsample_factor must be >= 1".into(),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam("image dimensions must be non-zero".into()));
        }
        if width % downsample_factor != 0 || height % downsample_factor != 0 {
            return Err(Error::InvalidParam(format!(
                "downsample_factor {downsample_factor} must divide {width}x{height}"
            )));
        }
        Ok(RigModel {
            focal_px,
            baseline_m,
            width,
            height,
            d_min,
            d_max,
            downsample_factor,
        })
    }

    /// Product `f * b` in pixel-meters; `d = fb / Z` and `Z = fb / d`.
    #[inline]
    pub fn fb(&self) -> f64 {
        self.focal_px * self.baseline_m
    }

    /// Depth range [m] covered by the valid disparity interval.
    /// `d_min = 0` maps the far end to infinity.
    pub fn depth_range_m(&self) -> (f64, f64) {
        let near = self.fb() / self.d_max;
        let far = if self.d_min > 0.0 {
            self.fb() / self.d_min
        } else {
            f64::INFINITY
        };
        (near, far)
    }

    #[inline]
    pub fn disparity_in_range(&self, d: f64) -> bool {
        d >= self.d_min && d <= self.d_max
    }
}

/// Converts disparity (px) to depth (m): `Z = f*b / d`.
pub fn disparity_to_depth(d: f64, rig: &RigModel) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!(
            "disparity {d} px is at or behind infinity"
        )));
    }
    Ok(rig.fb() / d)
}

/// Converts depth (m) to disparity (px): `d = f*b / Z`.
pub fn depth_to_disparity(z: f64, rig: &RigModel) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("depth {z} m is not in front of the camera")));
    }
    Ok(rig.fb() / z)
}

/// Pattern column corresponding to camera column `x` at disparity `d`.
/// Rectification reduces the correspondence to a pure column shift on the
/// same row.
#[inline]
pub fn camera_to_pattern_x(x: f64, d: f64) -> f64 {
    x - d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rig() -> RigModel {
        RigModel::new(600.0, 0.218, 640, 480, 40.0, 200.0, 8).unwrap()
    }

    #[test]
    fn disparity_to_depth_reference_point() {
        // fb = 600 * 0.218 = 130.8; 130.8 / 120 = 1.09.
        let z = disparity_to_depth(120.0, &rig()).unwrap();
        assert!((z - 1.09).abs() < 1e-12, "z={z}");
    }

    #[test]
    fn depth_to_disparity_reference_point() {
        let d = depth_to_disparity(1.09, &rig()).unwrap();
        assert!((d - 120.0).abs() < 1e-9, "d={d}");
    }

    #[test]
    fn unit_depth_gives_fb_and_vice_versa() {
        let r = rig();
        assert_eq!(depth_to_disparity(1.0, &r).unwrap(), r.fb());
        assert!((disparity_to_depth(r.fb(), &r).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn depth_halves_when_disparity_doubles() {
        let r = rig();
        for d in [41.0, 60.0, 99.5] {
            let z1 = disparity_to_depth(d, &r).unwrap();
            let z2 = disparity_to_depth(2.0 * d, &r).unwrap();
            assert!((z2 - z1 / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disparity_strictly_decreases_with_depth() {
        let r = rig();
        let mut prev = f64::INFINITY;
        for i in 1..50 {
            let z = 0.5 + i as f64 * 0.05;
            let d = depth_to_disparity(z, &r).unwrap();
            assert!(d < prev, "d not decreasing at z={z}");
            prev = d;
        }
    }

    #[test]
    fn non_positive_inputs_are_domain_errors() {
        let r = rig();
        assert!(matches!(disparity_to_depth(0.0, &r), Err(Error::Domain(_))));
        assert!(matches!(disparity_to_depth(-3.0, &r), Err(Error::Domain(_))));
        assert!(matches!(depth_to_disparity(0.0, &r), Err(Error::Domain(_))));
    }

    #[test]
    fn pattern_column_is_pure_shift() {
        assert_eq!(camera_to_pattern_x(200.0, 120.0), 80.0);
        assert_eq!(camera_to_pattern_x(421.5, 0.0), 421.5);
    }

    #[test]
    fn pattern_column_agrees_with_projection_model() {
        // With x = f*X/Z the pattern column must equal f*(X - b)/Z.
        let r = rig();
        for xi in -5..=5 {
            for zi in 1..=10 {
                let big_x = xi as f64 * 0.1;
                let z = 0.6 + zi as f64 * 0.25;
                let x = r.focal_px * big_x / z;
                let d = depth_to_disparity(z, &r).unwrap();
                let expected = r.focal_px * (big_x - r.baseline_m) / z;
                let got = camera_to_pattern_x(x, d);
                let scale = expected.abs().max(1.0);
                assert!(
                    (got - expected).abs() / scale < 1e-9,
                    "X={big_x} Z={z}: got {got}, expected {expected}"
                );
            }
        }
    }

    #[test]
    fn rig_validation_rejects_bad_fields() {
        assert!(RigModel::new(0.0, 0.2, 640, 480, 40.0, 200.0, 8).is_err());
        assert!(RigModel::new(600.0, -1.0, 640, 480, 40.0, 200.0, 8).is_err());
        assert!(RigModel::new(600.0, 0.2, 640, 480, 200.0, 40.0, 8).is_err());
        assert!(RigModel::new(600.0, 0.2, 640, 480, 40.0, 200.0, 7).is_err());
        assert!(RigModel::new(600.0, 0.2, 640, 480, 40.0, 200.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn depth_disparity_round_trip(d in 40.0f64..=200.0) {
            let r = rig();
            let z = disparity_to_depth(d, &r).unwrap();
            let back = depth_to_disparity(z, &r).unwrap();
            prop_assert!((back - d).abs() / d < 1e-9);
        }
    }
}
