//! Equidistant fisheye cameras (`r = f * theta`) and the parallel stereo rig.
//!
//! Camera frame: +x right in the image, +y down, +z along the optical axis.
//! Pixel centres sit on integer coordinates, so an image of width `w` spans
//! `[-0.5, w - 0.5]`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Left,
    Right,
}

impl View {
    pub const BOTH: [View; 2] = [View::Left, View::Right];

    pub fn index(self) -> usize {
        match self {
            View::Left => 0,
            View::Right => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisheyeCamera {
    /// Pixels per radian.
    pub focal: f64,
    pub principal_point: [f64; 2],
    /// `[width, height]`.
    pub image_size: [usize; 2],
    /// Offset in the rig frame, centimetres.
    pub position: [f64; 3],
    /// Full field of view in radians.
    pub fov: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    /// Angle between the ray and the optical axis.
    pub theta: f64,
    pub visible: bool,
}

impl FisheyeCamera {
    /// Camera whose `fov` image circle is inscribed in a square image.
    pub fn covering(size: usize, fov: f64) -> Self {
        let half = size as f64 / 2.0;
        let c = (size as f64 - 1.0) / 2.0;
        Self {
            focal: half / (fov / 2.0),
            principal_point: [c, c],
            image_size: [size, size],
            position: [0.0; 3],
            fov,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(Error::Parameter(format!("focal must be > 0, got {}", self.focal)));
        }
        if !(self.fov > 0.0 && self.fov <= 2.0 * std::f64::consts::PI) {
            return Err(Error::Parameter(format!("fov must be in (0, 2pi], got {}", self.fov)));
        }
        let [w, h] = self.image_size;
        if w == 0 || h == 0 {
            return Err(Error::Parameter("image size must be non-zero".into()));
        }
        let pp = Vector2::new(self.principal_point[0], self.principal_point[1]);
        if !self.in_image(&pp) {
            return Err(Error::Parameter(format!(
                "principal point {:?} outside {w}x{h} image",
                self.principal_point
            )));
        }
        Ok(())
    }

    pub fn in_image(&self, px: &Vector2<f64>) -> bool {
        let [w, h] = self.image_size;
        px.x >= -0.5 && px.y >= -0.5 && px.x <= w as f64 - 0.5 && px.y <= h as f64 - 0.5
    }

    /// Projects a point expressed in this camera's frame.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Projection> {
        let rho = p.x.hypot(p.y);
        if rho == 0.0 && p.z == 0.0 {
            return Err(Error::Projection("point at the camera centre".into()));
        }
        let theta = rho.atan2(p.z);
        let r = self.focal * theta;
        let (dx, dy) = if rho > 0.0 { (p.x / rho, p.y / rho) } else { (1.0, 0.0) };
        let pixel = Vector2::new(
            self.principal_point[0] + r * dx,
            self.principal_point[1] + r * dy,
        );
        let visible = theta <= self.fov / 2.0 && self.in_image(&pixel);
        Ok(Projection { pixel, theta, visible })
    }

    /// Unit ray through `pixel`.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let d = pixel - Vector2::new(self.principal_point[0], self.principal_point[1]);
        let r = d.norm();
        let theta = r / self.focal;
        if r == 0.0 {
            return Vector3::z();
        }
        let s = theta.sin();
        Vector3::new(s * d.x / r, s * d.y / r, theta.cos())
    }

    /// Same optics sampled on a grid scaled by `factor` (e.g. image -> heatmap).
    pub fn rescaled(&self, factor: f64) -> Self {
        let [w, h] = self.image_size;
        Self {
            focal: self.focal * factor,
            principal_point: [
                (self.principal_point[0] + 0.5) * factor - 0.5,
                (self.principal_point[1] + 0.5) * factor - 0.5,
            ],
            image_size: [
                (w as f64 * factor).round() as usize,
                (h as f64 * factor).round() as usize,
            ],
            position: self.position,
            fov: self.fov,
        }
    }
}

/// Two identically oriented cameras; the right one sits `baseline` cm along
/// the left camera's +x axis. Points handed to the rig are in the left frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisheyeStereoRig {
    pub left: FisheyeCamera,
    pub right: FisheyeCamera,
    pub baseline: f64,
}

impl FisheyeStereoRig {
    pub fn symmetric(camera: FisheyeCamera, baseline: f64) -> Result<Self> {
        let mut left = camera.clone();
        left.position = [0.0; 3];
        let mut right = camera;
        right.position = [baseline, 0.0, 0.0];
        let rig = Self { left, right, baseline };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        self.left.validate()?;
        self.right.validate()?;
        if !(self.baseline.is_finite() && self.baseline > 0.0) {
            return Err(Error::Parameter(format!("baseline must be > 0, got {}", self.baseline)));
        }
        let l = Vector3::from(self.left.position);
        let r = Vector3::from(self.right.position);
        if ((r - l) - Vector3::new(self.baseline, 0.0, 0.0)).norm() > 1e-9 {
            return Err(Error::Parameter(
                "right camera must sit `baseline` along the left camera's x axis".into(),
            ));
        }
        Ok(())
    }

    pub fn camera(&self, view: View) -> &FisheyeCamera {
        match view {
            View::Left => &self.left,
            View::Right => &self.right,
        }
    }

    /// Left-camera-frame point expressed in `view`'s frame.
    pub fn to_view(&self, view: View, p_left: &Vector3<f64>) -> Vector3<f64> {
        let cam = self.camera(view);
        p_left - (Vector3::from(cam.position) - Vector3::from(self.left.position))
    }

    pub fn project(&self, view: View, p_left: &Vector3<f64>) -> Result<Projection> {
        self.camera(view).project(&self.to_view(view, p_left))
    }

    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            left: self.left.rescaled(factor),
            right: self.right.rescaled(factor),
            baseline: self.baseline,
        }
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn cam() -> FisheyeCamera {
        FisheyeCamera::covering(64, PI)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let c = cam();
        let p = c.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(p.pixel, Vector2::new(31.5, 31.5));
        assert!(p.visible);
        assert_eq!(p.theta, 0.0);
    }

    #[test]
    fn half_fov_lands_on_radius() {
        let c = cam();
        // theta = fov/2 = pi/2: a point in the image plane direction.
        let p = c.project(&Vector3::new(0.0, 1.0, 0.0)).unwrap();
        let r = (p.pixel - Vector2::new(31.5, 31.5)).norm();
        assert!((r - c.focal * PI / 2.0).abs() < 1e-12);
        assert!(p.visible);
        let behind = c.project(&Vector3::new(0.0, 1.0, -0.1)).unwrap();
        assert!(!behind.visible);
    }

    #[test]
    fn origin_is_an_error() {
        assert!(matches!(
            cam().project(&Vector3::zeros()),
            Err(Error::Projection(_))
        ));
    }

    #[test]
    fn unproject_inverts_project_on_grid() {
        let c = FisheyeCamera::covering(128, 190f64.to_radians());
        for i in 0..20 {
            for j in 0..20 {
                let az = i as f64 / 20.0 * 2.0 * PI;
                let th = j as f64 / 20.0 * c.fov / 2.0;
                let dir = Vector3::new(th.sin() * az.cos(), th.sin() * az.sin(), th.cos());
                let depth = 10.0 + (i * j) as f64;
                let px = c.project(&(dir * depth)).unwrap().pixel;
                // Oracle: re-project the recovered ray; pixels must agree.
                let back = c.project(&(c.unproject(&px) * 3.0)).unwrap().pixel;
                assert!((back - px).norm() < 1e-4, "{px} vs {back}");
                assert!((c.unproject(&px) - dir).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn rig_validation() {
        assert!(FisheyeStereoRig::symmetric(cam(), 0.0).is_err());
        let mut rig = FisheyeStereoRig::symmetric(cam(), 10.0).unwrap();
        rig.right.position = [10.0, 1.0, 0.0];
        assert!(rig.validate().is_err());
        let mut bad = cam();
        bad.focal = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = cam();
        bad.principal_point = [80.0, 0.0];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rescale_maps_pixel_centres() {
        let c = cam();
        let h = c.rescaled(0.25);
        assert_eq!(h.image_size, [16, 16]);
        let p = Vector3::new(3.0, -2.0, 7.0);
        let a = c.project(&p).unwrap().pixel;
        let b = h.project(&p).unwrap().pixel;
        let expect = (a + Vector2::new(0.5, 0.5)) * 0.25 - Vector2::new(0.5, 0.5);
        assert!((b - expect).norm() < 1e-12);
    }
}
