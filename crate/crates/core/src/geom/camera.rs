use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Vec3;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("pixel ({px}, {py}) outside {width}x{height} image")]
    PixelOutOfBounds { px: f64, py: f64, width: u32, height: u32 },
}

/// Pinhole camera at the origin of the world frame, looking along +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Height of the optical center above the ground plane, meters.
    pub height_above_ground: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, cam_height: f64) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(cx >= 0.0 && cx < width as f64, "cx out of image");
        assert!(cy >= 0.0 && cy < height as f64, "cy out of image");
        CameraModel { fx, fy, cx, cy, width, height, height_above_ground: cam_height }
    }

    /// Ray through the center of pixel (px, py); sub-pixel centers at +0.5.
    pub fn generate_ray(&self, px: f64, py: f64) -> Result<Ray, GeomError> {
        if px < 0.0 || px >= self.width as f64 || py < 0.0 || py >= self.height as f64 {
            return Err(GeomError::PixelOutOfBounds {
                px,
                py,
                width: self.width,
                height: self.height,
            });
        }
        let u = px + 0.5;
        let v = py + 0.5;
        let dir = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalized();
        Ok(Ray { origin: Vec3::ZERO, dir })
    }

    /// Projects a world point to pixel coordinates. None when the point is
    /// at or behind the image plane.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        if p.z <= 1e-9 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}
