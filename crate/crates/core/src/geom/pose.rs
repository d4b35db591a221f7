use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::rng::SplitRng;

/// 7-DoF object pose: center, size, and yaw about the vertical axis.
///
/// Yaw 0 keeps the box axes aligned with the world axes (long axis along x);
/// stored yaw is always normalized to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r - std::f64::consts::TAU
    } else {
        r
    }
}

impl BoxPose {
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> Self {
        assert!(l > 0.0 && w > 0.0 && h > 0.0, "box dimensions must be positive");
        BoxPose { x, y, z, l, w, h, yaw: wrap_angle(yaw) }
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Half extents, the scale that maps the canonical cube to the box:
    /// length along local x, height along the vertical y, width along z.
    pub fn half_extents(&self) -> Vec3 {
        Vec3::new(self.l * 0.5, self.h * 0.5, self.w * 0.5)
    }

    fn rotate_local_to_world(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * p.x + s * p.z, p.y, -s * p.x + c * p.z)
    }

    fn rotate_world_to_local(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * p.x - s * p.z, p.y, s * p.x + c * p.z)
    }

    /// World point into the canonical frame: s^-1 * (R^-1 * (p - t)).
    /// Points inside the box land in [-1,1]^3.
    pub fn world_to_local(&self, p: Vec3) -> Vec3 {
        let d = self.rotate_world_to_local(p - self.center());
        let s = self.half_extents();
        Vec3::new(d.x / s.x, d.y / s.y, d.z / s.z)
    }

    pub fn local_to_world(&self, p: Vec3) -> Vec3 {
        let s = self.half_extents();
        let scaled = Vec3::new(p.x * s.x, p.y * s.y, p.z * s.z);
        self.rotate_local_to_world(scaled) + self.center()
    }

    /// Rotates a direction (no translation, no scale) into the local frame.
    pub fn dir_world_to_local(&self, d: Vec3) -> Vec3 {
        self.rotate_world_to_local(d)
    }

    /// The eight corners of the oriented box in world coordinates.
    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::ZERO; 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.local_to_world(Vec3::new(sx, sy, sz));
        }
        out
    }

    /// BEV (x,z) center distance to another pose.
    pub fn bev_distance(&self, other: &BoxPose) -> f64 {
        let dx = self.x - other.x;
        let dz = self.z - other.z;
        (dx * dx + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformSpec {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: f64,
    pub sigma: f64,
}

/// Equal-weight two-component Gaussian mixture centered at +mu and -mu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDistribution {
    pub x: UniformSpec,
    pub z: UniformSpec,
    pub y: GaussianSpec,
    pub l: GaussianSpec,
    pub w: GaussianSpec,
    pub h: GaussianSpec,
    pub theta: MixtureSpec,
}

impl PoseDistribution {
    /// Vehicle pose prior: x,z place the object on the ground strip in front
    /// of the camera, y hovers at camera height, dimensions follow fleet
    /// statistics, and yaw concentrates near +-pi/2.
    pub fn standard(camera_height: f64) -> Self {
        PoseDistribution {
            x: UniformSpec { low: -5.0, high: 5.0 },
            z: UniformSpec { low: 10.0, high: 15.0 },
            y: GaussianSpec { mean: camera_height, sigma: 0.2 },
            l: GaussianSpec { mean: 4.61, sigma: 0.5 },
            w: GaussianSpec { mean: 1.95, sigma: 0.5 },
            h: GaussianSpec { mean: 1.72, sigma: 0.5 },
            theta: MixtureSpec { mu: std::f64::consts::FRAC_PI_2, sigma: std::f64::consts::FRAC_PI_2 },
        }
    }

    /// Same shape, wider ground coverage; used for scene ground truth.
    pub fn widened(camera_height: f64) -> Self {
        let mut d = Self::standard(camera_height);
        d.x = UniformSpec { low: -8.0, high: 8.0 };
        d.z = UniformSpec { low: 8.0, high: 20.0 };
        d
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, u) in [("x", self.x), ("z", self.z)] {
            if u.low >= u.high {
                return Err(format!("pose_distribution.{name}: low must be < high"));
            }
        }
        for (name, g) in [("y", self.y), ("l", self.l), ("w", self.w), ("h", self.h)] {
            if g.sigma <= 0.0 {
                return Err(format!("pose_distribution.{name}: sigma must be > 0"));
            }
        }
        if self.theta.sigma <= 0.0 {
            return Err("pose_distribution.theta: sigma must be > 0".into());
        }
        Ok(())
    }
}

/// Minimum box dimension; Gaussian tails are clamped here.
pub const MIN_DIMENSION: f64 = 0.2;

/// Draws one pose. Consumes a fixed 13 draws from `rng` (one per uniform,
/// two per Gaussian, one for the mixture component), so derived streams stay
/// aligned regardless of parameter values.
pub fn sample_pose(dist: &PoseDistribution, rng: &mut SplitRng) -> BoxPose {
    let x = rng.uniform_in(dist.x.low, dist.x.high);
    let z = rng.uniform_in(dist.z.low, dist.z.high);
    let y = rng.normal_with(dist.y.mean, dist.y.sigma);
    let l = rng.normal_with(dist.l.mean, dist.l.sigma).max(MIN_DIMENSION);
    let w = rng.normal_with(dist.w.mean, dist.w.sigma).max(MIN_DIMENSION);
    let h = rng.normal_with(dist.h.mean, dist.h.sigma).max(MIN_DIMENSION);
    let sign = if rng.chance(0.5) { 1.0 } else { -1.0 };
    let yaw = rng.normal_with(sign * dist.theta.mu, dist.theta.sigma);
    BoxPose::new(x, y, z, l, w, h, yaw)
}
