use super::{BoxPose, Ray, Vec3};

/// Entry and exit distances of a ray through an oriented box, in world
/// metric units along the ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayBoxHit {
    pub t_near: f64,
    pub t_far: f64,
}

/// Slab test against the canonical cube after mapping the ray into the
/// box frame. The componentwise scale preserves the ray parameter, so the
/// returned t values measure world distance along the original ray.
///
/// Returns None for misses and for boxes entirely behind the origin; a ray
/// starting inside reports t_near = 0. Zero direction components follow the
/// IEEE inf convention (min/max ignore the resulting NaNs).
pub fn intersect_ray_box(ray: &Ray, pose: &BoxPose) -> Option<RayBoxHit> {
    let s = pose.half_extents();
    let o = pose.dir_world_to_local(ray.origin - pose.center());
    let d = pose.dir_world_to_local(ray.dir);
    let o = Vec3::new(o.x / s.x, o.y / s.y, o.z / s.z);
    let d = Vec3::new(d.x / s.x, d.y / s.y, d.z / s.z);

    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for (oc, dc) in [(o.x, d.x), (o.y, d.y), (o.z, d.z)] {
        let inv = 1.0 / dc;
        let t1 = (-1.0 - oc) * inv;
        let t2 = (1.0 - oc) * inv;
        // f64::min/max drop NaN operands, which handles 0 * inf at slab faces.
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }

    if t_near < t_far && t_far > 0.0 {
        Some(RayBoxHit { t_near: t_near.max(0.0), t_far })
    } else {
        None
    }
}
