use super::{BoxPose, CameraModel, Vec3};

const Z_MIN: f64 = 1e-3;

/// Fraction of the image covered by the projected box: convex hull of the
/// projected (near-plane-clipped) corners, clipped to the image rectangle,
/// divided by width * height. A box fully behind the camera reports 0.
pub fn pixel_proportion(camera: &CameraModel, pose: &BoxPose) -> f64 {
    let corners = pose.corners();
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(16);
    for c in &corners {
        if c.z > Z_MIN {
            if let Some(p) = camera.project(*c) {
                pts.push(p);
            }
        }
    }
    // Clip box edges that cross the near plane and keep the crossing points.
    for i in 0..8usize {
        for bit in [1usize, 2, 4] {
            let j = i ^ bit;
            if j < i {
                continue;
            }
            let (a, b) = (corners[i], corners[j]);
            if (a.z > Z_MIN) != (b.z > Z_MIN) {
                let t = (Z_MIN - a.z) / (b.z - a.z);
                let p = a + (b - a) * t;
                if let Some(q) = camera.project(Vec3::new(p.x, p.y, Z_MIN.max(p.z))) {
                    pts.push(q);
                }
            }
        }
    }
    if pts.len() < 3 {
        return 0.0;
    }
    let hull = convex_hull(&mut pts);
    if hull.len() < 3 {
        return 0.0;
    }
    let clipped = clip_to_rect(&hull, camera.width as f64, camera.height as f64);
    if clipped.len() < 3 {
        return 0.0;
    }
    polygon_area(&clipped) / (camera.width as f64 * camera.height as f64)
}

/// Andrew monotone chain; returns counter-clockwise hull in image coords.
fn convex_hull(pts: &mut [(f64, f64)]) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Sutherland-Hodgman against the axis-aligned rectangle [0,w] x [0,h].
fn clip_to_rect(poly: &[(f64, f64)], w: f64, h: f64) -> Vec<(f64, f64)> {
    // Each edge: (inside predicate, segment intersection parameter).
    let edges: [(Box<dyn Fn((f64, f64)) -> bool>, Box<dyn Fn((f64, f64), (f64, f64)) -> (f64, f64)>); 4] = [
        (
            Box::new(move |p| p.0 >= 0.0),
            Box::new(move |a, b| lerp_at(a, b, (0.0 - a.0) / (b.0 - a.0))),
        ),
        (
            Box::new(move |p| p.0 <= w),
            Box::new(move |a, b| lerp_at(a, b, (w - a.0) / (b.0 - a.0))),
        ),
        (
            Box::new(move |p| p.1 >= 0.0),
            Box::new(move |a, b| lerp_at(a, b, (0.0 - a.1) / (b.1 - a.1))),
        ),
        (
            Box::new(move |p| p.1 <= h),
            Box::new(move |a, b| lerp_at(a, b, (h - a.1) / (b.1 - a.1))),
        ),
    ];
    let mut current = poly.to_vec();
    for (inside, intersect) in &edges {
        if current.is_empty() {
            break;
        }
        let mut next = Vec::with_capacity(current.len() + 4);
        for i in 0..current.len() {
            let a = current[i];
            let b = current[(i + 1) % current.len()];
            match (inside(a), inside(b)) {
                (true, true) => next.push(b),
                (true, false) => next.push(intersect(a, b)),
                (false, true) => {
                    next.push(intersect(a, b));
                    next.push(b);
                }
                (false, false) => {}
            }
        }
        current = next;
    }
    current
}

fn lerp_at(a: (f64, f64), b: (f64, f64), t: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc.abs() * 0.5
}
