//! Planar homographies and quadrilateral fitting for surface rectification.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::numerics::mask::{connected_components, Mask};
use crate::numerics::GeometryError;

/// 3x3 projective transform, row-major, normalized so the bottom-right
/// entry is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Homography { m: Matrix3::identity() }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.determinant().abs() <= 1e-12 {
            return Err(GeometryError::SingularHomography);
        }
        Ok(Homography { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Applies the transform to a 2-D point. Errors when the point maps to
    /// infinity (homogeneous w vanishes).
    pub fn project_point(&self, p: [f64; 2]) -> Result<[f64; 2], GeometryError> {
        let v = self.m * Vector3::new(p[0], p[1], 1.0);
        if v.z.abs() < 1e-12 {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok([v.x / v.z, v.y / v.z])
    }
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2], tol: f64) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    cross.abs() <= tol
}

/// Solves the exact 4-point correspondence `quad[i] -> target[i]` as an
/// 8x8 linear system with the bottom-right entry fixed to 1. Errors when
/// any 3 source points are collinear or the system is singular.
pub fn homography_from_corners(
    quad: &[[f64; 2]; 4],
    target: &[[f64; 2]; 4],
) -> Result<Homography, GeometryError> {
    let scale = quad
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0f64, |acc, &v| acc.max(v.abs()));
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                if collinear(quad[i], quad[j], quad[k], 1e-9 * scale * scale) {
                    return Err(GeometryError::CollinearPoints);
                }
            }
        }
    }
    let mut a = DMatrix::<f64>::zeros(8, 8);
    let mut b = DVector::<f64>::zeros(8);
    for (i, (s, t)) in quad.iter().zip(target.iter()).enumerate() {
        let (x, y) = (s[0], s[1]);
        let (u, v) = (t[0], t[1]);
        let r = 2 * i;
        a[(r, 0)] = x;
        a[(r, 1)] = y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -u * x;
        a[(r, 7)] = -u * y;
        b[r] = u;
        a[(r + 1, 3)] = x;
        a[(r + 1, 4)] = y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -v * x;
        a[(r + 1, 7)] = -v * y;
        b[r + 1] = v;
    }
    let h = a
        .full_piv_lu()
        .solve(&b)
        .ok_or(GeometryError::SingularHomography)?;
    let m = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    Homography::from_matrix(m)
}

/// Convex hull via Andrew's monotone chain; collinear points dropped.
/// Output is counter-clockwise in math axes, which reads clockwise in
/// image coordinates (y pointing down).
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        s += poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1];
    }
    s.abs() / 2.0
}

fn line_intersection(
    p1: [f64; 2],
    p2: [f64; 2],
    p3: [f64; 2],
    p4: [f64; 2],
) -> Option<[f64; 2]> {
    let d1 = [p2[0] - p1[0], p2[1] - p1[1]];
    let d2 = [p4[0] - p3[0], p4[1] - p3[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = ((p3[0] - p1[0]) * d2[1] - (p3[1] - p1[1]) * d2[0]) / denom;
    Some([p1[0] + t * d1[0], p1[1] + t * d1[1]])
}

/// Fits an enclosing quadrilateral to the largest connected component of a
/// mask by merging convex-hull edges: the edge whose removal (replacing it
/// with the intersection of its neighbors) adds the least area goes first,
/// until four edges remain. Corners are returned clockwise in image
/// coordinates starting from the top-left.
pub fn fit_quadrilateral(m: &Mask) -> Result<[[f64; 2]; 4], GeometryError> {
    if m.is_empty() {
        return Err(GeometryError::EmptyMask);
    }
    let comps = connected_components(m);
    let largest = &comps[0].0;
    let pts: Vec<[f64; 2]> = largest.iter_pixels().map(|(x, y)| [x as f64, y as f64]).collect();
    let mut hull = convex_hull(&pts);
    if hull.len() < 4 {
        return Err(GeometryError::DegenerateQuad(format!(
            "convex hull has {} vertices, need at least 4",
            hull.len()
        )));
    }
    while hull.len() > 4 {
        let n = hull.len();
        let mut best: Option<(f64, usize, [f64; 2])> = None;
        for i in 0..n {
            // remove edge (v_i, v_{i+1}); neighbors are edges
            // (v_{i-1}, v_i) and (v_{i+1}, v_{i+2})
            let a = hull[(i + n - 1) % n];
            let b = hull[i];
            let c = hull[(i + 1) % n];
            let d = hull[(i + 2) % n];
            if let Some(x) = line_intersection(a, b, d, c) {
                let added = polygon_area(&[b, x, c]);
                // intersection must extend outward past both vertices
                let along1 = (x[0] - a[0]) * (b[0] - a[0]) + (x[1] - a[1]) * (b[1] - a[1]);
                let len1 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
                let along2 = (x[0] - d[0]) * (c[0] - d[0]) + (x[1] - d[1]) * (c[1] - d[1]);
                let len2 = (c[0] - d[0]).powi(2) + (c[1] - d[1]).powi(2);
                if along1 >= len1 - 1e-9 && along2 >= len2 - 1e-9 {
                    match best {
                        Some((area, _, _)) if area <= added => {}
                        _ => best = Some((added, i, x)),
                    }
                }
            }
        }
        let (_, i, x) = best.ok_or_else(|| {
            GeometryError::DegenerateQuad("no mergeable hull edge".into())
        })?;
        let n = hull.len();
        hull[i] = x;
        hull.remove((i + 1) % n);
    }
    // order clockwise (image coords) starting from the corner nearest the
    // top-left
    let cx = hull.iter().map(|p| p[0]).sum::<f64>() / 4.0;
    let cy = hull.iter().map(|p| p[1]).sum::<f64>() / 4.0;
    hull.sort_by(|a, b| {
        let aa = (a[1] - cy).atan2(a[0] - cx);
        let bb = (b[1] - cy).atan2(b[0] - cx);
        aa.partial_cmp(&bb).unwrap()
    });
    let start = (0..4)
        .min_by(|&i, &j| {
            let si = hull[i][0] + hull[i][1];
            let sj = hull[j][0] + hull[j][1];
            si.partial_cmp(&sj).unwrap()
        })
        .unwrap();
    hull.rotate_left(start);
    Ok([hull[0], hull[1], hull[2], hull[3]])
}

/// Target corners of the unit square in the same clockwise-from-top-left
/// order that `fit_quadrilateral` produces.
pub const UNIT_SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
