//! Point clouds, plane fitting, and pinhole backprojection.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::numerics::mask::Mask;
use crate::numerics::GeometryError;

/// Default inlier distance (normalized depth units) for the second plane
/// fitting round.
pub const DEFAULT_PLANE_INLIER_THRESHOLD: f64 = 0.05;

/// Pinhole intrinsics. Depth maps here hold relative depth, so only
/// ordinal and ratio geometry derived from these is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn default_for(width: u32, height: u32) -> Self {
        Intrinsics {
            fx: 0.8 * width as f64,
            fy: 0.8 * width as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(())
    }
}

/// Per-frame relative depth, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, GeometryError> {
        if values.len() != (width as usize) * (height as usize) {
            return Err(GeometryError::InvalidDepth(format!(
                "expected {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(GeometryError::InvalidDepth("values must lie in [0, 1]".into()));
        }
        Ok(DepthMap { width, height, values })
    }

    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    /// Median depth over a mask's pixels; `None` for an empty mask.
    pub fn median_over(&self, mask: &Mask) -> Option<f64> {
        let mut vals: Vec<f32> = mask
            .iter_pixels()
            .filter(|&(x, y)| x < self.width && y < self.height)
            .map(|(x, y)| self.at(x, y))
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(vals[vals.len() / 2] as f64)
    }

    /// Minimum and maximum depth over a mask's pixels.
    pub fn span_over(&self, mask: &Mask) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (x, y) in mask.iter_pixels() {
            if x < self.width && y < self.height {
                let v = self.at(x, y) as f64;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if lo.is_finite() {
            Some((lo, hi))
        } else {
            None
        }
    }
}

/// Camera-frame points in relative-depth units, with optional per-point
/// object ids.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub object_ids: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64)
    }
}

/// Plane in Hessian form `n . p = d` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (self.normal.dot(p) - self.offset).abs()
    }
}

fn tls_plane(points: &[Vector3<f64>]) -> Result<Plane, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::DegeneratePlane("need at least 3 points".into()));
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    // sort eigenpairs ascending by eigenvalue
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let (lo, mid, hi) = (order[0], order[1], order[2]);
    let max_ev = eig.eigenvalues[hi].max(f64::MIN_POSITIVE);
    let _ = lo;
    if eig.eigenvalues[mid] <= 1e-10 * max_ev {
        return Err(GeometryError::DegeneratePlane("points are collinear".into()));
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    normal.normalize_mut();
    let mut offset = normal.dot(&centroid);
    // orient toward the camera at the origin
    if offset > 0.0 || (offset == 0.0 && normal.z > 0.0) {
        normal = -normal;
        offset = -offset;
    }
    Ok(Plane { normal, offset })
}

/// Plane fit with inlier refinement: gross outliers are dropped by the
/// same k-nearest-neighbor rule used for point clouds (a single far point
/// would otherwise dominate the covariance and flip the first normal into
/// the plane), then total least squares, then one refit on the points
/// within `inlier_threshold` of the first plane. The normal is oriented to
/// face the camera origin. Errors on fewer than 3 points or collinear
/// input.
pub fn fit_plane(points: &[Vector3<f64>], inlier_threshold: f64) -> Result<Plane, GeometryError> {
    let prefiltered = knn_filter(points, 8, 2.0);
    let candidates: &[Vector3<f64>] =
        if prefiltered.len() >= 3 { &prefiltered } else { points };
    let first = tls_plane(candidates)?;
    let inliers: Vec<Vector3<f64>> = candidates
        .iter()
        .copied()
        .filter(|p| first.distance(p) <= inlier_threshold)
        .collect();
    if inliers.len() >= 3 && inliers.len() < candidates.len() {
        tls_plane(&inliers).or(Ok(first))
    } else {
        Ok(first)
    }
}

fn knn_filter(points: &[Vector3<f64>], k: usize, std_mult: f64) -> Vec<Vector3<f64>> {
    let cloud = PointCloud { points: points.to_vec(), object_ids: None };
    remove_statistical_outliers(&cloud, k, std_mult).points
}

/// Backprojects a depth map to a camera-frame cloud:
/// `p = ((u - cx) / fx * z, (v - cy) / fy * z, z)`. Only pixels on the
/// `stride` lattice (and inside `mask`, when given) contribute.
pub fn backproject(
    depth: &DepthMap,
    intrinsics: &Intrinsics,
    mask: Option<&Mask>,
    stride: u32,
) -> Result<PointCloud, GeometryError> {
    intrinsics.validate()?;
    let stride = stride.max(1);
    let mut points = Vec::new();
    let mut push = |x: u32, y: u32| {
        let z = depth.at(x, y) as f64;
        points.push(Vector3::new(
            (x as f64 - intrinsics.cx) / intrinsics.fx * z,
            (y as f64 - intrinsics.cy) / intrinsics.fy * z,
            z,
        ));
    };
    match mask {
        Some(m) => {
            for (x, y) in m.iter_pixels() {
                if x % stride == 0 && y % stride == 0 && x < depth.width && y < depth.height {
                    push(x, y);
                }
            }
        }
        None => {
            let mut y = 0;
            while y < depth.height {
                let mut x = 0;
                while x < depth.width {
                    push(x, y);
                    x += stride;
                }
                y += stride;
            }
        }
    }
    Ok(PointCloud { points, object_ids: None })
}

/// Drops points whose mean distance to their `k` nearest neighbors exceeds
/// the population mean plus `std_mult` standard deviations. Quadratic in
/// the cloud size; downsample first via the backprojection stride.
pub fn remove_statistical_outliers(cloud: &PointCloud, k: usize, std_mult: f64) -> PointCloud {
    let n = cloud.points.len();
    if n <= k + 1 {
        return cloud.clone();
    }
    let mut mean_dists = Vec::with_capacity(n);
    for i in 0..n {
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (cloud.points[i] - cloud.points[j]).norm())
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = d.iter().take(k).sum::<f64>() / k as f64;
        mean_dists.push(m);
    }
    let mean = mean_dists.iter().sum::<f64>() / n as f64;
    let var = mean_dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let cutoff = mean + std_mult * var.sqrt();
    let keep: Vec<usize> = (0..n).filter(|&i| mean_dists[i] <= cutoff).collect();
    PointCloud {
        points: keep.iter().map(|&i| cloud.points[i]).collect(),
        object_ids: cloud
            .object_ids
            .as_ref()
            .map(|ids| keep.iter().map(|&i| ids[i]).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn flat_plane_faces_camera() {
        let pts: Vec<Vector3<f64>> = (0..10)
            .flat_map(|i| (0..10).map(move |j| Vector3::new(i as f64 * 0.1, j as f64 * 0.1, 1.0)))
            .collect();
        let p = fit_plane(&pts, DEFAULT_PLANE_INLIER_THRESHOLD).unwrap();
        assert_abs_diff_eq!(p.normal.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.normal.y, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.normal.z, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.offset, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn outlier_is_rejected_by_second_round() {
        let mut pts: Vec<Vector3<f64>> = (0..8)
            .flat_map(|i| (0..8).map(move |j| Vector3::new(i as f64 * 0.1, j as f64 * 0.1, 1.0)))
            .collect();
        let inlier_fit = fit_plane(&pts, 0.05).unwrap();
        pts.push(Vector3::new(0.3, 0.3, 50.0));
        let robust = fit_plane(&pts, 0.05).unwrap();
        assert_abs_diff_eq!(robust.normal.z, inlier_fit.normal.z, epsilon = 1e-6);
        assert_abs_diff_eq!(robust.offset, inlier_fit.offset, epsilon = 1e-6);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<Vector3<f64>> =
            (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 3.0 * i as f64)).collect();
        assert!(matches!(
            fit_plane(&pts, 0.05),
            Err(GeometryError::DegeneratePlane(_))
        ));
    }

    #[test]
    fn random_planes_recovered_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let mut n = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..-0.2),
            );
            n.normalize_mut();
            let d: f64 = rng.gen_range(-2.0..-0.2);
            // sample points on the plane via two tangent vectors
            let t1 = n.cross(&Vector3::x()).normalize();
            let t2 = n.cross(&t1);
            let origin = n * d;
            let pts: Vec<Vector3<f64>> = (0..40)
                .map(|_| {
                    origin + t1 * rng.gen_range(-1.0..1.0) + t2 * rng.gen_range(-1.0..1.0)
                })
                .collect();
            let p = fit_plane(&pts, 0.05).unwrap();
            assert_abs_diff_eq!(p.normal.dot(&n).abs(), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(p.offset.signum(), -1.0);
            for q in &pts {
                assert_abs_diff_eq!(p.distance(q), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn principal_point_backprojects_to_axis() {
        let mut vals = vec![0.5f32; 9];
        vals[4] = 1.0; // center pixel (1,1)
        let depth = DepthMap::new(3, 3, vals).unwrap();
        let intr = Intrinsics { fx: 100.0, fy: 100.0, cx: 1.0, cy: 1.0 };
        let cloud = backproject(&depth, &intr, None, 1).unwrap();
        assert_eq!(cloud.len(), 9);
        let center = cloud.points[4];
        assert_abs_diff_eq!(center.x, 0.0);
        assert_abs_diff_eq!(center.y, 0.0);
        assert_abs_diff_eq!(center.z, 1.0);
    }

    #[test]
    fn constant_depth_yields_camera_facing_plane() {
        let depth = DepthMap::new(16, 12, vec![0.7; 192]).unwrap();
        let intr = Intrinsics::default_for(16, 12);
        let cloud = backproject(&depth, &intr, None, 1).unwrap();
        let p = fit_plane(&cloud.points, 0.05).unwrap();
        assert_abs_diff_eq!(p.normal.z, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn three_by_three_matches_hand_formula() {
        let vals: Vec<f32> = (0..9).map(|i| 0.1 * (i + 1) as f32).collect();
        let depth = DepthMap::new(3, 3, vals.clone()).unwrap();
        let intr = Intrinsics { fx: 2.0, fy: 4.0, cx: 1.5, cy: 0.5 };
        let cloud = backproject(&depth, &intr, None, 1).unwrap();
        assert_eq!(cloud.len(), 9);
        for (i, p) in cloud.points.iter().enumerate() {
            let (u, v) = ((i % 3) as f64, (i / 3) as f64);
            let z = vals[i] as f64;
            assert_abs_diff_eq!(p.x, (u - 1.5) / 2.0 * z, epsilon = 1e-12);
            assert_abs_diff_eq!(p.y, (v - 0.5) / 4.0 * z, epsilon = 1e-12);
            assert_abs_diff_eq!(p.z, z, epsilon = 1e-12);
        }
    }

    #[test]
    fn stride_reduces_count_quadratically() {
        let depth = DepthMap::new(20, 20, vec![0.5; 400]).unwrap();
        let intr = Intrinsics::default_for(20, 20);
        let full = backproject(&depth, &intr, None, 1).unwrap();
        let strided = backproject(&depth, &intr, None, 2).unwrap();
        assert_eq!(full.len(), 400);
        assert_eq!(strided.len(), 100);
    }

    #[test]
    fn outlier_removal_drops_far_point() {
        let mut points: Vec<Vector3<f64>> = (0..20)
            .map(|i| Vector3::new((i % 5) as f64 * 0.01, (i / 5) as f64 * 0.01, 1.0))
            .collect();
        points.push(Vector3::new(10.0, 10.0, 10.0));
        let cloud = PointCloud { points, object_ids: None };
        let cleaned = remove_statistical_outliers(&cloud, 8, 2.0);
        assert_eq!(cleaned.len(), 20);
    }
}
