//! Colored, oriented point clouds built from RGBD views.

use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::grid::{Grid, Mask, Rgb};
use crate::raster::RGBDView;
use crate::spatial::PointGrid;
use crate::Vec3;

/// A point together with the surface orientation seen by the camera that
/// created it. `orientation` is unit length and faces that camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedPoint {
    pub position: Vec3,
    pub color: Rgb,
    pub orientation: Vec3,
    pub step: u32,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<OrientedPoint>,
    bbox: Option<(Vec3, Vec3)>,
}

impl PointCloud {
    pub fn new(points: Vec<OrientedPoint>) -> Self {
        let bbox = bbox_of(points.iter().map(|p| &p.position));
        Self { points, bbox }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[OrientedPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<OrientedPoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bbox(&self) -> Option<(Vec3, Vec3)> {
        self.bbox
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox.map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Keep the points for which `keep` returns true, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(usize, &OrientedPoint) -> bool) -> PointCloud {
        PointCloud::new(
            self.points
                .iter()
                .enumerate()
                .filter(|(i, p)| keep(*i, p))
                .map(|(_, p)| *p)
                .collect(),
        )
    }
}

fn bbox_of<'a>(mut it: impl Iterator<Item = &'a Vec3>) -> Option<(Vec3, Vec3)> {
    let first = *it.next()?;
    Some(it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

/// Tunables for orientation estimation from depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    /// Neighbors whose depth differs by more than this fraction of the
    /// median foreground depth are treated as across a discontinuity.
    pub discontinuity_fraction: f64,
}

impl Default for NormalParams {
    fn default() -> Self {
        Self {
            discontinuity_fraction: 0.02,
        }
    }
}

/// World-space unit normals for every masked pixel of `rgbd`, oriented
/// toward the camera. Unmasked pixels hold the zero vector.
pub fn normals_from_depth(rgbd: &RGBDView) -> Grid<Vec3> {
    normals_from_depth_with(rgbd, &NormalParams::default())
}

pub fn normals_from_depth_with(rgbd: &RGBDView, params: &NormalParams) -> Grid<Vec3> {
    let (w, h) = rgbd.depth.dims();
    let k = &rgbd.view.intrinsics;
    let valid = |x: usize, y: usize| *rgbd.mask.get(x, y) && *rgbd.depth.get(x, y) > 0.0;
    let cam = Grid::from_fn(w, h, |x, y| {
        if valid(x, y) {
            Some(k.unproject_pixel(x, y, *rgbd.depth.get(x, y) as f64))
        } else {
            None
        }
    });
    let mut fg: Vec<f32> = rgbd
        .depth
        .data()
        .iter()
        .zip(rgbd.mask.data())
        .filter(|(&d, &m)| m && d > 0.0)
        .map(|(&d, _)| d)
        .collect();
    if fg.is_empty() {
        return Grid::new(w, h, Vec3::zeros());
    }
    fg.sort_by(f32::total_cmp);
    let median = fg[(fg.len() - 1) / 2] as f64;
    let jump = params.discontinuity_fraction * median;

    let rot_t = rgbd.view.pose.rotation.transpose();
    Grid::from_fn(w, h, |x, y| {
        let Some(p) = *cam.get(x, y) else {
            return Vec3::zeros();
        };
        let neighbor = |dx: isize, dy: isize| -> Option<Vec3> {
            let q = (*cam.at(x as isize + dx, y as isize + dy)?)?;
            ((q.z - p.z).abs() <= jump).then_some(q)
        };
        let diff = |minus: Option<Vec3>, plus: Option<Vec3>| match (minus, plus) {
            (Some(a), Some(b)) => Some(b - a),
            (None, Some(b)) => Some(b - p),
            (Some(a), None) => Some(p - a),
            (None, None) => None,
        };
        let to_camera = -p.normalize();
        let n = match (diff(neighbor(-1, 0), neighbor(1, 0)), diff(neighbor(0, -1), neighbor(0, 1))) {
            (Some(dx), Some(dy)) => {
                let c = dx.cross(&dy);
                let len = c.norm();
                if len > 0.0 && len.is_finite() {
                    let n = c / len;
                    let facing = n.dot(&to_camera);
                    if facing > 0.0 {
                        n
                    } else if facing < 0.0 {
                        -n
                    } else {
                        to_camera
                    }
                } else {
                    to_camera
                }
            }
            _ => to_camera,
        };
        rot_t * n
    })
}

/// One point per masked pixel, in row-major order.
pub fn unproject(rgbd: &RGBDView) -> PointCloud {
    unproject_masked(rgbd, &rgbd.mask)
}

/// Unproject only the pixels of `select` that are also foreground.
/// Orientations are estimated from the full depth map.
pub fn unproject_masked(rgbd: &RGBDView, select: &Mask) -> PointCloud {
    let normals = normals_from_depth(rgbd);
    let view: &CameraView = &rgbd.view;
    let (w, h) = rgbd.depth.dims();
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let d = *rgbd.depth.get(x, y);
            if !*select.get(x, y) || !*rgbd.mask.get(x, y) || d <= 0.0 {
                continue;
            }
            let cam = view.intrinsics.unproject_pixel(x, y, d as f64);
            points.push(OrientedPoint {
                position: view.pose.inverse_transform(&cam),
                color: *rgbd.color.get(x, y),
                orientation: *normals.get(x, y),
                step: view.step,
            });
        }
    }
    PointCloud::new(points)
}

/// Concatenation, base points first. No deduplication.
pub fn merge(base: &PointCloud, addition: &PointCloud) -> PointCloud {
    let mut points = Vec::with_capacity(base.len() + addition.len());
    points.extend_from_slice(base.points());
    points.extend_from_slice(addition.points());
    PointCloud::new(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierParams {
    pub k: usize,
    pub sigma_mult: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        Self { k: 16, sigma_mult: 2.0 }
    }
}

/// Mean distance from each point to its `k` nearest neighbors.
pub fn mean_knn_distances(positions: &[Vec3], k: usize) -> Vec<f64> {
    let grid = PointGrid::with_nn_cell(positions.to_vec());
    (0..positions.len())
        .map(|i| {
            let nb = grid.knn_excluding(&positions[i], k, f64::INFINITY, Some(i));
            nb.iter().map(|n| n.dist2.sqrt()).sum::<f64>() / nb.len().max(1) as f64
        })
        .collect()
}

/// Drop points whose mean k-NN distance exceeds `mu + sigma_mult * sigma`
/// of the cloud. Clouds with at most `k` points are returned unchanged.
pub fn remove_statistical_outliers(pc: &PointCloud, params: &OutlierParams) -> PointCloud {
    assert!(params.k >= 1, "outlier removal needs k >= 1");
    if pc.len() <= params.k {
        return pc.clone();
    }
    let d = mean_knn_distances(&pc.positions(), params.k);
    let n = d.len() as f64;
    let mu = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    // Symmetric clouds give identical distances up to rounding; treat that
    // spread as zero rather than cutting on floating-point noise.
    let sd = var.sqrt();
    let sd = if sd <= 1e-9 * mu { 0.0 } else { sd };
    let threshold = mu + params.sigma_mult * sd + 1e-12 * mu;
    pc.filter(|i, _| d[i] <= threshold)
}
