//! Projection of the evolving point cloud into a target camera.
//!
//! Points are splatted to single pixels with a z-test, back-facing points
//! are culled, and a single 3x3 median pass closes isolated pinholes. The
//! result is the incomplete color/depth/coverage triple that conditions
//! the completers.

use crate::camera::CameraView;
use crate::cloud::PointCloud;
use crate::grid::{ColorImage, DepthMap, Grid, Mask};
use crate::{Error, Result};

/// Uncovered pixels with at least this many covered 8-neighbors are filled.
pub const MICRO_FILL_MIN_NEIGHBORS: usize = 5;

/// Default dilation radius (pixels) for the inpaint-region border.
pub const DEFAULT_BORDER_RADIUS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PartialView {
    pub color: ColorImage,
    pub depth: DepthMap,
    pub coverage: Mask,
    pub view: CameraView,
}

impl PartialView {
    pub fn empty(view: &CameraView) -> Self {
        let (w, h) = (view.width(), view.height());
        Self {
            color: ColorImage::new(w, h, [0.0; 3]),
            depth: DepthMap::new(w, h, 0.0),
            coverage: Mask::new(w, h, false),
            view: *view,
        }
    }
}

/// Which point produced each pixel: `Splat(i)` for a direct hit by point
/// `i`, `Filled` for a micro-filled pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelSource {
    Empty,
    Splat(usize),
    Filled,
}

pub fn project(pc: &PointCloud, view: &CameraView) -> PartialView {
    project_with_sources(pc, view).0
}

/// [`project`] plus the per-pixel provenance map.
pub fn project_with_sources(pc: &PointCloud, view: &CameraView) -> (PartialView, Grid<PixelSource>) {
    let (w, h) = (view.width(), view.height());
    let center = view.center();
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut winner = vec![usize::MAX; w * h];
    for (i, p) in pc.points().iter().enumerate() {
        let to_cam = center - p.position;
        let len = to_cam.norm();
        if len <= 0.0 || p.orientation.dot(&(to_cam / len)) <= 0.0 {
            continue;
        }
        let Some((x, y, z)) = view.project_to_pixel(&p.position) else {
            continue;
        };
        let idx = y * w + x;
        if z < zbuf[idx] {
            zbuf[idx] = z;
            winner[idx] = i;
        }
    }

    let mut out = PartialView::empty(view);
    let mut sources = Grid::new(w, h, PixelSource::Empty);
    for idx in 0..w * h {
        if winner[idx] != usize::MAX {
            let p = &pc.points()[winner[idx]];
            out.color.data_mut()[idx] = p.color;
            out.depth.data_mut()[idx] = zbuf[idx] as f32;
            out.coverage.data_mut()[idx] = true;
            sources.data_mut()[idx] = PixelSource::Splat(winner[idx]);
        }
    }

    // Single micro-fill pass reading only the splatted coverage.
    let splatted = out.coverage.clone();
    let mut depths: Vec<f32> = Vec::with_capacity(8);
    let mut chans: [Vec<f32>; 3] = [Vec::with_capacity(8), Vec::with_capacity(8), Vec::with_capacity(8)];
    for y in 0..h {
        for x in 0..w {
            if *splatted.get(x, y) {
                continue;
            }
            depths.clear();
            chans.iter_mut().for_each(|c| c.clear());
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if splatted.at(nx, ny) == Some(&true) {
                        let (nx, ny) = (nx as usize, ny as usize);
                        depths.push(*out.depth.get(nx, ny));
                        let c = out.color.get(nx, ny);
                        for ch in 0..3 {
                            chans[ch].push(c[ch]);
                        }
                    }
                }
            }
            if depths.len() < MICRO_FILL_MIN_NEIGHBORS {
                continue;
            }
            let d = lower_median(&mut depths);
            let c = [lower_median(&mut chans[0]), lower_median(&mut chans[1]), lower_median(&mut chans[2])];
            out.depth.set(x, y, d);
            out.color.set(x, y, c);
            out.coverage.set(x, y, true);
            sources.set(x, y, PixelSource::Filled);
        }
    }
    (out, sources)
}

/// Lower median: element `(n - 1) / 2` of the sorted values. Always one of
/// the inputs, so 8-bit colors stay on their lattice.
fn lower_median(v: &mut [f32]) -> f32 {
    v.sort_by(f32::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Pixels of the completed foreground that the warp did not cover, grown
/// by a disk of `border_radius` pixels into the covered area and clipped
/// to the completed foreground.
pub fn inpaint_region(partial: &PartialView, completed_mask: &Mask, border_radius: f64) -> Result<Mask> {
    if !partial.coverage.same_dims(completed_mask) {
        return Err(Error::invalid("completed mask and coverage dimensions differ"));
    }
    let missing = completed_mask.and_not(&partial.coverage);
    Ok(missing.dilate_disk(border_radius).and(completed_mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::cloud::OrientedPoint;
    use crate::Vec3;
    use proptest::prelude::*;

    fn view() -> CameraView {
        CameraView::orbit(Intrinsics::square(32).unwrap(), 0.0, 0.0, 3.0, 1).unwrap()
    }

    fn point_at_pixel(v: &CameraView, x: usize, y: usize, z: f64, color: [f32; 3]) -> OrientedPoint {
        let world = v.pose.inverse_transform(&v.intrinsics.unproject_pixel(x, y, z));
        OrientedPoint {
            position: world,
            color,
            orientation: (v.center() - world).normalize(),
            step: 0,
        }
    }

    #[test]
    fn empty_cloud_has_no_coverage() {
        let p = project(&PointCloud::empty(), &view());
        assert!(p.coverage.is_empty_mask());
    }

    #[test]
    fn back_facing_point_is_culled() {
        let v = view();
        let mut p = point_at_pixel(&v, 10, 10, 2.0, [1.0; 3]);
        p.orientation = -p.orientation;
        assert!(project(&PointCloud::new(vec![p]), &v).coverage.is_empty_mask());
        // exactly perpendicular is also culled
        let q = point_at_pixel(&v, 10, 10, 2.0, [1.0; 3]);
        let perp = (v.center() - q.position).normalize().cross(&Vec3::y()).normalize();
        let q = OrientedPoint { orientation: perp, ..q };
        assert!(project(&PointCloud::new(vec![q]), &v).coverage.is_empty_mask());
    }

    #[test]
    fn nearer_point_on_a_ray_wins() {
        let v = view();
        let far = point_at_pixel(&v, 12, 7, 2.0, [1.0, 0.0, 0.0]);
        let near = point_at_pixel(&v, 12, 7, 1.0, [0.0, 1.0, 0.0]);
        for pts in [vec![far, near], vec![near, far]] {
            let p = project(&PointCloud::new(pts), &v);
            assert!((*p.depth.get(12, 7) - 1.0).abs() < 1e-6);
            assert_eq!(*p.color.get(12, 7), [0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn micro_fill_closes_pinholes() {
        let v = view();
        let mut pts = Vec::new();
        for y in 5..15 {
            for x in 5..15 {
                if (x, y) != (9, 9) {
                    pts.push(point_at_pixel(&v, x, y, 2.0 + 0.01 * x as f64, [x as f32 / 32.0, 0.5, 0.5]));
                }
            }
        }
        let (p, src) = project_with_sources(&PointCloud::new(pts), &v);
        assert!(*p.coverage.get(9, 9));
        assert_eq!(*src.get(9, 9), PixelSource::Filled);
        // neighbor depths 2.08 x3, 2.09 x2, 2.10 x3: lower median is 2.09
        assert!((*p.depth.get(9, 9) - 2.09).abs() < 1e-5);
        assert_eq!(*p.color.get(9, 9), [9.0 / 32.0, 0.5, 0.5]);
        // a corner pixel outside the block has only 1 neighbor: untouched
        assert!(!*p.coverage.get(4, 4));
    }

    #[test]
    fn inpaint_region_edge_cases() {
        let v = view();
        let mut partial = PartialView::empty(&v);
        let mut completed = Mask::new(32, 32, false);
        for y in 8..24 {
            for x in 8..24 {
                completed.set(x, y, true);
            }
        }
        // empty coverage -> whole completed mask
        assert_eq!(inpaint_region(&partial, &completed, 2.0).unwrap(), completed);
        // coverage contains the completed mask -> nothing to inpaint
        partial.coverage = Mask::new(32, 32, true);
        assert!(inpaint_region(&partial, &completed, 2.0).unwrap().is_empty_mask());
        assert!(inpaint_region(&partial, &Mask::new(8, 8, true), 2.0).is_err());
    }

    #[test]
    fn half_covered_disk() {
        let v = view();
        let disk = Mask::from_fn(32, 32, |x, y| {
            let (dx, dy) = (x as f64 - 15.5, y as f64 - 15.5);
            dx * dx + dy * dy <= 100.0
        });
        let mut partial = PartialView::empty(&v);
        partial.coverage = disk.zip_map(&Mask::from_fn(32, 32, |x, _| x < 16), |&a, &b| a && b);
        let region = inpaint_region(&partial, &disk, 2.0).unwrap();
        // brute force: uncovered half plus disk pixels within 2 px of it
        let expected = Mask::from_fn(32, 32, |x, y| {
            if !*disk.get(x, y) {
                return false;
            }
            if x >= 16 {
                return true;
            }
            (-2isize..=2).any(|dy| {
                (-2isize..=2).any(|dx| {
                    dx * dx + dy * dy <= 4
                        && disk.at(x as isize + dx, y as isize + dy) == Some(&true)
                        && x as isize + dx >= 16
                })
            })
        });
        assert_eq!(region, expected);
        // ring extends exactly 2 columns into the covered half on the axis
        assert!(*region.get(14, 15) && !*region.get(13, 15));
    }

    proptest! {
        #[test]
        fn projection_is_order_invariant_and_sound(
            raw in proptest::collection::vec((0usize..32, 0usize..32, 1.0f64..3.0, any::<bool>()), 0..120),
            seed in any::<u64>(),
        ) {
            let v = view();
            let pts: Vec<OrientedPoint> = raw.iter().enumerate().map(|(i, &(x, y, z, flip))| {
                let mut p = point_at_pixel(&v, x, y, z, [i as f32 / 120.0, 0.0, 0.0]);
                if flip { p.orientation = -p.orientation; }
                p
            }).collect();
            let mut shuffled = pts.clone();
            // deterministic permutation
            let n = shuffled.len();
            if n > 1 {
                for i in 0..n { shuffled.swap(i, (seed as usize).wrapping_add(i * 7919) % n); }
            }
            let a = project(&PointCloud::new(pts.clone()), &v);
            let (b, src) = project_with_sources(&PointCloud::new(shuffled.clone()), &v);
            prop_assert_eq!(&a.depth, &b.depth);
            prop_assert_eq!(&a.coverage, &b.coverage);
            for s in src.data() {
                if let PixelSource::Splat(i) = s {
                    let p = &shuffled[*i];
                    prop_assert!(p.orientation.dot(&(v.center() - p.position).normalize()) > 0.0);
                }
            }
            for (&c, &d) in b.coverage.data().iter().zip(b.depth.data()) {
                prop_assert_eq!(c, d > 0.0);
            }
        }
    }
}
