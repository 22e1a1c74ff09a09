use super::{
    CameraHint, CompletedImage, DepthCompleter, DepthCompletionRequest, ImageCompleter, ImageCompletionRequest,
    ORACLE_TOLERANCE,
};
use crate::camera::{CameraView, Intrinsics, Pose};
use crate::grid::{quantize_rgb, ColorImage, DepthMap, Mask};
use crate::raster::{rasterize, RGBDView, TriangleMesh};
use crate::CompletionError;

const CACHE_SLOTS: usize = 2;

type ViewKey = Vec<u64>;

fn view_key(intr: &Intrinsics, pose: &Pose) -> ViewKey {
    let mut k: Vec<u64> = pose.rotation.iter().chain(pose.translation.iter()).map(|v| v.to_bits()).collect();
    k.extend([intr.fx, intr.fy, intr.cx, intr.cy].map(f64::to_bits));
    k.extend([intr.width as u64, intr.height as u64]);
    k
}

/// Completer that answers from renders of a ground-truth mesh.
///
/// Covered pixels are passed through untouched, every other pixel is taken
/// from the render at the target camera. The target camera is always
/// rebuilt as `anchor_pose.then(rel)`, exactly as a remote server would,
/// so in-process and over-the-wire runs see identical poses.
#[derive(Clone, Debug)]
pub struct OracleCompleter {
    mesh: TriangleMesh,
    cache: Vec<(ViewKey, RGBDView)>,
    last_camera: Option<CameraHint>,
}

impl OracleCompleter {
    pub fn new(mesh: TriangleMesh) -> Self {
        Self {
            mesh,
            cache: Vec::new(),
            last_camera: None,
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    /// Ground-truth render, served from a small cache.
    pub fn render(&mut self, intrinsics: &Intrinsics, pose: &Pose) -> &RGBDView {
        let key = view_key(intrinsics, pose);
        if let Some(pos) = self.cache.iter().position(|(k, _)| *k == key) {
            let hit = self.cache.remove(pos);
            self.cache.push(hit);
        } else {
            let view = CameraView::from_pose(*intrinsics, *pose, 0);
            let rgbd = rasterize(&self.mesh, &view);
            if self.cache.len() == CACHE_SLOTS {
                self.cache.remove(0);
            }
            self.cache.push((key, rgbd));
        }
        &self.cache.last().unwrap().1
    }
}

impl ImageCompleter for OracleCompleter {
    fn complete_image(&mut self, req: &ImageCompletionRequest<'_>) -> Result<CompletedImage, CompletionError> {
        req.validate()?;
        let hint = CameraHint {
            anchor_pose: req.anchor.view.pose,
            rel: req.rel,
            intrinsics: req.intrinsics(),
        };
        self.last_camera = Some(hint);
        let partial = req.partial;
        let gt = self.render(&hint.intrinsics, &hint.target_pose());
        let (w, h) = gt.color.dims();
        let mut color = ColorImage::new(w, h, [0.0; 3]);
        let mut foreground = Mask::new(w, h, false);
        for i in 0..w * h {
            if partial.coverage.data()[i] {
                color.data_mut()[i] = partial.color.data()[i];
                foreground.data_mut()[i] = true;
            } else if gt.mask.data()[i] {
                color.data_mut()[i] = quantize_rgb(gt.color.data()[i]);
                foreground.data_mut()[i] = true;
            }
        }
        Ok(CompletedImage {
            color,
            foreground,
            tolerance: ORACLE_TOLERANCE,
        })
    }
}

impl DepthCompleter for OracleCompleter {
    /// Without a camera hint the view of the latest image request is used.
    fn complete_depth(&mut self, req: &DepthCompletionRequest<'_>) -> Result<DepthMap, CompletionError> {
        req.validate()?;
        let hint = req.camera.or(self.last_camera).ok_or_else(|| {
            CompletionError::InvalidRequest("oracle depth completion needs a camera hint".into())
        })?;
        let gt = self.render(&hint.intrinsics, &hint.target_pose());
        if gt.depth.dims() != req.image.dims() {
            return Err(CompletionError::InvalidRequest("camera hint resolution differs from images".into()));
        }
        let (w, h) = req.image.dims();
        let mut depth = DepthMap::new(w, h, 0.0);
        let mut unresolved = Vec::new();
        for i in 0..w * h {
            if !req.foreground.data()[i] {
                continue;
            }
            let d = req.partial_depth.data()[i];
            if req.coverage.data()[i] && d > 0.0 {
                depth.data_mut()[i] = d;
            } else if gt.mask.data()[i] {
                depth.data_mut()[i] = gt.depth.data()[i];
            } else {
                unresolved.push(i);
            }
        }
        if !unresolved.is_empty() {
            // Foreground the mesh does not explain: use the median known depth.
            let mut known: Vec<f32> = depth.data().iter().copied().filter(|&d| d > 0.0).collect();
            let fill = if known.is_empty() {
                hint.target_pose().center().norm() as f32
            } else {
                known.sort_by(f32::total_cmp);
                known[(known.len() - 1) / 2]
            };
            for i in unresolved {
                depth.data_mut()[i] = fill;
            }
        }
        Ok(depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{relative_transform, RelativeTransform};
    use crate::complete::{check_depth, check_known_region, AnchorImage};
    use crate::raster::{synthetic_corpus, CorpusName, CorpusParams};
    use crate::warp::PartialView;

    fn setup() -> (OracleCompleter, AnchorImage, CameraView) {
        let mesh = synthetic_corpus(CorpusName::Sphere, &CorpusParams { subdivisions: 3, ..Default::default() });
        let intr = Intrinsics::square(64).unwrap();
        let anchor_view = CameraView::orbit(intr, 0.0, 0.0, 3.0, 0).unwrap();
        let r = rasterize(&mesh, &anchor_view);
        let anchor = AnchorImage {
            color: r.color.map(|c| quantize_rgb(*c)),
            mask: r.mask,
            view: anchor_view,
        };
        let target = CameraView::orbit(intr, 60.0, 0.0, 3.0, 1).unwrap();
        (OracleCompleter::new(mesh), anchor, target)
    }

    #[test]
    fn empty_coverage_gives_the_render() {
        let (mut o, anchor, target) = setup();
        let partial = PartialView::empty(&target);
        let out = o.complete_image(&ImageCompletionRequest::new(&anchor, &partial)).unwrap();
        let gt = rasterize(o.mesh(), &target);
        assert_eq!(out.foreground, gt.mask);
        assert_eq!(out.color, gt.color.map(|c| quantize_rgb(*c)));
    }

    #[test]
    fn full_coverage_passes_through() {
        let (mut o, anchor, _) = setup();
        let partial = PartialView {
            color: anchor.color.clone(),
            depth: DepthMap::new(64, 64, 1.0).zip_map(&anchor.mask, |&d, &m| if m { d } else { 0.0 }),
            coverage: anchor.mask.clone(),
            view: anchor.view,
        };
        let out = o.complete_image(&ImageCompletionRequest::new(&anchor, &partial)).unwrap();
        assert_eq!(out.color, anchor.color);
        let check = check_known_region(&partial, &out).unwrap();
        assert!(check.passed && check.max_color_error == 0.0);
        // idempotent
        assert_eq!(o.complete_image(&ImageCompletionRequest::new(&anchor, &partial)).unwrap(), out);
    }

    #[test]
    fn depth_with_empty_condition_is_gt() {
        let (mut o, anchor, _) = setup();
        let empty = Mask::new(64, 64, false);
        let zeros = DepthMap::new(64, 64, 0.0);
        let req = DepthCompletionRequest {
            image: &anchor.color,
            foreground: &anchor.mask,
            partial_depth: &zeros,
            coverage: &empty,
            camera: Some(CameraHint {
                anchor_pose: anchor.view.pose,
                rel: RelativeTransform::identity(),
                intrinsics: anchor.view.intrinsics,
            }),
        };
        let d = o.complete_depth(&req).unwrap();
        assert_eq!(d, rasterize(o.mesh(), &anchor.view).depth);
        check_depth(&req, &d).unwrap();
    }

    #[test]
    fn depth_agrees_with_condition() {
        let (mut o, anchor, target) = setup();
        let gt = rasterize(o.mesh(), &target);
        let coverage = Mask::from_fn(64, 64, |x, _| x < 30).and(&gt.mask);
        let partial_depth = gt.depth.zip_map(&coverage, |&d, &c| if c { d } else { 0.0 });
        let hint = CameraHint::between(&anchor.view, &target);
        let req = DepthCompletionRequest {
            image: &gt.color,
            foreground: &gt.mask,
            partial_depth: &partial_depth,
            coverage: &coverage,
            camera: Some(hint),
        };
        let d = o.complete_depth(&req).unwrap();
        assert!(check_depth(&req, &d).unwrap() <= 1e-4);
        // the rebuilt pose differs from the orbit pose only by rounding
        let rel = relative_transform(&anchor.view.pose, &target.pose);
        assert!((anchor.view.pose.then(&rel).translation - target.pose.translation).norm() < 1e-12);
    }

    #[test]
    fn background_image_gives_empty_depth() {
        let (mut o, anchor, _) = setup();
        let none = Mask::new(64, 64, false);
        let zeros = DepthMap::new(64, 64, 0.0);
        let req = DepthCompletionRequest {
            image: &anchor.color,
            foreground: &none,
            partial_depth: &zeros,
            coverage: &none,
            camera: Some(CameraHint::between(&anchor.view, &anchor.view)),
        };
        assert!(o.complete_depth(&req).unwrap().data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn depth_without_any_camera_is_rejected() {
        let (mut o, anchor, _) = setup();
        let none = Mask::new(64, 64, false);
        let zeros = DepthMap::new(64, 64, 0.0);
        let req = DepthCompletionRequest {
            image: &anchor.color,
            foreground: &anchor.mask,
            partial_depth: &zeros,
            coverage: &none,
            camera: None,
        };
        assert!(matches!(o.complete_depth(&req), Err(CompletionError::InvalidRequest(_))));
    }
}
