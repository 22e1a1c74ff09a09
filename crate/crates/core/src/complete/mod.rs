//! Completion contracts for the image and depth models, the mesh-backed
//! oracle, the HTTP client and server, and depth alignment.

mod oracle;
mod remote;
mod server;
pub mod wire;

pub use oracle::OracleCompleter;
pub use remote::{remote_depth_completer, remote_image_completer, RemoteCompleter, RemoteConfig, ENV_BACKEND_URL};
pub use server::{OracleServer, ServerOptions};

use serde::{Deserialize, Serialize};

use crate::camera::{relative_transform, CameraView, Intrinsics, Pose, RelativeTransform};
use crate::grid::{ColorImage, DepthMap, Mask};
use crate::warp::PartialView;
use crate::CompletionError;

/// Known-region tolerance of the oracle (one 8-bit step).
pub const ORACLE_TOLERANCE: f64 = 1.0 / 255.0;
/// Largest tolerance a remote backend may report.
pub const MAX_REMOTE_TOLERANCE: f64 = 16.0 / 255.0;
/// Depth agreement of the oracle on covered pixels, scene units.
pub const ORACLE_DEPTH_TOLERANCE: f64 = 1e-4;

/// The input view: color, foreground mask and camera.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorImage {
    pub color: ColorImage,
    pub mask: Mask,
    pub view: CameraView,
}

#[derive(Clone, Copy, Debug)]
pub struct ImageCompletionRequest<'a> {
    pub anchor: &'a AnchorImage,
    pub partial: &'a PartialView,
    /// Anchor camera frame to target camera frame.
    pub rel: RelativeTransform,
}

impl<'a> ImageCompletionRequest<'a> {
    pub fn new(anchor: &'a AnchorImage, partial: &'a PartialView) -> Self {
        Self {
            anchor,
            partial,
            rel: relative_transform(&anchor.view.pose, &partial.view.pose),
        }
    }

    pub fn validate(&self) -> Result<(), CompletionError> {
        let dims = self.partial.coverage.dims();
        if self.anchor.color.dims() != dims
            || self.anchor.mask.dims() != dims
            || self.partial.color.dims() != dims
            || self.partial.depth.dims() != dims
        {
            return Err(CompletionError::InvalidRequest("anchor and partial dimensions differ".into()));
        }
        Ok(())
    }

    /// Intrinsics of the target camera.
    pub fn intrinsics(&self) -> Intrinsics {
        self.partial.view.intrinsics
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletedImage {
    pub color: ColorImage,
    pub foreground: Mask,
    /// Known-region tolerance declared by the backend.
    pub tolerance: f64,
}

/// Where the depth request's camera sits, for completers that need it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraHint {
    pub anchor_pose: Pose,
    pub rel: RelativeTransform,
    pub intrinsics: Intrinsics,
}

impl CameraHint {
    pub fn between(anchor: &CameraView, target: &CameraView) -> Self {
        Self {
            anchor_pose: anchor.pose,
            rel: relative_transform(&anchor.pose, &target.pose),
            intrinsics: target.intrinsics,
        }
    }

    pub fn target_pose(&self) -> Pose {
        self.anchor_pose.then(&self.rel)
    }

    pub fn target_view(&self) -> CameraView {
        CameraView::from_pose(self.intrinsics, self.target_pose(), 0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DepthCompletionRequest<'a> {
    pub image: &'a ColorImage,
    pub foreground: &'a Mask,
    pub partial_depth: &'a DepthMap,
    pub coverage: &'a Mask,
    pub camera: Option<CameraHint>,
}

impl DepthCompletionRequest<'_> {
    pub fn validate(&self) -> Result<(), CompletionError> {
        let dims = self.image.dims();
        if self.foreground.dims() != dims || self.partial_depth.dims() != dims || self.coverage.dims() != dims {
            return Err(CompletionError::InvalidRequest("depth request dimensions differ".into()));
        }
        if let Some(c) = &self.camera {
            if (c.intrinsics.width, c.intrinsics.height) != dims {
                return Err(CompletionError::InvalidRequest("camera hint resolution differs from images".into()));
            }
        }
        Ok(())
    }
}

/// Realizes the image model: fills the unknown pixels of a warped view.
pub trait ImageCompleter {
    fn complete_image(&mut self, req: &ImageCompletionRequest<'_>) -> Result<CompletedImage, CompletionError>;
}

/// Realizes the depth model: predicts depth for a completed image,
/// conditioned on the warped partial depth.
pub trait DepthCompleter {
    fn complete_depth(&mut self, req: &DepthCompletionRequest<'_>) -> Result<DepthMap, CompletionError>;
}

impl<T: ImageCompleter + ?Sized> ImageCompleter for Box<T> {
    fn complete_image(&mut self, req: &ImageCompletionRequest<'_>) -> Result<CompletedImage, CompletionError> {
        (**self).complete_image(req)
    }
}

impl<T: DepthCompleter + ?Sized> DepthCompleter for Box<T> {
    fn complete_depth(&mut self, req: &DepthCompletionRequest<'_>) -> Result<DepthMap, CompletionError> {
        (**self).complete_depth(req)
    }
}

/// Outcome of the known-region check on one completed image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractCheck {
    /// Largest per-channel color difference over covered pixels.
    pub max_color_error: f64,
    pub tolerance: f64,
    /// Covered pixels missing from the completed foreground.
    pub coverage_outside_foreground: usize,
    pub passed: bool,
}

impl ContractCheck {
    pub fn into_result(self) -> Result<Self, CompletionError> {
        if self.coverage_outside_foreground > 0 {
            return Err(CompletionError::ForegroundShrank {
                pixels: self.coverage_outside_foreground,
            });
        }
        if !self.passed {
            return Err(CompletionError::ContractViolation {
                max_error: self.max_color_error,
                tolerance: self.tolerance,
            });
        }
        Ok(self)
    }
}

pub fn check_known_region(partial: &PartialView, completed: &CompletedImage) -> Result<ContractCheck, CompletionError> {
    let dims = partial.coverage.dims();
    if completed.color.dims() != dims || completed.foreground.dims() != dims {
        return Err(CompletionError::MalformedResponse(format!(
            "completed image is {:?}, expected {:?}",
            completed.color.dims(),
            dims
        )));
    }
    let mut max_err = 0.0f64;
    let mut outside = 0;
    for i in 0..partial.coverage.data().len() {
        if !partial.coverage.data()[i] {
            continue;
        }
        let (a, b) = (partial.color.data()[i], completed.color.data()[i]);
        for ch in 0..3 {
            max_err = max_err.max((a[ch] as f64 - b[ch] as f64).abs());
        }
        if !completed.foreground.data()[i] {
            outside += 1;
        }
    }
    // A hair of slack for f32 color arithmetic.
    let passed = outside == 0 && max_err <= completed.tolerance + 1e-6;
    Ok(ContractCheck {
        max_color_error: max_err,
        tolerance: completed.tolerance,
        coverage_outside_foreground: outside,
        passed,
    })
}

/// Checks the depth contract: positive finite depth on every foreground
/// pixel. Returns the largest disagreement with the partial depth on
/// covered foreground pixels.
pub fn check_depth(req: &DepthCompletionRequest<'_>, depth: &DepthMap) -> Result<f64, CompletionError> {
    if depth.dims() != req.image.dims() {
        return Err(CompletionError::MalformedResponse(format!(
            "depth map is {:?}, expected {:?}",
            depth.dims(),
            req.image.dims()
        )));
    }
    let mut max_err = 0.0f64;
    for i in 0..depth.data().len() {
        if !req.foreground.data()[i] {
            continue;
        }
        let d = depth.data()[i];
        if !(d.is_finite() && d > 0.0) {
            return Err(CompletionError::InvalidDepth { index: i, value: d as f64 });
        }
        if req.coverage.data()[i] {
            max_err = max_err.max((d as f64 - req.partial_depth.data()[i] as f64).abs());
        }
    }
    Ok(max_err)
}

// ---------------------------------------------------------------- alignment

/// Dilation of the inpaint region that bounds the alignment support.
pub const ALIGN_SUPPORT_RADIUS: f64 = 4.0;
const ALIGN_MIN_OVERLAP: usize = 10;
const ALIGN_MIN_VARIANCE: f64 = 1e-12;

/// Fitted affine correction `aligned = scale * pred + shift`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFit {
    pub scale: f64,
    pub shift: f64,
    pub overlap: usize,
    /// RMS of `scale * pred + shift - warped` over the overlap.
    pub rms_residual: f64,
    /// True when the scale was pinned to 1.
    pub fallback: bool,
}

/// Aligns predicted depth to the warped depth on the overlap between the
/// covered pixels and a 4-px neighborhood of the inpaint region.
///
/// Inpaint pixels that are not covered get `scale * pred + shift`; covered
/// pixels keep the warped depth; everything else is zero.
pub fn align_inpainted_depth(
    pred: &DepthMap,
    warped_depth: &DepthMap,
    coverage: &Mask,
    inpaint: &Mask,
) -> crate::Result<(DepthMap, AlignmentFit)> {
    if !(pred.same_dims(warped_depth) && pred.same_dims(coverage) && pred.same_dims(inpaint)) {
        return Err(crate::Error::invalid("alignment inputs differ in size"));
    }
    let support = inpaint.dilate_disk(ALIGN_SUPPORT_RADIUS);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..pred.data().len() {
        let (p, w) = (pred.data()[i] as f64, warped_depth.data()[i] as f64);
        if coverage.data()[i] && support.data()[i] && p > 0.0 && w > 0.0 && p.is_finite() {
            xs.push(p);
            ys.push(w);
        }
    }
    let fit = fit_affine(&xs, &ys);
    let out = DepthMap::from_fn(pred.width(), pred.height(), |x, y| {
        if *coverage.get(x, y) {
            *warped_depth.get(x, y)
        } else if *inpaint.get(x, y) {
            (fit.scale * *pred.get(x, y) as f64 + fit.shift) as f32
        } else {
            0.0
        }
    });
    Ok((out, fit))
}

/// Least-squares `y ≈ s x + b` with the documented fallbacks.
pub fn fit_affine(xs: &[f64], ys: &[f64]) -> AlignmentFit {
    let n = xs.len();
    if n == 0 {
        return AlignmentFit {
            scale: 1.0,
            shift: 0.0,
            overlap: 0,
            rms_residual: 0.0,
            fallback: true,
        };
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    let sxy = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
    let (scale, shift, fallback) = if n < ALIGN_MIN_OVERLAP || sxx / nf < ALIGN_MIN_VARIANCE {
        (1.0, my - mx, true)
    } else {
        let s = sxy / sxx;
        (s, my - s * mx, false)
    };
    let rss = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (scale * x + shift - y).powi(2))
        .sum::<f64>();
    AlignmentFit {
        scale,
        shift,
        overlap: n,
        rms_residual: (rss / nf).sqrt(),
        fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ring_fixture(n: usize) -> (DepthMap, Mask, Mask) {
        // left half covered with a depth ramp, right half to be inpainted
        let truth = DepthMap::from_fn(n, n, |x, y| 1.0 + 0.02 * x as f32 + 0.01 * y as f32);
        let coverage = Mask::from_fn(n, n, |x, _| x < n / 2);
        let inpaint = Mask::from_fn(n, n, |x, _| x >= n / 2);
        (truth, coverage, inpaint)
    }

    #[test]
    fn identical_prediction_needs_no_correction() {
        let (truth, cov, inp) = ring_fixture(32);
        let (out, fit) = align_inpainted_depth(&truth, &truth, &cov, &inp).unwrap();
        assert!((fit.scale - 1.0).abs() < 1e-9 && fit.shift.abs() < 1e-9);
        assert_eq!(out, truth);
    }

    #[test]
    fn doubled_prediction_halves() {
        let (truth, cov, inp) = ring_fixture(32);
        let pred = truth.map(|d| 2.0 * d);
        let (_, fit) = align_inpainted_depth(&pred, &truth, &cov, &inp).unwrap();
        assert!((fit.scale - 0.5).abs() < 1e-9, "{fit:?}");
        assert!(fit.shift.abs() < 1e-9);
    }

    #[test]
    fn noisy_affine_recovered() {
        let (truth, cov, inp) = ring_fixture(64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1e-3).unwrap();
        let pred = truth.map(|&d| (0.8 * d as f64 + 0.3 + noise.sample(&mut rng)) as f32);
        let (_, fit) = align_inpainted_depth(&pred, &truth, &cov, &inp).unwrap();
        // brute-force normal equations on the same overlap
        let support = inp.dilate_disk(ALIGN_SUPPORT_RADIUS);
        let (mut a, mut b, mut c, mut d, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..pred.data().len() {
            if cov.data()[i] && support.data()[i] {
                let (x, y) = (pred.data()[i] as f64, truth.data()[i] as f64);
                a += x * x;
                b += x;
                c += x * y;
                d += y;
                n += 1.0;
            }
        }
        let det = a * n - b * b;
        let s = (c * n - b * d) / det;
        let sh = (a * d - b * c) / det;
        assert!((fit.scale - s).abs() < 1e-9 && (fit.shift - sh).abs() < 1e-9);
        assert!((fit.scale - 1.25).abs() < 1e-2, "{fit:?}");
        assert!((fit.shift + 0.375).abs() < 1e-2, "{fit:?}");
    }

    #[test]
    fn tiny_overlap_falls_back_to_shift() {
        let truth = DepthMap::new(8, 8, 2.0);
        let pred = DepthMap::new(8, 8, 1.5);
        let cov = Mask::from_fn(8, 8, |x, y| x == 0 && y < 3);
        let inp = Mask::from_fn(8, 8, |x, _| x > 0);
        let (out, fit) = align_inpainted_depth(&pred, &truth, &cov, &inp).unwrap();
        assert!(fit.fallback && fit.scale == 1.0);
        assert!((fit.shift - 0.5).abs() < 1e-12);
        assert_eq!(*out.get(4, 4), 2.0);
        // no overlap at all: identity
        let (_, fit) = align_inpainted_depth(&pred, &truth, &Mask::new(8, 8, false), &inp).unwrap();
        assert_eq!((fit.scale, fit.shift, fit.overlap), (1.0, 0.0, 0));
    }

    #[test]
    fn covered_pixels_keep_warped_depth() {
        let (truth, cov, inp) = ring_fixture(32);
        let pred = truth.map(|d| 3.0 * d + 1.0);
        let inp_with_ring = inp.dilate_disk(2.0);
        let (out, _) = align_inpainted_depth(&pred, &truth, &cov, &inp_with_ring).unwrap();
        for i in 0..out.data().len() {
            if cov.data()[i] {
                assert_eq!(out.data()[i], truth.data()[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn affine_prediction_aligns_exactly(s in 0.3f64..3.0, b in -1.0f64..1.0, n in 10usize..200) {
            let xs: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * i as f64 % 2.3).collect();
            let ys: Vec<f64> = xs.iter().map(|x| s * x + b).collect();
            let fit = fit_affine(&xs, &ys);
            prop_assert!(!fit.fallback);
            prop_assert!(fit.rms_residual < 1e-9);
            prop_assert!((fit.scale - s).abs() < 1e-9 && (fit.shift - b).abs() < 1e-9);
        }
    }
}
