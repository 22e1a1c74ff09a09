//! Progressive reconstruction and single-view editing.
//!
//! Each step projects the current cloud into the next camera, completes
//! the image and depth, aligns the new depth to the projected geometry and
//! unprojects only the inpainted pixels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{
    trajectory, wrap_degrees, CameraView, Intrinsics, Trajectory, TrajectoryJson, TrajectoryKind, TrajectoryParams,
    ViewJson, ViewRole, DEFAULT_FOV_DEG,
};
use crate::cloud::{merge, remove_statistical_outliers, unproject, unproject_masked, OutlierParams, PointCloud};
use crate::complete::{
    align_inpainted_depth, check_depth, check_known_region, AlignmentFit, AnchorImage, CameraHint, CompletedImage,
    ContractCheck, DepthCompleter, DepthCompletionRequest, ImageCompleter, ImageCompletionRequest,
};
use crate::grid::{quantize_rgb, DepthMap, Mask};
use crate::metrics::cvcs;
use crate::meshing::MeshingParams;
use crate::raster::{RGBDView, TriangleMesh};
use crate::robust::{clip_far_depth_quantile, detect_open_holes, HoleParams};
use crate::warp::{inpaint_region, project, PartialView, DEFAULT_BORDER_RADIUS};
use crate::{io, Error, Result};

/// Default orbit radius of the trajectory cameras.
pub const DEFAULT_RADIUS: f64 = 3.0;
pub const DEFAULT_RESOLUTION: usize = 512;
pub const DEFAULT_DEGREE: f64 = 60.0;
pub const DEFAULT_INPAINT_COUNT: usize = 4;
pub const MIN_RESOLUTION: usize = 64;
/// Default removal thickness as a fraction of the cloud's bbox diagonal.
pub const DEFAULT_THICKNESS_FRACTION: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Oracle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mesh: Option<PathBuf>,
    },
    Remote {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Oracle { mesh: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub trajectory: TrajectoryKind,
    pub degree_deg: f64,
    /// Zigzag: visit the negative azimuth first.
    pub start_negative: bool,
    pub resolution: usize,
    pub fov_deg: f64,
    pub radius: f64,
    pub inpaint_count: usize,
    pub seed: u64,
    pub outlier_removal: bool,
    pub hole_detection: bool,
    pub far_clip: bool,
    pub outlier: OutlierParams,
    pub hole: HoleParams,
    /// Pixels the inpaint region reaches into the covered area.
    pub border_radius: f64,
    pub far_clip_quantile: f64,
    /// Also far-clip at the 180 degree closure view.
    pub far_clip_at_closure: bool,
    /// Point-to-mesh settings for the run directory's `mesh.ply`.
    pub meshing: MeshingParams,
    pub backend: BackendConfig,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::Zigzag,
            degree_deg: DEFAULT_DEGREE,
            start_negative: false,
            resolution: DEFAULT_RESOLUTION,
            fov_deg: DEFAULT_FOV_DEG,
            radius: DEFAULT_RADIUS,
            inpaint_count: DEFAULT_INPAINT_COUNT,
            seed: 0,
            outlier_removal: true,
            hole_detection: true,
            far_clip: true,
            outlier: OutlierParams::default(),
            hole: HoleParams::default(),
            border_radius: DEFAULT_BORDER_RADIUS,
            far_clip_quantile: 0.5,
            far_clip_at_closure: false,
            meshing: MeshingParams::default(),
            backend: BackendConfig::default(),
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < MIN_RESOLUTION {
            return Err(Error::invalid(format!(
                "resolution {} is below the minimum {MIN_RESOLUTION}",
                self.resolution
            )));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::invalid(format!("radius {} must be positive", self.radius)));
        }
        if !(self.hole.epsilon > 0.0 && self.hole.epsilon <= 1.0) {
            return Err(Error::invalid(format!("hole epsilon {} outside (0, 1]", self.hole.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.far_clip_quantile) {
            return Err(Error::invalid("far_clip_quantile outside [0, 1]"));
        }
        if !(self.border_radius >= 0.0) {
            return Err(Error::invalid("border_radius must be non-negative"));
        }
        if self.outlier.k == 0 {
            return Err(Error::invalid("outlier k must be at least 1"));
        }
        self.intrinsics()?;
        self.trajectory_for(self.intrinsics()?).map(|_| ())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::from_fov(self.fov_deg, self.resolution, self.resolution)
    }

    pub fn trajectory_params(&self, intrinsics: Intrinsics) -> TrajectoryParams {
        TrajectoryParams {
            degree_deg: self.degree_deg,
            radius: self.radius,
            intrinsics,
            inpaint_count: self.inpaint_count,
            seed: self.seed,
            start_negative: self.start_negative,
        }
    }

    pub fn trajectory_for(&self, intrinsics: Intrinsics) -> Result<Trajectory> {
        trajectory(self.trajectory, &self.trajectory_params(intrinsics))
    }

    /// Main views at `2 * degree` azimuth (and optionally 180) are far-clipped.
    fn far_clips(&self, view: &CameraView, role: ViewRole, degree: f64) -> bool {
        if !self.far_clip || role != ViewRole::Main {
            return false;
        }
        let az = wrap_degrees(view.azimuth_deg).abs();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-6;
        close(az, wrap_degrees(2.0 * degree).abs()) || (self.far_clip_at_closure && close(az, 180.0))
    }
}

/// The two completion backends used by a run.
pub struct Completers<'a> {
    pub image: &'a mut dyn ImageCompleter,
    pub depth: &'a mut dyn DepthCompleter,
}

impl<'a> Completers<'a> {
    pub fn new(image: &'a mut dyn ImageCompleter, depth: &'a mut dyn DepthCompleter) -> Self {
        Self { image, depth }
    }
}

/// Per-step raster products, written to the run directory.
#[derive(Clone, Debug)]
pub struct StepImages {
    pub partial: PartialView,
    pub completed: CompletedImage,
    pub depth: DepthMap,
    pub inpaint: Mask,
    pub holes: Mask,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub camera: ViewJson,
    pub coverage_pixels: usize,
    pub foreground_pixels: usize,
    pub inpaint_pixels: usize,
    pub hole_pixels: usize,
    pub holes_flagged: usize,
    pub far_clipped_pixels: usize,
    pub points_added: usize,
    pub points_total: usize,
    /// Known-region check of the completed image; absent at the anchor.
    pub contract: Option<ContractCheck>,
    /// Largest completed-depth disagreement on covered pixels.
    pub depth_covered_error: f64,
    pub alignment: Option<AlignmentFit>,
    /// CVCS of this completion against the geometry of each earlier view
    /// one trajectory increment away in azimuth.
    pub cvcs_adjacent: Vec<AdjacentScore>,
    #[serde(skip)]
    pub images: Option<StepImages>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacentScore {
    pub step: u32,
    pub cvcs: f64,
}

/// Depth disagreement between the two approach directions at the closure
/// view, measured where both project.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureResidual {
    pub step: u32,
    pub overlap_pixels: usize,
    pub mean_abs_depth: f64,
    pub max_abs_depth: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Audit {
    pub trajectory: TrajectoryJson,
    pub steps: Vec<StepRecord>,
    pub closure: Option<ClosureResidual>,
    /// Set when the run stopped early.
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub cloud: PointCloud,
    pub audit: Audit,
}

/// A run that stopped at `step`, with everything produced before it.
#[derive(Debug, thiserror::Error)]
#[error("step {step}: {source}")]
pub struct PipelineError {
    pub step: u32,
    #[source]
    pub source: Error,
    pub audit: Audit,
    pub cloud: PointCloud,
}

pub type PipelineResult<T> = std::result::Result<T, Box<PipelineError>>;

struct StepOutput {
    added: PointCloud,
    record: StepRecord,
    rgbd: RGBDView,
}

struct Runner<'r, 'c> {
    anchor: &'r AnchorImage,
    completers: &'r mut Completers<'c>,
    config: &'r ReconstructionConfig,
    degree: f64,
}

impl Runner<'_, '_> {
    /// Asks the image completer to reproduce the anchor from a full warp of
    /// itself; any completer that cannot honor that is rejected up front.
    fn self_test(&mut self) -> Result<()> {
        let a = self.anchor;
        let partial = PartialView {
            color: a.color.clone(),
            depth: a.mask.map(|&m| if m { 1.0 } else { 0.0 }),
            coverage: a.mask.clone(),
            view: a.view,
        };
        let out = self.completers.image.complete_image(&ImageCompletionRequest::new(a, &partial))?;
        check_known_region(&partial, &out)?.into_result()?;
        Ok(())
    }

    fn depth(
        &mut self,
        image: &CompletedImage,
        partial: &PartialView,
        view: &CameraView,
    ) -> Result<(DepthMap, f64)> {
        let req = DepthCompletionRequest {
            image: &image.color,
            foreground: &image.foreground,
            partial_depth: &partial.depth,
            coverage: &partial.coverage,
            camera: Some(CameraHint::between(&self.anchor.view, view)),
        };
        let d = self.completers.depth.complete_depth(&req)?;
        let err = check_depth(&req, &d)?;
        Ok((d, err))
    }

    fn outliers(&self, pc: PointCloud) -> PointCloud {
        if self.config.outlier_removal {
            remove_statistical_outliers(&pc, &self.config.outlier)
        } else {
            pc
        }
    }

    /// Anchor step of a fresh reconstruction: depth from an empty
    /// condition, every foreground pixel unprojected.
    fn anchor_step(&mut self) -> Result<StepOutput> {
        let a = self.anchor;
        let view = a.view;
        let partial = PartialView::empty(&view);
        let image = CompletedImage {
            color: a.color.clone(),
            foreground: a.mask.clone(),
            tolerance: 0.0,
        };
        let (d0, err) = self.depth(&image, &partial, &view)?;
        let rgbd = RGBDView {
            color: a.color.clone(),
            depth: d0.zip_map(&a.mask, |&d, &m| if m { d } else { 0.0 }),
            mask: a.mask.clone(),
            view,
        };
        let added = self.outliers(unproject(&rgbd));
        let (w, h) = a.mask.dims();
        let record = StepRecord {
            step: view.step,
            camera: ViewJson::from_view(&view, ViewRole::Anchor),
            coverage_pixels: 0,
            foreground_pixels: a.mask.count(),
            inpaint_pixels: a.mask.count(),
            hole_pixels: 0,
            holes_flagged: 0,
            far_clipped_pixels: 0,
            points_added: added.len(),
            points_total: 0,
            contract: None,
            depth_covered_error: err,
            alignment: None,
            cvcs_adjacent: Vec::new(),
            images: Some(StepImages {
                partial,
                completed: image,
                depth: rgbd.depth.clone(),
                inpaint: a.mask.clone(),
                holes: Mask::new(w, h, false),
            }),
        };
        Ok(StepOutput { added, record, rgbd })
    }

    /// One completion step. `given` replaces the image completer (edit
    /// anchor step); `restrict` further limits the unprojected pixels.
    fn step(
        &mut self,
        view: &CameraView,
        role: ViewRole,
        condition: &PointCloud,
        given: Option<CompletedImage>,
        restrict: Option<&Mask>,
        neighbors: &[&RGBDView],
    ) -> Result<StepOutput> {
        let cfg = self.config;
        let partial = project(condition, view);
        let (completed, contract) = match given {
            Some(img) => {
                let check = check_known_region(&partial, &img)?;
                (img, check)
            }
            None => {
                let img = self
                    .completers
                    .image
                    .complete_image(&ImageCompletionRequest::new(self.anchor, &partial))?;
                let check = check_known_region(&partial, &img)?.into_result()?;
                (img, check)
            }
        };
        let inpaint = inpaint_region(&partial, &completed.foreground, cfg.border_radius)?;
        let (pred, depth_err) = self.depth(&completed, &partial, view)?;
        let (aligned, fit) = align_inpainted_depth(&pred, &partial.depth, &partial.coverage, &inpaint)?;

        let mut select = inpaint.zip_map(&aligned, |&m, &d| m && d > 0.0 && d.is_finite());
        let (w, h) = select.dims();
        let mut holes = Mask::new(w, h, false);
        let mut holes_flagged = 0;
        if cfg.hole_detection {
            let report = detect_open_holes(&aligned, &completed.foreground, &cfg.hole)?;
            holes_flagged = report.flagged().count();
            holes = report.hole_mask.and(&select);
            select = select.and_not(&holes);
        }
        let mut far_clipped = 0;
        if cfg.far_clips(view, role, self.degree) {
            let kept = clip_far_depth_quantile(&aligned, &select, cfg.far_clip_quantile)?;
            far_clipped = select.count() - kept.count();
            select = kept;
        }
        if let Some(r) = restrict {
            select = select.and(r);
        }

        let mut cvcs_adjacent = Vec::new();
        for prev in neighbors {
            let warp = project(&unproject(prev), view);
            if !warp.coverage.is_empty_mask() {
                cvcs_adjacent.push(AdjacentScore {
                    step: prev.view.step,
                    cvcs: cvcs(&completed.color, &warp)?,
                });
            }
        }

        let rgbd = RGBDView {
            color: completed.color.clone(),
            depth: aligned,
            mask: completed.foreground.clone(),
            view: *view,
        };
        let added = self.outliers(unproject_masked(&rgbd, &select));
        let record = StepRecord {
            step: view.step,
            camera: ViewJson::from_view(view, role),
            coverage_pixels: partial.coverage.count(),
            foreground_pixels: completed.foreground.count(),
            inpaint_pixels: inpaint.count(),
            hole_pixels: holes.count(),
            holes_flagged,
            far_clipped_pixels: far_clipped,
            points_added: added.len(),
            points_total: 0,
            contract: Some(contract),
            depth_covered_error: depth_err,
            alignment: Some(fit),
            cvcs_adjacent,
            images: Some(StepImages {
                partial,
                completed,
                depth: rgbd.depth.clone(),
                inpaint,
                holes,
            }),
        };
        Ok(StepOutput { added, record, rgbd })
    }
}

fn check_anchor(anchor: &AnchorImage) -> Result<()> {
    let dims = (anchor.view.width(), anchor.view.height());
    if anchor.color.dims() != dims || anchor.mask.dims() != dims {
        return Err(Error::invalid("anchor image size does not match its camera"));
    }
    if anchor.mask.is_empty_mask() {
        return Err(Error::invalid("anchor mask is empty"));
    }
    Ok(())
}

/// Colors snapped to the 8-bit lattice, as any image file would carry them.
fn quantized(anchor: &AnchorImage) -> AnchorImage {
    AnchorImage {
        color: anchor.color.map(|c| quantize_rgb(*c)),
        mask: anchor.mask.clone(),
        view: anchor.view,
    }
}

fn fail(step: u32, source: Error, trajectory: &Trajectory, steps: Vec<StepRecord>, cloud: PointCloud) -> Box<PipelineError> {
    let audit = Audit {
        trajectory: trajectory.to_json(),
        steps,
        closure: None,
        error: Some(format!("step {step}: {source}")),
    };
    Box::new(PipelineError {
        step,
        source,
        audit,
        cloud,
    })
}

/// Reconstructs along the configured trajectory around the anchor camera.
pub fn reconstruct(
    anchor: &AnchorImage,
    completers: &mut Completers<'_>,
    config: &ReconstructionConfig,
) -> PipelineResult<Reconstruction> {
    let traj = config
        .trajectory_for(anchor.view.intrinsics)
        .map_err(|e| fail(0, e, &empty_trajectory(anchor, config), Vec::new(), PointCloud::empty()))?;
    reconstruct_along(anchor, &traj, completers, config)
}

fn empty_trajectory(anchor: &AnchorImage, config: &ReconstructionConfig) -> Trajectory {
    Trajectory {
        kind: config.trajectory,
        degree_deg: config.degree_deg,
        anchor: anchor.view,
        main_views: Vec::new(),
        inpaint_views: Vec::new(),
        seed: config.seed,
    }
}

/// Reconstructs along an explicit trajectory. The trajectory may have no
/// views, in which case the result is the anchor unprojection.
pub fn reconstruct_along(
    anchor: &AnchorImage,
    traj: &Trajectory,
    completers: &mut Completers<'_>,
    config: &ReconstructionConfig,
) -> PipelineResult<Reconstruction> {
    if let Err(e) = config.validate().and_then(|_| check_anchor(anchor)) {
        return Err(fail(0, e, traj, Vec::new(), PointCloud::empty()));
    }
    let anchor = quantized(anchor);
    let mut runner = Runner {
        anchor: &anchor,
        completers,
        config,
        degree: traj.degree_deg,
    };
    let mut records: Vec<StepRecord> = Vec::new();
    let mut cloud = PointCloud::empty();

    let first = runner.self_test().and_then(|_| runner.anchor_step());
    let out = match first {
        Ok(o) => o,
        Err(e) => return Err(fail(0, e, traj, records, cloud)),
    };
    cloud = out.added;
    let mut rec = out.record;
    rec.points_total = cloud.len();
    records.push(rec);
    // anchor and main-view geometry, for the adjacency scores
    let mut seen: Vec<RGBDView> = vec![out.rgbd];

    let views: Vec<(CameraView, ViewRole)> = traj
        .main_views
        .iter()
        .map(|v| (*v, ViewRole::Main))
        .chain(traj.inpaint_views.iter().map(|v| (*v, ViewRole::Inpaint)))
        .collect();
    for (view, role) in &views {
        let neighbors: Vec<&RGBDView> = if *role == ViewRole::Main {
            seen.iter().filter(|r| adjacent(&r.view, view, traj.degree_deg)).collect()
        } else {
            Vec::new()
        };
        let out = match runner.step(view, *role, &cloud, None, None, &neighbors) {
            Ok(o) => o,
            Err(e) => return Err(fail(view.step, e, traj, records, cloud)),
        };
        cloud = merge(&cloud, &out.added);
        let mut rec = out.record;
        rec.points_total = cloud.len();
        log::info!(
            "step {} (az {:.0}, el {:.0}): +{} points, {} total",
            view.step,
            view.azimuth_deg,
            view.elevation_deg,
            rec.points_added,
            rec.points_total
        );
        records.push(rec);
        if *role == ViewRole::Main {
            seen.push(out.rgbd);
        }
    }
    let closure = closure_residual(&cloud, traj);
    Ok(Reconstruction {
        cloud,
        audit: Audit {
            trajectory: traj.to_json(),
            steps: records,
            closure,
            error: None,
        },
    })
}

fn adjacent(a: &CameraView, b: &CameraView, degree: f64) -> bool {
    let d = wrap_degrees(a.azimuth_deg - b.azimuth_deg).abs();
    d > 1e-6 && d <= degree + 1e-6 && (a.elevation_deg - b.elevation_deg).abs() < 1e-6
}

/// Projects the points created from positive-azimuth and negative-azimuth
/// main views separately into the 180 degree view and compares depths.
pub fn closure_residual(cloud: &PointCloud, traj: &Trajectory) -> Option<ClosureResidual> {
    let closure = traj
        .main_views
        .iter()
        .find(|v| (wrap_degrees(v.azimuth_deg).abs() - 180.0).abs() < 1e-6)?;
    let side = |positive: bool| {
        let steps: Vec<u32> = traj
            .main_views
            .iter()
            .filter(|v| v.step != closure.step)
            .filter(|v| {
                let az = wrap_degrees(v.azimuth_deg);
                if positive {
                    az > 0.0
                } else {
                    az < 0.0
                }
            })
            .map(|v| v.step)
            .collect();
        project(&cloud.filter(|_, p| steps.contains(&p.step)), closure)
    };
    let (l, r) = (side(true), side(false));
    let both = l.coverage.and(&r.coverage);
    let diffs: Vec<f64> = (0..both.data().len())
        .filter(|&i| both.data()[i])
        .map(|i| (l.depth.data()[i] as f64 - r.depth.data()[i] as f64).abs())
        .collect();
    Some(ClosureResidual {
        step: closure.step,
        overlap_pixels: diffs.len(),
        mean_abs_depth: if diffs.is_empty() {
            0.0
        } else {
            diffs.iter().sum::<f64>() / diffs.len() as f64
        },
        max_abs_depth: diffs.iter().copied().fold(0.0, f64::max),
    })
}

// ---------------------------------------------------------------- editing

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalMode {
    /// Only the visible surface under the mask (and points just behind it).
    Surface,
    /// Everything that projects into the mask.
    Part,
}

impl std::str::FromStr for RemovalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surface" => Ok(RemovalMode::Surface),
            "part" => Ok(RemovalMode::Part),
            other => Err(Error::invalid(format!("unknown removal mode `{other}`"))),
        }
    }
}

pub fn default_thickness(pc: &PointCloud) -> f64 {
    DEFAULT_THICKNESS_FRACTION * pc.bbox_diagonal()
}

/// Splits `pc` into (kept, removed) by the edit mask.
pub fn split_edit_region(
    pc: &PointCloud,
    view: &CameraView,
    mask: &Mask,
    mode: RemovalMode,
    thickness: f64,
) -> Result<(PointCloud, PointCloud)> {
    if mask.dims() != (view.width(), view.height()) {
        return Err(Error::invalid("edit mask size does not match the camera"));
    }
    let pix: Vec<Option<(usize, usize, f64)>> = pc.points().iter().map(|p| view.project_to_pixel(&p.position)).collect();
    let hit = |i: usize| pix[i].filter(|&(x, y, _)| *mask.get(x, y));
    let remove: Vec<bool> = match mode {
        RemovalMode::Part => (0..pc.len()).map(|i| hit(i).is_some()).collect(),
        RemovalMode::Surface => {
            let mut first = crate::grid::Grid::new(mask.width(), mask.height(), f64::INFINITY);
            for i in 0..pc.len() {
                if let Some((x, y, z)) = hit(i) {
                    let f = first.get_mut(x, y);
                    *f = f.min(z);
                }
            }
            (0..pc.len())
                .map(|i| hit(i).is_some_and(|(x, y, z)| z - *first.get(x, y) <= thickness))
                .collect()
        }
    };
    let kept = pc.filter(|i, _| !remove[i]);
    let removed = pc.filter(|i, _| remove[i]);
    Ok((kept, removed))
}

/// The partial garment left after removing the edit region.
pub fn remove_edit_region(
    pc: &PointCloud,
    view: &CameraView,
    mask: &Mask,
    mode: RemovalMode,
    thickness: f64,
) -> Result<PointCloud> {
    split_edit_region(pc, view, mask, mode, thickness).map(|(kept, _)| kept)
}

/// Pixels of `view` within `thickness` of a removed point: every removed
/// point's pixel, grown by the thickness at the points' median depth.
pub fn edit_footprint(removed: &PointCloud, view: &CameraView, thickness: f64) -> Mask {
    let (w, h) = (view.width(), view.height());
    let mut mask = Mask::new(w, h, false);
    let mut depths = Vec::new();
    for p in removed.points() {
        if let Some((x, y, z)) = view.project_to_pixel(&p.position) {
            mask.set(x, y, true);
            depths.push(z);
        }
    }
    if depths.is_empty() {
        return mask;
    }
    depths.sort_by(f64::total_cmp);
    let z = depths[(depths.len() - 1) / 2];
    let radius = thickness * view.intrinsics.fx.max(view.intrinsics.fy) / z;
    mask.dilate_disk(radius.max(0.0))
}

#[derive(Clone, Debug)]
pub struct EditResult {
    /// `G'` followed by the regenerated points.
    pub cloud: PointCloud,
    pub added: PointCloud,
    pub audit: Audit,
}

/// Regenerates the edited region around `g_prime`.
///
/// `removed` is the point set taken out of the original cloud; its
/// projection bounds which pixels may add points at every step. The
/// anchor step uses `edited_anchor` as its completed image and may add
/// points only inside the (slightly grown) `region`.
pub fn edit(
    g_prime: &PointCloud,
    removed: &PointCloud,
    edited_anchor: &AnchorImage,
    region: &Mask,
    thickness: f64,
    completers: &mut Completers<'_>,
    config: &ReconstructionConfig,
) -> PipelineResult<EditResult> {
    let traj = match config.trajectory_for(edited_anchor.view.intrinsics) {
        Ok(t) => t,
        Err(e) => {
            return Err(fail(0, e, &empty_trajectory(edited_anchor, config), Vec::new(), g_prime.clone()));
        }
    };
    edit_along(g_prime, removed, edited_anchor, region, thickness, &traj, completers, config)
}

#[allow(clippy::too_many_arguments)]
pub fn edit_along(
    g_prime: &PointCloud,
    removed: &PointCloud,
    edited_anchor: &AnchorImage,
    region: &Mask,
    thickness: f64,
    traj: &Trajectory,
    completers: &mut Completers<'_>,
    config: &ReconstructionConfig,
) -> PipelineResult<EditResult> {
    let pre = config.validate().and_then(|_| {
        if region.dims() != edited_anchor.mask.dims() {
            return Err(Error::invalid("edit region size does not match the anchor"));
        }
        if !(thickness.is_finite() && thickness >= 0.0) {
            return Err(Error::invalid(format!("thickness {thickness} must be non-negative")));
        }
        let dims = (edited_anchor.view.width(), edited_anchor.view.height());
        if edited_anchor.color.dims() != dims || edited_anchor.mask.dims() != dims {
            return Err(Error::invalid("anchor image size does not match its camera"));
        }
        Ok(())
    });
    if let Err(e) = pre {
        return Err(fail(0, e, traj, Vec::new(), g_prime.clone()));
    }
    let anchor = quantized(edited_anchor);
    let mut runner = Runner {
        anchor: &anchor,
        completers,
        config,
        degree: traj.degree_deg,
    };
    let mut records = Vec::new();
    let mut added = PointCloud::empty();
    let done = |added: &PointCloud, records: Vec<StepRecord>| EditResult {
        cloud: merge(g_prime, added),
        added: added.clone(),
        audit: Audit {
            trajectory: traj.to_json(),
            steps: records,
            closure: None,
            error: None,
        },
    };
    if region.is_empty_mask() && removed.is_empty() {
        return Ok(done(&added, records));
    }

    let anchor_view = anchor.view;
    let restrict = edit_footprint(removed, &anchor_view, thickness).or(&region.dilate_disk(config.border_radius));
    let given = CompletedImage {
        color: anchor.color.clone(),
        foreground: anchor.mask.clone(),
        tolerance: 0.0,
    };
    let out = match runner.step(&anchor_view, ViewRole::Anchor, g_prime, Some(given), Some(&restrict), &[]) {
        Ok(o) => o,
        Err(e) => return Err(fail(0, e, traj, records, merge(g_prime, &added))),
    };
    added = out.added;
    let mut rec = out.record;
    rec.points_total = g_prime.len() + added.len();
    records.push(rec);

    let views: Vec<(CameraView, ViewRole)> = traj
        .main_views
        .iter()
        .map(|v| (*v, ViewRole::Main))
        .chain(traj.inpaint_views.iter().map(|v| (*v, ViewRole::Inpaint)))
        .collect();
    for (view, role) in &views {
        let footprint = edit_footprint(removed, view, thickness);
        let condition = merge(&added, g_prime);
        let out = match runner.step(view, *role, &condition, None, Some(&footprint), &[]) {
            Ok(o) => o,
            Err(e) => return Err(fail(view.step, e, traj, records, merge(g_prime, &added))),
        };
        added = merge(&added, &out.added);
        let mut rec = out.record;
        rec.points_total = g_prime.len() + added.len();
        records.push(rec);
    }
    Ok(done(&added, records))
}

// ---------------------------------------------------------------- run directory

pub const STEP_DIR: &str = "steps";

/// Writes `cloud.ply`, `audit.json`, `config.json`, the per-step images
/// and, when given, `mesh.ply`. No timestamps are written.
pub fn write_run_dir(
    dir: impl AsRef<Path>,
    cloud: &PointCloud,
    audit: &Audit,
    config: &ReconstructionConfig,
    mesh: Option<&TriangleMesh>,
) -> Result<()> {
    let dir = dir.as_ref();
    let steps = dir.join(STEP_DIR);
    std::fs::create_dir_all(&steps).map_err(|e| Error::io(&steps, e))?;
    io::write_cloud(dir.join("cloud.ply"), cloud)?;
    if let Some(m) = mesh {
        io::write_mesh(dir.join("mesh.ply"), m)?;
    }
    write_json(dir.join("audit.json"), audit)?;
    write_json(dir.join("config.json"), config)?;
    for r in &audit.steps {
        let Some(img) = &r.images else { continue };
        let p = |what: &str, ext: &str| steps.join(format!("{:02}_{what}.{ext}", r.step));
        io::write_image(p("partial", "png"), &img.partial.color, &img.partial.coverage)?;
        io::write_image(p("completed", "png"), &img.completed.color, &img.completed.foreground)?;
        io::write_depth(p("depth", "pfm"), &img.depth)?;
        io::write_mask(p("inpaint", "png"), &img.inpaint)?;
        io::write_mask(p("holes", "png"), &img.holes)?;
    }
    Ok(())
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ReconstructionConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::OrientedPoint;
    use crate::complete::OracleCompleter;
    use crate::raster::{rasterize, synthetic_corpus, CorpusName, CorpusParams};
    use crate::{CompletionError, Vec3};

    fn small_config() -> ReconstructionConfig {
        ReconstructionConfig {
            resolution: 96,
            inpaint_count: 1,
            ..Default::default()
        }
    }

    fn anchor_for(mesh: &TriangleMesh, cfg: &ReconstructionConfig) -> AnchorImage {
        let view = CameraView::orbit(cfg.intrinsics().unwrap(), 0.0, 0.0, cfg.radius, 0).unwrap();
        let r = rasterize(mesh, &view);
        AnchorImage {
            color: r.color,
            mask: r.mask,
            view,
        }
    }

    fn sphere() -> TriangleMesh {
        synthetic_corpus(CorpusName::Sphere, &CorpusParams::default())
    }

    fn run(mesh: &TriangleMesh, cfg: &ReconstructionConfig) -> Reconstruction {
        let anchor = anchor_for(mesh, cfg);
        let mut a = OracleCompleter::new(mesh.clone());
        let mut b = OracleCompleter::new(mesh.clone());
        reconstruct(&anchor, &mut Completers::new(&mut a, &mut b), cfg).unwrap()
    }

    #[test]
    fn config_defaults_and_json() {
        let c = ReconstructionConfig::default();
        assert_eq!((c.degree_deg, c.resolution, c.inpaint_count), (60.0, 512, 4));
        assert!(c.outlier_removal && c.hole_detection && c.far_clip);
        assert_eq!(c.hole.epsilon, 0.85);
        let back: ReconstructionConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: ReconstructionConfig = serde_json::from_str(r#"{"resolution": 128}"#).unwrap();
        assert_eq!(partial.resolution, 128);
        assert!(serde_json::from_str::<ReconstructionConfig>(r#"{"resolutoin": 128}"#).is_err());
        let remote: ReconstructionConfig =
            serde_json::from_str(r#"{"backend": {"kind": "remote", "url": "http://x"}}"#).unwrap();
        assert_eq!(remote.backend, BackendConfig::Remote { url: Some("http://x".into()) });
    }

    #[test]
    fn config_validation() {
        assert!(ReconstructionConfig { resolution: 63, ..Default::default() }.validate().is_err());
        assert!(ReconstructionConfig { degree_deg: 70.0, ..Default::default() }.validate().is_err());
        assert!(ReconstructionConfig::default().validate().is_ok());
    }

    #[test]
    fn far_clip_only_at_twice_the_degree() {
        let c = ReconstructionConfig::default();
        let intr = c.intrinsics().unwrap();
        let traj = c.trajectory_for(intr).unwrap();
        let clipped: Vec<f64> = traj
            .main_views
            .iter()
            .filter(|v| c.far_clips(v, ViewRole::Main, 60.0))
            .map(|v| v.azimuth_deg)
            .collect();
        assert_eq!(clipped, vec![120.0, -120.0]);
        assert!(!c.far_clips(&traj.main_views[2], ViewRole::Inpaint, 60.0));
        let closing = ReconstructionConfig {
            far_clip_at_closure: true,
            ..c
        };
        assert_eq!(traj.main_views.iter().filter(|v| closing.far_clips(v, ViewRole::Main, 60.0)).count(), 3);
    }

    #[test]
    fn anchor_only_run_is_the_anchor_unprojection() {
        let mesh = sphere();
        let cfg = ReconstructionConfig {
            outlier_removal: false,
            ..small_config()
        };
        let anchor = anchor_for(&mesh, &cfg);
        let traj = Trajectory {
            main_views: Vec::new(),
            inpaint_views: Vec::new(),
            ..cfg.trajectory_for(anchor.view.intrinsics).unwrap()
        };
        let mut a = OracleCompleter::new(mesh.clone());
        let mut b = OracleCompleter::new(mesh.clone());
        let out = reconstruct_along(&anchor, &traj, &mut Completers::new(&mut a, &mut b), &cfg).unwrap();
        let gt = rasterize(&mesh, &anchor.view);
        let expect = unproject(&RGBDView {
            color: gt.color.map(|c| quantize_rgb(*c)),
            ..gt
        });
        assert_eq!(out.cloud, expect);
        assert_eq!(out.audit.steps.len(), 1);
        assert!(out.cloud.points().iter().all(|p| p.step == 0));
    }

    #[test]
    fn point_count_never_shrinks_and_steps_are_tagged() {
        let out = run(&sphere(), &small_config());
        let totals: Vec<usize> = out.audit.steps.iter().map(|s| s.points_total).collect();
        assert!(totals.windows(2).all(|w| w[0] <= w[1]), "{totals:?}");
        assert_eq!(*totals.last().unwrap(), out.cloud.len());
        assert_eq!(out.audit.steps.len(), 1 + 5 + 1);
        let steps: Vec<u32> = out.audit.steps.iter().map(|s| s.step).collect();
        assert_eq!(steps, (0..7).collect::<Vec<u32>>());
        for s in &out.audit.steps {
            let n = out.cloud.points().iter().filter(|p| p.step == s.step).count();
            assert_eq!(n, s.points_added, "step {}", s.step);
        }
        assert!(out.audit.closure.is_some());
        // zigzag neighbors: 60 and -60 touch the anchor, 180 touches both 120s
        let adj: Vec<Vec<u32>> = out.audit.steps.iter().map(|s| s.cvcs_adjacent.iter().map(|a| a.step).collect()).collect();
        assert_eq!(adj, vec![vec![], vec![0], vec![0], vec![1], vec![2], vec![3, 4], vec![]]);
    }

    #[test]
    fn runs_with_every_safeguard_off() {
        let cfg = ReconstructionConfig {
            outlier_removal: false,
            hole_detection: false,
            far_clip: false,
            ..small_config()
        };
        let out = run(&synthetic_corpus(CorpusName::Tunic, &CorpusParams::default()), &cfg);
        assert!(out.cloud.len() > out.audit.steps[0].points_added);
    }

    #[test]
    fn oracle_runs_are_bit_identical() {
        let mesh = synthetic_corpus(CorpusName::Tee, &CorpusParams::default());
        let a = run(&mesh, &small_config());
        let b = run(&mesh, &small_config());
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(
            serde_json::to_string(&a.audit).unwrap(),
            serde_json::to_string(&b.audit).unwrap()
        );
    }

    #[test]
    fn covered_colors_survive_into_the_completion() {
        let out = run(&sphere(), &small_config());
        for s in &out.audit.steps[1..] {
            let img = s.images.as_ref().unwrap();
            for i in 0..img.partial.coverage.data().len() {
                if img.partial.coverage.data()[i] {
                    assert_eq!(img.completed.color.data()[i], img.partial.color.data()[i]);
                }
            }
        }
    }

    #[test]
    fn empty_anchor_mask_is_rejected() {
        let cfg = small_config();
        let mut anchor = anchor_for(&sphere(), &cfg);
        anchor.mask = Mask::new(96, 96, false);
        let mut a = OracleCompleter::new(sphere());
        let mut b = OracleCompleter::new(sphere());
        let err = reconstruct(&anchor, &mut Completers::new(&mut a, &mut b), &cfg).unwrap_err();
        assert!(matches!(err.source, Error::InvalidArgument(_)));
        assert_eq!(err.step, 0);
    }

    /// Returns garbage in the known region from the second call on.
    struct Liar {
        inner: OracleCompleter,
        calls: usize,
    }

    impl ImageCompleter for Liar {
        fn complete_image(&mut self, req: &ImageCompletionRequest<'_>) -> std::result::Result<CompletedImage, CompletionError> {
            self.calls += 1;
            let mut out = self.inner.complete_image(req)?;
            if self.calls > 2 {
                out.color = out.color.map(|c| c.map(|v| 1.0 - v));
            }
            Ok(out)
        }
    }

    #[test]
    fn contract_violation_aborts_with_partial_audit() {
        let cfg = small_config();
        let anchor = anchor_for(&sphere(), &cfg);
        let mut a = Liar {
            inner: OracleCompleter::new(sphere()),
            calls: 0,
        };
        let mut b = OracleCompleter::new(sphere());
        let err = reconstruct(&anchor, &mut Completers::new(&mut a, &mut b), &cfg).unwrap_err();
        // self-test and step 1 pass; step 2 lies
        assert_eq!(err.step, 2);
        assert!(matches!(err.source, Error::Completion(CompletionError::ContractViolation { .. })));
        assert_eq!(err.audit.steps.len(), 2);
        assert!(err.audit.error.is_some());
        assert_eq!(err.cloud.len(), err.audit.steps[1].points_total);
    }

    /// n x n points on the square |x|, |y| <= 0.3 at depth z.
    fn sheet(z: f64, n: usize) -> Vec<OrientedPoint> {
        (0..n * n)
            .map(|i| OrientedPoint {
                position: Vec3::new(
                    0.6 * ((i % n) as f64 / (n - 1) as f64 - 0.5),
                    0.6 * ((i / n) as f64 / (n - 1) as f64 - 0.5),
                    z,
                ),
                color: [0.5; 3],
                orientation: Vec3::new(0.0, 0.0, -1.0),
                step: 0,
            })
            .collect()
    }

    /// Camera at the origin looking down +z.
    fn frontal(res: usize) -> CameraView {
        CameraView::from_pose(Intrinsics::square(res).unwrap(), crate::camera::Pose::identity(), 0)
    }

    #[test]
    fn surface_mode_removes_only_the_front_sheet() {
        // the front sheet is sampled densely enough to cover every pixel
        // it spans, so it occludes every back-sheet point
        let mut pts = sheet(1.0, 80);
        pts.extend(sheet(2.0, 20));
        let pc = PointCloud::new(pts);
        let view = frontal(64);
        let mask = Mask::new(64, 64, true);
        let kept = remove_edit_region(&pc, &view, &mask, RemovalMode::Surface, 0.1).unwrap();
        assert!(kept.points().iter().all(|p| p.position.z == 2.0));
        assert_eq!(kept.len(), 400);
        // a thickness spanning both sheets takes everything
        assert!(remove_edit_region(&pc, &view, &mask, RemovalMode::Surface, 1.5).unwrap().is_empty());
        let part = remove_edit_region(&pc, &view, &mask, RemovalMode::Part, 0.1).unwrap();
        assert!(part.is_empty());
    }

    #[test]
    fn empty_mask_removes_nothing() {
        let pc = PointCloud::new(sheet(1.0, 10));
        let view = frontal(32);
        for mode in [RemovalMode::Surface, RemovalMode::Part] {
            let kept = remove_edit_region(&pc, &view, &Mask::new(32, 32, false), mode, 0.1).unwrap();
            assert_eq!(kept, pc);
        }
        assert!(remove_edit_region(&pc, &view, &Mask::new(31, 32, false), RemovalMode::Part, 0.1).is_err());
    }

    #[test]
    fn full_frame_part_mode_keeps_only_points_outside_the_frustum() {
        let mut pts = sheet(1.0, 5);
        let outside = OrientedPoint {
            position: Vec3::new(10.0, 0.0, 1.0),
            ..pts[0]
        };
        let behind = OrientedPoint {
            position: Vec3::new(0.0, 0.0, -1.0),
            ..pts[0]
        };
        pts.push(outside);
        pts.push(behind);
        let pc = PointCloud::new(pts);
        let kept = remove_edit_region(&pc, &frontal(32), &Mask::new(32, 32, true), RemovalMode::Part, 0.0).unwrap();
        assert_eq!(kept.points(), &[outside, behind]);
    }

    #[test]
    fn empty_edit_region_returns_g_prime() {
        let cfg = small_config();
        let mesh = sphere();
        let g = run(&mesh, &cfg).cloud;
        let anchor = anchor_for(&mesh, &cfg);
        let mut a = OracleCompleter::new(mesh.clone());
        let mut b = OracleCompleter::new(mesh.clone());
        let empty = Mask::new(96, 96, false);
        let out = edit(
            &g,
            &PointCloud::empty(),
            &anchor,
            &empty,
            0.05,
            &mut Completers::new(&mut a, &mut b),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.cloud, g);
        assert!(out.added.is_empty());
    }

    #[test]
    fn edit_points_lie_on_the_surface_inside_the_footprint() {
        let cfg = small_config();
        let mesh = sphere();
        let g = run(&mesh, &cfg).cloud;
        let anchor = anchor_for(&mesh, &cfg);
        let region = Mask::from_fn(96, 96, |x, _| x < 48).and(&anchor.mask);
        let thickness = default_thickness(&g);
        let (kept, removed) = split_edit_region(&g, &anchor.view, &region, RemovalMode::Part, thickness).unwrap();
        assert_eq!(kept.len() + removed.len(), g.len());
        let mut a = OracleCompleter::new(mesh.clone());
        let mut b = OracleCompleter::new(mesh.clone());
        let out = edit(&kept, &removed, &anchor, &region, thickness, &mut Completers::new(&mut a, &mut b), &cfg).unwrap();
        assert!(!out.added.is_empty());
        assert_eq!(&out.cloud.points()[..kept.len()], kept.points());
        // every new point lies on the sphere and was unprojected inside the
        // footprint of the removed points (or the grown region at the anchor)
        let radius_err = out.added.points().iter().map(|p| (p.position.norm() - 1.0).abs()).fold(0.0, f64::max);
        assert!(radius_err < 0.05, "{radius_err}");
        let traj = cfg.trajectory_for(anchor.view.intrinsics).unwrap();
        for v in std::iter::once(&traj.anchor).chain(traj.steps()) {
            let mut allowed = edit_footprint(&removed, v, thickness);
            if v.step == 0 {
                allowed = allowed.or(&region.dilate_disk(cfg.border_radius));
            }
            for p in out.added.points().iter().filter(|p| p.step == v.step) {
                let (x, y, _) = v.project_to_pixel(&p.position).unwrap();
                assert!(*allowed.get(x, y), "step {} pixel {x},{y}", v.step);
            }
        }
    }

    #[test]
    fn run_directory_layout() {
        let cfg = small_config();
        let out = run(&sphere(), &cfg);
        let dir = tempfile::tempdir().unwrap();
        write_run_dir(dir.path(), &out.cloud, &out.audit, &cfg, None).unwrap();
        for f in ["cloud.ply", "audit.json", "config.json", "steps/00_completed.png", "steps/03_depth.pfm", "steps/06_holes.png"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert_eq!(read_config(dir.path().join("config.json")).unwrap(), cfg);
        assert_eq!(io::read_cloud(dir.path().join("cloud.ply")).unwrap().len(), out.cloud.len());
    }
}
