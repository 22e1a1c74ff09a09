//! Pinhole cameras, orbit poses and the view trajectories that drive the
//! progressive synthesis loop.
//!
//! World frame is right-handed with +Y up and the object centered at the
//! origin. Camera frame is x right, y down, z forward along the optical
//! axis. Angles are degrees at the API boundary and radians internally.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

/// Default horizontal field of view used when intrinsics are derived from a
/// resolution alone.
pub const DEFAULT_FOV_DEG: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel intrinsics with the principal point at the image center.
    pub fn from_fov(fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::invalid(format!("field of view {fov_deg} out of range")));
        }
        let f = width as f64 / (2.0 * (fov_deg.to_radians() / 2.0).tan());
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn square(resolution: usize) -> Result<Self> {
        Self::from_fov(DEFAULT_FOV_DEG, resolution, resolution)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive and finite"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid("image must be at least 8x8 pixels"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::invalid("principal point outside the image"));
        }
        Ok(())
    }

    /// Continuous pixel coordinates of a camera-space point (z > 0).
    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-space point at continuous pixel `(u, v)` and depth `z`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Camera-space point through the center of pixel `(x, y)`.
    #[inline]
    pub fn unproject_pixel(&self, x: usize, y: usize, z: f64) -> Vec3 {
        self.unproject(x as f64 + 0.5, y as f64 + 0.5, z)
    }
}

/// World-to-camera rigid transform: `x_cam = rotation * x_world + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate(1e-6)?;
        Ok(pose)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let r = &self.rotation;
        if !r.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose has non-finite entries"));
        }
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        if ortho > tol || (r.determinant() - 1.0).abs() > tol {
            return Err(Error::invalid("pose rotation is not a proper rotation"));
        }
        Ok(())
    }

    #[inline]
    pub fn transform(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    #[inline]
    pub fn inverse_transform(&self, cam: &Vec3) -> Vec3 {
        self.rotation.transpose() * (cam - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Apply `rel` after `self`: the resulting pose maps world points into
    /// the frame reached by moving from this camera by `rel`.
    pub fn then(&self, rel: &RelativeTransform) -> Pose {
        Pose {
            rotation: rel.rotation * self.rotation,
            translation: rel.rotation * self.translation + rel.translation,
        }
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        row_major(&self.rotation)
    }
}

pub(crate) fn row_major(m: &Mat3) -> [f64; 9] {
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ]
}

pub(crate) fn from_row_major(v: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(v)
}

/// Maps points from one camera frame into another.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RelativeTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &RelativeTransform) -> RelativeTransform {
        RelativeTransform {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }
}

/// Transform taking points in the `anchor` camera frame to the `target`
/// camera frame.
pub fn relative_transform(anchor: &Pose, target: &Pose) -> RelativeTransform {
    let rotation = target.rotation * anchor.rotation.transpose();
    let translation = target.translation - rotation * anchor.translation;
    RelativeTransform {
        rotation,
        translation,
    }
}

/// Camera center on an orbit around the origin.
pub fn orbit_center(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Vec3 {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    Vec3::new(
        radius * az.sin() * el.cos(),
        radius * el.sin(),
        radius * az.cos() * el.cos(),
    )
}

/// Look-at pose for a camera on the orbit, aimed at the origin with world +Y
/// as the up reference.
pub fn orbit_pose(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Result<Pose> {
    if ![azimuth_deg, elevation_deg, radius].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("orbit parameters must be finite"));
    }
    if radius <= 0.0 {
        return Err(Error::invalid("orbit radius must be positive"));
    }
    if elevation_deg.abs() >= 90.0 {
        return Err(Error::invalid("orbit elevation must satisfy |elevation| < 90"));
    }
    let center = orbit_center(azimuth_deg, elevation_deg, radius);
    let forward = (-center).normalize();
    let right = forward.cross(&Vec3::y()).normalize();
    let down = forward.cross(&right);
    let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * center);
    Ok(Pose {
        rotation,
        translation,
    })
}

/// Wrap an angle in degrees into (-180, 180].
pub fn wrap_degrees(deg: f64) -> f64 {
    let mut a = deg % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub step: u32,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
}

impl CameraView {
    pub fn orbit(
        intrinsics: Intrinsics,
        azimuth_deg: f64,
        elevation_deg: f64,
        radius: f64,
        step: u32,
    ) -> Result<Self> {
        intrinsics.validate()?;
        let azimuth_deg = wrap_degrees(azimuth_deg);
        Ok(Self {
            intrinsics,
            pose: orbit_pose(azimuth_deg, elevation_deg, radius)?,
            step,
            azimuth_deg,
            elevation_deg,
            radius,
        })
    }

    /// View for an arbitrary pose; the orbit fields are read back from the
    /// camera center.
    pub fn from_pose(intrinsics: Intrinsics, pose: Pose, step: u32) -> Self {
        let c = pose.center();
        let radius = c.norm();
        let (azimuth_deg, elevation_deg) = if radius > 0.0 {
            (c.x.atan2(c.z).to_degrees(), (c.y / radius).clamp(-1.0, 1.0).asin().to_degrees())
        } else {
            (0.0, 0.0)
        };
        Self {
            intrinsics,
            pose,
            step,
            azimuth_deg,
            elevation_deg,
            radius,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.pose.center()
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Pixel containing the projection of a world point, with its
    /// camera-space depth. `None` if behind the camera or off-image.
    #[inline]
    pub fn project_to_pixel(&self, world: &Vec3) -> Option<(usize, usize, f64)> {
        let p = self.pose.transform(world);
        if p.z <= 0.0 {
            return None;
        }
        let (u, v) = self.intrinsics.project(&p);
        let (x, y) = (u.floor(), v.floor());
        if x < 0.0 || y < 0.0 || x >= self.intrinsics.width as f64 || y >= self.intrinsics.height as f64 {
            return None;
        }
        Some((x as usize, y as usize, p.z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Zigzag,
    Circular,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zigzag" => Ok(TrajectoryKind::Zigzag),
            "circular" => Ok(TrajectoryKind::Circular),
            other => Err(Error::invalid(format!("unknown trajectory kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub degree_deg: f64,
    pub anchor: CameraView,
    pub main_views: Vec<CameraView>,
    pub inpaint_views: Vec<CameraView>,
    pub seed: u64,
}

/// Options shared by the trajectory builders.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryParams {
    pub degree_deg: f64,
    pub radius: f64,
    pub intrinsics: Intrinsics,
    pub inpaint_count: usize,
    pub seed: u64,
    /// Zigzag only: start with the negative azimuth instead of the positive.
    pub start_negative: bool,
}

impl TrajectoryParams {
    pub fn new(degree_deg: f64, radius: f64, intrinsics: Intrinsics) -> Self {
        Self {
            degree_deg,
            radius,
            intrinsics,
            inpaint_count: 0,
            seed: 0,
            start_negative: false,
        }
    }
}

fn integer_divisor(degree: f64, of: f64) -> Result<usize> {
    if !degree.is_finite() || degree <= 0.0 || degree > of {
        return Err(Error::invalid(format!("degree {degree} must lie in (0, {of}]")));
    }
    let n = of / degree;
    if (n - n.round()).abs() > 1e-9 {
        return Err(Error::invalid(format!("degree {degree} does not divide {of}")));
    }
    Ok(n.round() as usize)
}

/// Azimuths visited by the zigzag schedule: +d, -d, +2d, -2d, ..., 180.
pub fn zigzag_azimuths(degree_deg: f64, start_negative: bool) -> Result<Vec<f64>> {
    let n = integer_divisor(degree_deg, 180.0)?;
    let sign = if start_negative { -1.0 } else { 1.0 };
    let mut out = Vec::with_capacity(2 * n);
    for k in 1..n {
        let a = k as f64 * degree_deg;
        out.push(sign * a);
        out.push(-sign * a);
    }
    out.push(180.0);
    Ok(out)
}

/// Azimuths visited by the circular schedule: d, 2d, ..., 360 - d, wrapped.
pub fn circular_azimuths(degree_deg: f64) -> Result<Vec<f64>> {
    let n = integer_divisor(degree_deg, 360.0)?;
    Ok((1..n).map(|k| wrap_degrees(k as f64 * degree_deg)).collect())
}

fn build(kind: TrajectoryKind, azimuths: Vec<f64>, params: &TrajectoryParams) -> Result<Trajectory> {
    let anchor = CameraView::orbit(params.intrinsics, 0.0, 0.0, params.radius, 0)?;
    let main_views = azimuths
        .iter()
        .enumerate()
        .map(|(i, &az)| CameraView::orbit(params.intrinsics, az, 0.0, params.radius, i as u32 + 1))
        .collect::<Result<Vec<_>>>()?;
    if main_views.is_empty() {
        return Err(Error::invalid("trajectory has no main views"));
    }
    let mut inpaint = inpaint_views(params.inpaint_count, params.seed, params.radius, params.intrinsics)?;
    let first = main_views.len() as u32 + 1;
    for (i, v) in inpaint.iter_mut().enumerate() {
        v.step = first + i as u32;
    }
    Ok(Trajectory {
        kind,
        degree_deg: params.degree_deg,
        anchor,
        main_views,
        inpaint_views: inpaint,
        seed: params.seed,
    })
}

pub fn zigzag_trajectory(params: &TrajectoryParams) -> Result<Trajectory> {
    let az = zigzag_azimuths(params.degree_deg, params.start_negative)?;
    build(TrajectoryKind::Zigzag, az, params)
}

pub fn circular_trajectory(params: &TrajectoryParams) -> Result<Trajectory> {
    let az = circular_azimuths(params.degree_deg)?;
    build(TrajectoryKind::Circular, az, params)
}

pub fn trajectory(kind: TrajectoryKind, params: &TrajectoryParams) -> Result<Trajectory> {
    match kind {
        TrajectoryKind::Zigzag => zigzag_trajectory(params),
        TrajectoryKind::Circular => circular_trajectory(params),
    }
}

/// Random closure views: azimuth uniform in [0, 360), elevation uniform in
/// [-30, 60]. Deterministic for a fixed seed. Steps are left at 0 and
/// renumbered by the trajectory builder.
pub fn inpaint_views(count: usize, seed: u64, radius: f64, intrinsics: Intrinsics) -> Result<Vec<CameraView>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let az: f64 = rng.random_range(0.0..360.0);
            let el: f64 = rng.random_range(-30.0..=60.0);
            CameraView::orbit(intrinsics, az, el, radius, 0)
        })
        .collect()
}

impl Trajectory {
    /// Main views followed by the closure views.
    pub fn steps(&self) -> impl Iterator<Item = &CameraView> {
        self.main_views.iter().chain(self.inpaint_views.iter())
    }

    pub fn to_json(&self) -> TrajectoryJson {
        let entry = |v: &CameraView, role: ViewRole| ViewJson {
            step: v.step,
            role,
            azimuth_deg: v.azimuth_deg,
            elevation_deg: v.elevation_deg,
            radius: v.radius,
            intrinsics: v.intrinsics,
            r: v.pose.rotation_row_major(),
            t: [v.pose.translation.x, v.pose.translation.y, v.pose.translation.z],
        };
        let mut views = vec![entry(&self.anchor, ViewRole::Anchor)];
        views.extend(self.main_views.iter().map(|v| entry(v, ViewRole::Main)));
        views.extend(self.inpaint_views.iter().map(|v| entry(v, ViewRole::Inpaint)));
        TrajectoryJson {
            kind: self.kind,
            degree_deg: self.degree_deg,
            seed: self.seed,
            views,
        }
    }

    pub fn from_json(json: &TrajectoryJson) -> Result<Self> {
        let mut anchor = None;
        let mut main_views = Vec::new();
        let mut inpaint_views = Vec::new();
        for v in &json.views {
            let view = v.to_view()?;
            match v.role {
                ViewRole::Anchor => anchor = Some(view),
                ViewRole::Main => main_views.push(view),
                ViewRole::Inpaint => inpaint_views.push(view),
            }
        }
        let anchor = match anchor {
            Some(a) => a,
            None => {
                let first = main_views
                    .first()
                    .ok_or_else(|| Error::invalid("trajectory has no views"))?;
                CameraView::orbit(first.intrinsics, 0.0, 0.0, first.radius, 0)?
            }
        };
        if main_views.is_empty() {
            return Err(Error::invalid("trajectory has no main views"));
        }
        Ok(Self {
            kind: json.kind,
            degree_deg: json.degree_deg,
            anchor,
            main_views,
            inpaint_views,
            seed: json.seed,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewRole {
    Anchor,
    Main,
    Inpaint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewJson {
    pub step: u32,
    #[serde(default = "default_role")]
    pub role: ViewRole,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub intrinsics: Intrinsics,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

fn default_role() -> ViewRole {
    ViewRole::Main
}

impl ViewJson {
    pub fn from_view(v: &CameraView, role: ViewRole) -> Self {
        Self {
            step: v.step,
            role,
            azimuth_deg: v.azimuth_deg,
            elevation_deg: v.elevation_deg,
            radius: v.radius,
            intrinsics: v.intrinsics,
            r: v.pose.rotation_row_major(),
            t: [v.pose.translation.x, v.pose.translation.y, v.pose.translation.z],
        }
    }

    /// Rebuilds the view from its orbit metadata and checks the stored pose
    /// against it.
    pub fn to_view(&self) -> Result<CameraView> {
        let view = CameraView::orbit(self.intrinsics, self.azimuth_deg, self.elevation_deg, self.radius, self.step)?;
        let stored = Pose::new(from_row_major(&self.r), Vec3::from(self.t))?;
        let dr = (stored.rotation - view.pose.rotation).abs().max();
        let dt = (stored.translation - view.pose.translation).abs().max();
        if dr > 1e-6 || dt > 1e-6 * self.radius.max(1.0) {
            return Err(Error::invalid(format!(
                "view {} pose disagrees with its orbit metadata",
                self.step
            )));
        }
        Ok(view)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryJson {
    pub kind: TrajectoryKind,
    pub degree_deg: f64,
    pub seed: u64,
    pub views: Vec<ViewJson>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn intr() -> Intrinsics {
        Intrinsics::square(64).unwrap()
    }

    #[test]
    fn anchor_axis_case() {
        let p = orbit_pose(0.0, 0.0, 2.0).unwrap();
        assert_abs_diff_eq!(p.center(), Vec3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
        let forward = p.rotation.row(2).transpose();
        assert_abs_diff_eq!(forward, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p.transform(&Vec3::zeros()), Vec3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn back_view_center() {
        let p = orbit_pose(180.0, 0.0, 2.0).unwrap();
        assert_abs_diff_eq!(p.center(), Vec3::new(0.0, 0.0, -2.0), epsilon = 1e-12);
    }

    #[test]
    fn oblique_view_matches_explicit_look_at() {
        let (az, el, r) = (60.0f64, 20.0f64, 2.5);
        let p = orbit_pose(az, el, r).unwrap();
        assert_abs_diff_eq!(p.transform(&Vec3::zeros()).norm(), 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.rotation.transpose() * p.rotation, Mat3::identity(), epsilon = 1e-12);
        // Independent construction: camera z toward origin, x horizontal.
        let c = Vec3::new(
            r * az.to_radians().sin() * el.to_radians().cos(),
            r * el.to_radians().sin(),
            r * az.to_radians().cos() * el.to_radians().cos(),
        );
        let z = -c / c.norm();
        let x = Vec3::new(-z.z, 0.0, z.x) / (z.x * z.x + z.z * z.z).sqrt();
        assert_abs_diff_eq!(p.rotation.row(2).transpose(), z, epsilon = 1e-12);
        assert_abs_diff_eq!(p.rotation.row(0).transpose(), x, epsilon = 1e-12);
        assert!(p.rotation.row(1)[1] < 0.0, "camera y points down");
    }

    #[test]
    fn orbit_rejects_bad_input() {
        assert!(orbit_pose(0.0, 90.0, 2.0).is_err());
        assert!(orbit_pose(0.0, -95.0, 2.0).is_err());
        assert!(orbit_pose(f64::NAN, 0.0, 2.0).is_err());
        assert!(orbit_pose(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn relative_identity() {
        let p = orbit_pose(33.0, 12.0, 3.0).unwrap();
        let rel = relative_transform(&p, &p);
        assert_abs_diff_eq!(rel.rotation, Mat3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(rel.translation, Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn relative_rotation_trace() {
        let a = orbit_pose(0.0, 0.0, 2.0).unwrap();
        let b = orbit_pose(60.0, 0.0, 2.0).unwrap();
        let rel = relative_transform(&a, &b);
        assert_abs_diff_eq!(rel.rotation.trace(), 2.0, epsilon = 1e-9);
        let composed = a.then(&rel);
        assert_abs_diff_eq!(composed.rotation, b.rotation, epsilon = 1e-12);
        assert_abs_diff_eq!(composed.translation, b.translation, epsilon = 1e-12);
    }

    #[test]
    fn zigzag_sequences() {
        assert_eq!(zigzag_azimuths(60.0, false).unwrap(), vec![60.0, -60.0, 120.0, -120.0, 180.0]);
        assert_eq!(zigzag_azimuths(90.0, false).unwrap(), vec![90.0, -90.0, 180.0]);
        assert_eq!(zigzag_azimuths(60.0, true).unwrap(), vec![-60.0, 60.0, -120.0, 120.0, 180.0]);
        let thirty = zigzag_azimuths(30.0, false).unwrap();
        let mut expected = Vec::new();
        for k in 1..=5 {
            expected.push(30.0 * k as f64);
            expected.push(-30.0 * k as f64);
        }
        expected.push(180.0);
        assert_eq!(thirty, expected);
        assert_eq!(thirty.len(), 11);
        assert!(zigzag_azimuths(70.0, false).is_err());
        assert!(zigzag_azimuths(0.0, false).is_err());
    }

    #[test]
    fn circular_sequences() {
        assert_eq!(circular_azimuths(60.0).unwrap(), vec![60.0, 120.0, 180.0, -120.0, -60.0]);
        assert_eq!(circular_azimuths(120.0).unwrap().len(), 2);
        assert!(circular_azimuths(70.0).is_err());
        for d in [30.0, 45.0, 60.0, 72.0, 90.0, 120.0] {
            let az = circular_azimuths(d).unwrap();
            let unwrapped: Vec<f64> = az.iter().map(|&a| if a < 0.0 { a + 360.0 } else { a }).collect();
            for w in unwrapped.windows(2) {
                assert_abs_diff_eq!(w[1] - w[0], d, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn zigzag_and_circular_cover_same_azimuths() {
        for d in [30.0, 60.0, 90.0, 180.0] {
            let mut z: Vec<i64> = zigzag_azimuths(d, false).unwrap().iter().map(|a| (a.rem_euclid(360.0)).round() as i64).collect();
            let mut c: Vec<i64> = circular_azimuths(d).unwrap().iter().map(|a| (a.rem_euclid(360.0)).round() as i64).collect();
            z.sort();
            c.sort();
            assert_eq!(z, c, "degree {d}");
        }
    }

    #[test]
    fn trajectory_builders() {
        let mut params = TrajectoryParams::new(60.0, 2.5, intr());
        params.inpaint_count = 4;
        params.seed = 3;
        let t = zigzag_trajectory(&params).unwrap();
        assert_eq!(t.main_views.len(), 5);
        assert_eq!(t.inpaint_views.len(), 4);
        assert_eq!(t.anchor.step, 0);
        let steps: Vec<u32> = t.steps().map(|v| v.step).collect();
        assert_eq!(steps, (1..=9).collect::<Vec<_>>());
        assert_eq!(t.main_views.last().unwrap().azimuth_deg, 180.0);
        for v in t.steps() {
            assert!(v.azimuth_deg > -180.0 && v.azimuth_deg <= 180.0);
        }
    }

    #[test]
    fn inpaint_views_are_deterministic() {
        assert!(inpaint_views(0, 1, 2.0, intr()).unwrap().is_empty());
        let a = inpaint_views(4, 7, 2.0, intr()).unwrap();
        let b = inpaint_views(4, 7, 2.0, intr()).unwrap();
        assert_eq!(a, b);
        let c = inpaint_views(4, 8, 2.0, intr()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn inpaint_elevation_statistics() {
        let views = inpaint_views(1000, 1, 2.0, intr()).unwrap();
        let mean = views.iter().map(|v| v.elevation_deg).sum::<f64>() / 1000.0;
        assert!(views.iter().all(|v| (-30.0..=60.0).contains(&v.elevation_deg)));
        assert!((10.0..=20.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn json_round_trip() {
        let mut params = TrajectoryParams::new(60.0, 2.5, intr());
        params.inpaint_count = 2;
        let t = zigzag_trajectory(&params).unwrap();
        let text = serde_json::to_string(&t.to_json()).unwrap();
        let back: TrajectoryJson = serde_json::from_str(&text).unwrap();
        assert_eq!(Trajectory::from_json(&back).unwrap(), t);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["views"][1]["R"].as_array().unwrap().len(), 9);
        assert_eq!(value["kind"], "zigzag");
    }

    #[test]
    fn principal_point_unprojects_on_axis() {
        let k = intr();
        assert_abs_diff_eq!(k.unproject(k.cx, k.cy, 3.0), Vec3::new(0.0, 0.0, 3.0));
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-179.0f64..180.0, -80.0f64..80.0, 0.5f64..10.0).prop_map(|(a, e, r)| orbit_pose(a, e, r).unwrap())
    }

    proptest! {
        #[test]
        fn center_maps_to_camera_origin(a in -180.0f64..180.0, e in -89.0f64..89.0, r in 0.1f64..20.0) {
            let p = orbit_pose(a, e, r).unwrap();
            let c = orbit_center(a, e, r);
            prop_assert!(p.transform(&c).norm() < 1e-9 * r.max(1.0));
            prop_assert!((p.rotation.transpose() * p.rotation - Mat3::identity()).abs().max() < 1e-9);
            prop_assert!((p.rotation.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn relative_transforms_compose(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let ab = relative_transform(&a, &b);
            let bc = relative_transform(&b, &c);
            let ac = relative_transform(&a, &c);
            let chained = ab.then(&bc);
            prop_assert!((chained.rotation - ac.rotation).abs().max() < 1e-9);
            prop_assert!((chained.translation - ac.translation).abs().max() < 1e-9);
        }
    }
}
