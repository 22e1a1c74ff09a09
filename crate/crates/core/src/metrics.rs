//! Image and geometry metrics plus the 12-view evaluation protocol.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvh::TriangleBvh;
use crate::camera::{CameraView, Intrinsics};
use crate::cloud::PointCloud;
use crate::grid::{ColorImage, Mask};
use crate::raster::{rasterize, TriangleMesh};
use crate::spatial::PointGrid;
use crate::warp::PartialView;
use crate::{Error, Result, Vec3};

/// Reported PSNR for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const DEFAULT_CHAMFER_SAMPLES: usize = 100_000;
pub const DEFAULT_CHAMFER_SEED: u64 = 0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_dims(a: &ColorImage, b: &ColorImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!("image sizes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio with peak 1, over the masked pixels (all
/// pixels when `mask` is `None`), capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ColorImage, b: &ColorImage, mask: Option<&Mask>) -> Result<f64> {
    same_dims(a, b)?;
    if let Some(m) = mask {
        if m.dims() != a.dims() {
            return Err(Error::invalid("mask size differs from images"));
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.data().len() {
        if mask.is_some_and(|m| !m.data()[i]) {
            continue;
        }
        for c in 0..3 {
            let d = a.data()[i][c] as f64 - b.data()[i][c] as f64;
            sum += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::invalid("psnr over an empty mask"));
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable 'valid' filtering: output is (w - 10) x (h - 10).
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|j| k[j] * tmp[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Per-window SSIM of one channel; windows fully inside the image.
fn ssim_map(a: &[f64], b: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let aa = filter_valid(&prod(a, a), w, h, &k);
    let bb = filter_valid(&prod(b, b), w, h, &k);
    let ab = filter_valid(&prod(a, b), w, h, &k);
    (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect()
}

fn ssim_impl(a: &ColorImage, b: &ColorImage, mask: Option<&Mask>) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!("ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let ow = w + 1 - SSIM_WINDOW;
    let r = SSIM_WINDOW / 2;
    let keep: Vec<bool> = match mask {
        None => vec![true; ow * (h + 1 - SSIM_WINDOW)],
        Some(m) => {
            if m.dims() != a.dims() {
                return Err(Error::invalid("mask size differs from images"));
            }
            (0..ow * (h + 1 - SSIM_WINDOW))
                .map(|i| *m.get(i % ow + r, i / ow + r))
                .collect()
        }
    };
    let n = keep.iter().filter(|&&k| k).count();
    if n == 0 {
        return Err(Error::invalid("ssim over an empty mask"));
    }
    let mut total = 0.0;
    for c in 0..3 {
        let ca: Vec<f64> = a.data().iter().map(|p| p[c] as f64).collect();
        let cb: Vec<f64> = b.data().iter().map(|p| p[c] as f64).collect();
        let map = ssim_map(&ca, &cb, w, h);
        total += map.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v).sum::<f64>() / n as f64;
    }
    Ok(total / 3.0)
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, L 1)
/// averaged over the three channels.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    ssim_impl(a, b, None)
}

/// SSIM averaged over the windows centered on masked pixels.
pub fn ssim_masked(a: &ColorImage, b: &ColorImage, mask: &Mask) -> Result<f64> {
    ssim_impl(a, b, Some(mask))
}

/// Cross-view consistency: one minus the mean channel-averaged absolute
/// difference between `image` and the partial view over its coverage.
pub fn cvcs(image: &ColorImage, partial: &PartialView) -> Result<f64> {
    if image.dims() != partial.color.dims() || image.dims() != partial.coverage.dims() {
        return Err(Error::invalid("image and partial view sizes differ"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..image.data().len() {
        if !partial.coverage.data()[i] {
            continue;
        }
        let (a, b) = (image.data()[i], partial.color.data()[i]);
        sum += (0..3).map(|c| (a[c] as f64 - b[c] as f64).abs()).sum::<f64>() / 3.0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("cvcs over an empty coverage mask"));
    }
    Ok(1.0 - sum / n as f64)
}

/// Either side of a Chamfer comparison.
#[derive(Clone, Copy, Debug)]
pub enum Surface<'a> {
    Mesh(&'a TriangleMesh),
    Cloud(&'a PointCloud),
}

impl<'a> From<&'a TriangleMesh> for Surface<'a> {
    fn from(m: &'a TriangleMesh) -> Self {
        Surface::Mesh(m)
    }
}

impl<'a> From<&'a PointCloud> for Surface<'a> {
    fn from(c: &'a PointCloud) -> Self {
        Surface::Cloud(c)
    }
}

enum DistanceIndex {
    Mesh(TriangleBvh),
    Cloud(PointGrid),
}

impl DistanceIndex {
    fn new(s: Surface<'_>) -> Self {
        match s {
            Surface::Mesh(m) => DistanceIndex::Mesh(TriangleBvh::new(m)),
            Surface::Cloud(c) => DistanceIndex::Cloud(PointGrid::with_nn_cell(c.positions())),
        }
    }

    fn distance(&self, q: &Vec3) -> f64 {
        match self {
            DistanceIndex::Mesh(b) => b.distance(q).unwrap_or(f64::INFINITY),
            DistanceIndex::Cloud(g) => g.nearest(q).map(|n| n.dist2.sqrt()).unwrap_or(f64::INFINITY),
        }
    }
}

/// `n` points distributed uniformly by area over the mesh.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Vec<Vec3> {
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if total <= 0.0 || n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r: f64 = rng.random_range(0.0..total);
            let f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let su = u.sqrt();
            a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v)
        })
        .collect()
}

fn surface_points(s: Surface<'_>, samples: usize, seed: u64) -> Vec<Vec3> {
    match s {
        Surface::Mesh(m) => sample_surface(m, samples, seed),
        Surface::Cloud(c) => c.positions(),
    }
}

fn is_empty(s: Surface<'_>) -> bool {
    match s {
        Surface::Mesh(m) => m.faces.is_empty(),
        Surface::Cloud(c) => c.is_empty(),
    }
}

/// Mean distance from each point of `from` to the surface `to`.
pub fn one_sided_distance(from: &[Vec3], to: Surface<'_>) -> f64 {
    let index = DistanceIndex::new(to);
    if from.is_empty() {
        return 0.0;
    }
    from.iter().map(|p| index.distance(p)).sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance: meshes are sampled by area (`samples`
/// points, fixed seed), clouds are used as they are, distances to meshes
/// are exact point-to-triangle distances.
pub fn chamfer_bidirectional(a: Surface<'_>, b: Surface<'_>, samples: usize, seed: u64) -> Result<f64> {
    if is_empty(a) || is_empty(b) {
        return Err(Error::invalid("chamfer distance needs two non-empty surfaces"));
    }
    // distinct streams so a mesh compared with itself is not sampled twice identically
    let pa = surface_points(a, samples, seed);
    let pb = surface_points(b, samples, seed.wrapping_add(1));
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::invalid("chamfer distance on a zero-area mesh"));
    }
    Ok((one_sided_distance(&pa, b) + one_sided_distance(&pb, a)) / 2.0)
}

/// Chamfer distance in units of the ground-truth bounding-box diagonal.
pub fn chamfer_normalized(recon: Surface<'_>, gt: &TriangleMesh, samples: usize, seed: u64) -> Result<f64> {
    let diag = gt.bbox_diagonal();
    if !(diag > 0.0) {
        return Err(Error::invalid("ground-truth mesh has a degenerate bounding box"));
    }
    Ok(chamfer_bidirectional(recon, Surface::Mesh(gt), samples, seed)? / diag)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    /// `None` when neither mesh is visible in the view.
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: Option<f64>,
    /// Not computed; kept for schema compatibility.
    pub lpips: Option<f64>,
    /// Chamfer distance after scaling the ground truth to unit diagonal.
    pub chamfer: f64,
    pub chamfer_scene_units: f64,
    pub gt_bbox_diagonal: f64,
    pub normalization: String,
    pub chamfer_samples: usize,
    #[serde(default)]
    pub cvcs: Vec<f64>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::from("azimuth_deg,elevation_deg,psnr_db,ssim\n");
        for v in &self.views {
            s.push_str(&format!(
                "{},{},{},{}\n",
                v.azimuth_deg,
                v.elevation_deg,
                cell(v.psnr_db),
                cell(v.ssim)
            ));
        }
        s
    }
}

/// The 12 evaluation cameras: azimuth k * 30 degrees, elevation 0 for even
/// k and 20 for odd k.
pub fn eval_views(intrinsics: Intrinsics, radius: f64) -> Result<Vec<CameraView>> {
    (0..12)
        .map(|k| {
            let el = if k % 2 == 0 { 0.0 } else { 20.0 };
            CameraView::orbit(intrinsics, k as f64 * 30.0, el, radius, k)
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Renders both meshes from the 12 protocol views and scores them on the
/// union of their masks, then adds the normalized Chamfer distance.
pub fn eval_protocol(gt: &TriangleMesh, recon: &TriangleMesh, radius: f64, resolution: usize) -> Result<EvalReport> {
    let intr = Intrinsics::square(resolution)?;
    let mut views = Vec::new();
    for view in eval_views(intr, radius)? {
        let g = rasterize(gt, &view);
        let r = rasterize(recon, &view);
        let union = g.mask.or(&r.mask);
        let (p, s) = if union.is_empty_mask() {
            (None, None)
        } else {
            (
                Some(psnr(&g.color, &r.color, Some(&union))?),
                Some(ssim_masked(&g.color, &r.color, &union)?),
            )
        };
        views.push(ViewScore {
            azimuth_deg: view.azimuth_deg,
            elevation_deg: view.elevation_deg,
            psnr_db: p,
            ssim: s,
        });
    }
    let raw = chamfer_bidirectional(
        Surface::Mesh(recon),
        Surface::Mesh(gt),
        DEFAULT_CHAMFER_SAMPLES,
        DEFAULT_CHAMFER_SEED,
    )?;
    let diag = gt.bbox_diagonal();
    Ok(EvalReport {
        mean_psnr_db: mean(views.iter().filter_map(|v| v.psnr_db)),
        mean_ssim: mean(views.iter().filter_map(|v| v.ssim)),
        views,
        lpips: None,
        chamfer: raw / diag,
        chamfer_scene_units: raw,
        gt_bbox_diagonal: diag,
        normalization: "gt_unit_diagonal".into(),
        chamfer_samples: DEFAULT_CHAMFER_SAMPLES,
        cvcs: Vec::new(),
    })
}
