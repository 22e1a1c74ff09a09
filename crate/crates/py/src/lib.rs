//! Python bindings: meshes, point clouds, images, configs and the
//! reconstruct / edit / evaluate operations.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyAttributeError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::de::DeserializeOwned;
use serde::Serialize;

use viewloom_core::camera::{CameraView, Intrinsics, Trajectory};
use viewloom_core::cloud::PointCloud as CoreCloud;
use viewloom_core::complete::{
    AnchorImage, DepthCompleter, ImageCompleter, OracleCompleter, RemoteCompleter, RemoteConfig, ENV_BACKEND_URL,
};
use viewloom_core::grid::{ColorImage, Mask};
use viewloom_core::io;
use viewloom_core::meshing::mesh_from_cloud as core_mesh_from_cloud;
use viewloom_core::metrics::{self, Surface, DEFAULT_CHAMFER_SAMPLES, DEFAULT_CHAMFER_SEED};
use viewloom_core::pipeline::{
    default_thickness, edit_along, reconstruct_along, split_edit_region, write_run_dir, Audit, Completers,
    PipelineError, ReconstructionConfig, RemovalMode,
};
use viewloom_core::raster::{rasterize, synthetic_corpus, CorpusName, CorpusParams, TriangleMesh};
use viewloom_core::Error;

create_exception!(viewloom, BackendError, PyRuntimeError);

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Completion(_) => BackendError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn pipeline_err(e: Box<PipelineError>) -> PyErr {
    let step = e.step;
    match e.source {
        Error::Completion(c) => BackendError::new_err(format!("step {step}: {c}")),
        other => to_py_err(other),
    }
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for viewloom_core::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let py = obj.py();
    let s: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> PyResult<T> {
    s.parse().map_err(|_| PyValueError::new_err(format!("unknown {what} `{s}`")))
}

type Tuple3 = (f64, f64, f64);

fn tuple(v: &viewloom_core::Vec3) -> Tuple3 {
    (v.x, v.y, v.z)
}

/// Triangle mesh with per-vertex colors.
#[pyclass(module = "viewloom", skip_from_py_object)]
#[derive(Clone)]
pub struct Mesh {
    inner: TriangleMesh,
}

#[pymethods]
impl Mesh {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::read_mesh(path).or_raise()? })
    }

    /// Built-in synthetic garment: sphere, tunic, tee or panel.
    #[staticmethod]
    fn corpus(name: &str) -> PyResult<Self> {
        let name: CorpusName = parse(name, "corpus mesh")?;
        Ok(Self { inner: synthetic_corpus(name, &CorpusParams::default()) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_mesh(path, &self.inner).or_raise()
    }

    fn to_ply<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &io::encode_mesh_ply(&self.inner))
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.vertices.len()
    }

    #[getter]
    fn num_faces(&self) -> usize {
        self.inner.faces.len()
    }

    fn vertices(&self) -> Vec<Tuple3> {
        self.inner.vertices.iter().map(tuple).collect()
    }

    fn faces(&self) -> Vec<(u32, u32, u32)> {
        self.inner.faces.iter().map(|f| (f[0], f[1], f[2])).collect()
    }

    fn bbox_diagonal(&self) -> f64 {
        self.inner.bbox_diagonal()
    }

    fn surface_area(&self) -> f64 {
        self.inner.surface_area()
    }

    fn is_closed(&self) -> bool {
        self.inner.is_closed()
    }

    fn boundary_loops(&self) -> usize {
        self.inner.boundary_loop_count()
    }

    fn __repr__(&self) -> String {
        format!("Mesh(vertices={}, faces={})", self.inner.vertices.len(), self.inner.faces.len())
    }
}

/// Colored point cloud; every point keeps its orientation and the step
/// that added it.
#[pyclass(module = "viewloom", skip_from_py_object)]
#[derive(Clone)]
pub struct PointCloud {
    inner: CoreCloud,
}

#[pymethods]
impl PointCloud {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::read_cloud(path).or_raise()? })
    }

    #[staticmethod]
    fn from_ply(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: io::decode_cloud_ply(data).or_raise()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_cloud(path, &self.inner).or_raise()
    }

    fn to_ply<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &io::encode_cloud_ply(&self.inner).or_raise()?))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn positions(&self) -> Vec<Tuple3> {
        self.inner.points().iter().map(|p| tuple(&p.position)).collect()
    }

    fn colors(&self) -> Vec<(f32, f32, f32)> {
        self.inner.points().iter().map(|p| (p.color[0], p.color[1], p.color[2])).collect()
    }

    fn orientations(&self) -> Vec<Tuple3> {
        self.inner.points().iter().map(|p| tuple(&p.orientation)).collect()
    }

    fn steps(&self) -> Vec<u32> {
        self.inner.points().iter().map(|p| p.step).collect()
    }

    fn bbox_diagonal(&self) -> f64 {
        self.inner.bbox_diagonal()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("PointCloud(points={})", self.inner.len())
    }
}

/// RGB image with a foreground mask (the PNG alpha channel).
#[pyclass(module = "viewloom", skip_from_py_object)]
#[derive(Clone)]
pub struct Image {
    color: ColorImage,
    mask: Mask,
}

#[pymethods]
impl Image {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (color, mask) = io::read_image(path).or_raise()?;
        Ok(Self { color, mask })
    }

    /// A mask PNG (nonzero = inside) as a black image.
    #[staticmethod]
    fn load_mask(path: PathBuf) -> PyResult<Self> {
        let mask = io::read_mask(path).or_raise()?;
        let color = ColorImage::new(mask.width(), mask.height(), [0.0; 3]);
        Ok(Self { color, mask })
    }

    #[staticmethod]
    fn from_png(data: &[u8]) -> PyResult<Self> {
        let (color, mask) = io::decode_png(data).or_raise()?;
        Ok(Self { color, mask })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_image(path, &self.color, &self.mask).or_raise()
    }

    fn save_mask(&self, path: PathBuf) -> PyResult<()> {
        io::write_mask(path, &self.mask).or_raise()
    }

    fn to_png<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &io::encode_png(&self.color, &self.mask).or_raise()?))
    }

    #[getter]
    fn width(&self) -> usize {
        self.color.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.color.height()
    }

    /// Number of foreground pixels.
    fn coverage(&self) -> usize {
        self.mask.count()
    }

    /// (r, g, b, foreground) at a pixel.
    fn pixel(&self, x: usize, y: usize) -> PyResult<(f32, f32, f32, bool)> {
        if x >= self.color.width() || y >= self.color.height() {
            return Err(PyValueError::new_err("pixel outside the image"));
        }
        let c = self.color.get(x, y);
        Ok((c[0], c[1], c[2], *self.mask.get(x, y)))
    }

    /// Copy whose mask keeps only the foreground inside `[x0, x1) x [y0, y1)`.
    fn crop_mask(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let mask = Mask::from_fn(self.mask.width(), self.mask.height(), |x, y| {
            *self.mask.get(x, y) && (x0..x1).contains(&x) && (y0..y1).contains(&y)
        });
        Self { color: self.color.clone(), mask }
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}, coverage={})", self.color.width(), self.color.height(), self.mask.count())
    }
}

/// Reconstruction settings. Accepts the same JSON object as the CLI's
/// `--config` file; missing keys take their defaults.
#[pyclass(module = "viewloom", skip_from_py_object)]
#[derive(Clone, Default)]
pub struct Config {
    inner: ReconstructionConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (values=None))]
    fn new(values: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let inner = match values {
            Some(v) => from_py(v)?,
            None => ReconstructionConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: viewloom_core::pipeline::read_config(path).or_raise()? })
    }

    /// Any config key, e.g. `config.degree_deg` or `config.hole`.
    fn __getattr__<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        match serde_json::to_value(&self.inner).ok().and_then(|v| v.get(name).cloned()) {
            Some(v) => to_py(py, &v),
            None => Err(PyAttributeError::new_err(format!("no config key `{name}`"))),
        }
    }

    fn __setattr__(&mut self, name: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let mut v = serde_json::to_value(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let slot = v
            .get_mut(name)
            .ok_or_else(|| PyAttributeError::new_err(format!("no config key `{name}`")))?;
        *slot = from_py(value)?;
        self.inner = serde_json::from_value(v).map_err(|e| PyValueError::new_err(format!("{name}: {e}")))?;
        Ok(())
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().or_raise()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        serde_json::to_string(&self.inner).unwrap_or_default()
    }
}

/// Result of `reconstruct` or `edit`.
#[pyclass(module = "viewloom", skip_from_py_object)]
pub struct Reconstruction {
    cloud: CoreCloud,
    audit: Audit,
    config: ReconstructionConfig,
    added: Option<CoreCloud>,
}

#[pymethods]
impl Reconstruction {
    #[getter]
    fn cloud(&self) -> PointCloud {
        PointCloud { inner: self.cloud.clone() }
    }

    /// Points regenerated by an edit; `None` for a plain reconstruction.
    #[getter]
    fn added(&self) -> Option<PointCloud> {
        self.added.clone().map(|inner| PointCloud { inner })
    }

    fn audit<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.audit)
    }

    fn mesh(&self) -> PyResult<Mesh> {
        Ok(Mesh { inner: core_mesh_from_cloud(&self.cloud, &self.config.meshing).or_raise()? })
    }

    /// Writes cloud.ply, audit.json, config.json and the step images.
    #[pyo3(signature = (dir, with_mesh=true))]
    fn write(&self, dir: PathBuf, with_mesh: bool) -> PyResult<()> {
        let mesh = if with_mesh { Some(self.mesh()?.inner) } else { None };
        write_run_dir(dir, &self.cloud, &self.audit, &self.config, mesh.as_ref()).or_raise()
    }

    fn __repr__(&self) -> String {
        format!("Reconstruction(points={}, steps={})", self.cloud.len(), self.audit.steps.len())
    }
}

type Pair = (Box<dyn ImageCompleter + Send>, Box<dyn DepthCompleter + Send>);

fn completers(gt_mesh: Option<&Mesh>, url: Option<String>) -> PyResult<Pair> {
    if let Some(m) = gt_mesh {
        if url.is_some() {
            return Err(PyValueError::new_err("pass either gt_mesh or url, not both"));
        }
        return Ok((
            Box::new(OracleCompleter::new(m.inner.clone())),
            Box::new(OracleCompleter::new(m.inner.clone())),
        ));
    }
    let url = url
        .or_else(|| std::env::var(ENV_BACKEND_URL).ok().filter(|s| !s.is_empty()))
        .ok_or_else(|| PyValueError::new_err(format!("no backend: pass gt_mesh, url or set {ENV_BACKEND_URL}")))?;
    Ok((
        Box::new(RemoteCompleter::new(RemoteConfig::new(url.clone()))),
        Box::new(RemoteCompleter::new(RemoteConfig::new(url))),
    ))
}

fn config_for(config: Option<&Config>, resolution: usize) -> PyResult<ReconstructionConfig> {
    let mut cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    cfg.resolution = resolution;
    cfg.validate().or_raise()?;
    Ok(cfg)
}

fn square(img: &Image) -> PyResult<usize> {
    let (w, h) = img.color.dims();
    if w != h {
        return Err(PyValueError::new_err(format!("anchor image must be square, got {w}x{h}")));
    }
    Ok(w)
}

/// Renders a mesh from an orbit camera aimed at the origin.
#[pyfunction]
#[pyo3(signature = (mesh, azimuth=0.0, elevation=0.0, radius=None, resolution=512, fov=None, depth_path=None))]
fn render(
    mesh: &Mesh,
    azimuth: f64,
    elevation: f64,
    radius: Option<f64>,
    resolution: usize,
    fov: Option<f64>,
    depth_path: Option<PathBuf>,
) -> PyResult<Image> {
    let d = ReconstructionConfig::default();
    let intr = Intrinsics::from_fov(fov.unwrap_or(d.fov_deg), resolution, resolution).or_raise()?;
    let view = CameraView::orbit(intr, azimuth, elevation, radius.unwrap_or(d.radius), 0).or_raise()?;
    let rgbd = rasterize(&mesh.inner, &view);
    if let Some(p) = depth_path {
        io::write_depth(p, &rgbd.depth).or_raise()?;
    }
    Ok(Image { color: rgbd.color, mask: rgbd.mask })
}

/// Camera schedule for a config, as the `traj.json` dictionary.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn trajectory<'py>(py: Python<'py>, config: Option<&Config>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let traj = cfg.trajectory_for(cfg.intrinsics().or_raise()?).or_raise()?;
    to_py(py, &traj.to_json())
}

/// Reconstructs a point cloud from one anchor image. The backend is an
/// oracle over `gt_mesh`, or the remote service at `url` (falling back to
/// VIEWLOOM_BACKEND_URL).
#[pyfunction]
#[pyo3(signature = (anchor, config=None, gt_mesh=None, url=None))]
fn reconstruct(
    py: Python<'_>,
    anchor: &Image,
    config: Option<&Config>,
    gt_mesh: Option<&Mesh>,
    url: Option<String>,
) -> PyResult<Reconstruction> {
    let cfg = config_for(config, square(anchor)?)?;
    let traj = cfg.trajectory_for(cfg.intrinsics().or_raise()?).or_raise()?;
    let (mut image, mut depth) = completers(gt_mesh, url)?;
    let anchor = AnchorImage {
        color: anchor.color.clone(),
        mask: anchor.mask.clone(),
        view: traj.anchor,
    };
    let run = py
        .detach(|| {
            let mut c = Completers::new(image.as_mut(), depth.as_mut());
            reconstruct_along(&anchor, &traj, &mut c, &cfg)
        })
        .map_err(pipeline_err)?;
    Ok(Reconstruction {
        cloud: run.cloud,
        audit: run.audit,
        config: cfg,
        added: None,
    })
}

/// Removes the points under `region`'s mask (seen from the anchor) and
/// regenerates them around `edited`.
#[pyfunction]
#[pyo3(signature = (run, edited, region, mode="part", thickness=None, gt_mesh=None, url=None))]
#[allow(clippy::too_many_arguments)]
fn edit(
    py: Python<'_>,
    run: &Reconstruction,
    edited: &Image,
    region: &Image,
    mode: &str,
    thickness: Option<f64>,
    gt_mesh: Option<&Mesh>,
    url: Option<String>,
) -> PyResult<Reconstruction> {
    let mode: RemovalMode = parse(mode, "removal mode")?;
    let traj = Trajectory::from_json(&run.audit.trajectory).or_raise()?;
    let dims = (traj.anchor.width(), traj.anchor.height());
    if edited.color.dims() != dims || region.mask.dims() != dims {
        return Err(PyValueError::new_err(format!("edit image and region must be {}x{}", dims.0, dims.1)));
    }
    let thickness = thickness.unwrap_or_else(|| default_thickness(&run.cloud));
    let cfg = run.config.clone();
    let (kept, removed) = split_edit_region(&run.cloud, &traj.anchor, &region.mask, mode, thickness).or_raise()?;
    let (mut image, mut depth) = completers(gt_mesh, url)?;
    let anchor = AnchorImage {
        color: edited.color.clone(),
        mask: edited.mask.clone(),
        view: traj.anchor,
    };
    let res = py
        .detach(|| {
            let mut c = Completers::new(image.as_mut(), depth.as_mut());
            edit_along(&kept, &removed, &anchor, &region.mask, thickness, &traj, &mut c, &cfg)
        })
        .map_err(pipeline_err)?;
    Ok(Reconstruction {
        cloud: res.cloud,
        audit: res.audit,
        config: cfg,
        added: Some(res.added),
    })
}

#[pyfunction]
#[pyo3(signature = (cloud, config=None))]
fn mesh_from_cloud(cloud: &PointCloud, config: Option<&Config>) -> PyResult<Mesh> {
    let params = config.map(|c| c.inner.meshing.clone()).unwrap_or_default();
    Ok(Mesh { inner: core_mesh_from_cloud(&cloud.inner, &params).or_raise()? })
}

#[derive(FromPyObject)]
enum SurfaceArg<'py> {
    Mesh(PyRef<'py, Mesh>),
    Cloud(PyRef<'py, PointCloud>),
}

impl SurfaceArg<'_> {
    fn surface(&self) -> Surface<'_> {
        match self {
            SurfaceArg::Mesh(m) => Surface::Mesh(&m.inner),
            SurfaceArg::Cloud(c) => Surface::Cloud(&c.inner),
        }
    }
}

/// Chamfer distance from a mesh or cloud to the ground truth, in units of
/// the ground truth's bounding-box diagonal.
#[pyfunction]
#[pyo3(signature = (recon, gt, samples=DEFAULT_CHAMFER_SAMPLES, seed=DEFAULT_CHAMFER_SEED))]
fn chamfer(recon: SurfaceArg<'_>, gt: &Mesh, samples: usize, seed: u64) -> PyResult<f64> {
    metrics::chamfer_normalized(recon.surface(), &gt.inner, samples, seed).or_raise()
}

/// The 12-view evaluation report as a dictionary.
#[pyfunction]
#[pyo3(signature = (gt, recon, resolution=512, radius=None))]
fn evaluate<'py>(
    py: Python<'py>,
    gt: &Mesh,
    recon: &Mesh,
    resolution: usize,
    radius: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let radius = radius.unwrap_or(ReconstructionConfig::default().radius);
    let report = metrics::eval_protocol(&gt.inner, &recon.inner, radius, resolution).or_raise()?;
    to_py(py, &report)
}

#[pymodule]
fn viewloom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<PointCloud>()?;
    m.add_class::<Image>()?;
    m.add_class::<Config>()?;
    m.add_class::<Reconstruction>()?;
    m.add("BackendError", m.py().get_type::<BackendError>())?;
    m.add("BACKEND_URL_ENV", ENV_BACKEND_URL)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(edit, m)?)?;
    m.add_function(wrap_pyfunction!(mesh_from_cloud, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
