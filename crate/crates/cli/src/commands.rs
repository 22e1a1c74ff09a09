use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use viewloom_core::camera::{CameraView, Intrinsics, Trajectory, TrajectoryJson, ViewJson, ViewRole};
use viewloom_core::cloud::{OrientedPoint, PointCloud};
use viewloom_core::complete::{
    AnchorImage, DepthCompleter, ImageCompleter, OracleCompleter, OracleServer, RemoteCompleter, RemoteConfig,
    ServerOptions, ENV_BACKEND_URL,
};
use viewloom_core::io::{self, RunManifest};
use viewloom_core::meshing::mesh_from_cloud;
use viewloom_core::metrics::{
    chamfer_bidirectional, eval_protocol, eval_views, EvalReport, Surface, DEFAULT_CHAMFER_SAMPLES, DEFAULT_CHAMFER_SEED,
};
use viewloom_core::pipeline::{
    default_thickness, edit_along, read_config, reconstruct_along, split_edit_region, write_json, write_run_dir, Audit,
    BackendConfig, Completers, ReconstructionConfig,
};
use viewloom_core::raster::{rasterize, synthetic_corpus, CorpusParams, TriangleMesh};
use viewloom_core::{Error, Vec3};

use crate::{BackendArgs, CliError, DemoArgs, EditArgs, EvalArgs, Global, ReconstructArgs, RenderArgs, ServeArgs, TrajectoryArgs};

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn out_dir(g: &Global) -> CliResult<PathBuf> {
    let dir = g.out.clone().ok_or_else(|| usage("--out DIR is required"))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Core(Error::Io { path: dir.clone(), source: e }))?;
    Ok(dir)
}

/// Defaults, then the config file, then `--seed`. A relative oracle mesh
/// path in the file is taken relative to the file.
fn load_config(g: &Global) -> CliResult<ReconstructionConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            let mut cfg = read_config(p)?;
            if let (BackendConfig::Oracle { mesh: Some(m) }, Some(base)) = (&mut cfg.backend, p.parent()) {
                if m.is_relative() {
                    *m = base.join(&*m);
                }
            }
            cfg
        }
        None => ReconstructionConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(Error::Json(e)))
}

fn finish(dir: &Path, config: &impl serde::Serialize, created: u64) -> CliResult {
    let config = serde_json::to_value(config).map_err(Error::Json)?;
    RunManifest::scan(dir, config, created)?.write(dir)?;
    Ok(())
}

enum Backend {
    Oracle(PathBuf),
    Remote(String),
}

fn resolve_backend(args: &BackendArgs, cfg: &ReconstructionConfig) -> CliResult<Backend> {
    let env_url = || std::env::var(ENV_BACKEND_URL).ok().filter(|s| !s.is_empty());
    let cfg_mesh = match &cfg.backend {
        BackendConfig::Oracle { mesh } => mesh.clone(),
        _ => None,
    };
    let cfg_url = match &cfg.backend {
        BackendConfig::Remote { url } => url.clone(),
        _ => None,
    };
    let oracle = || {
        args.gt_mesh
            .clone()
            .or_else(|| cfg_mesh.clone())
            .map(Backend::Oracle)
            .ok_or_else(|| usage("the oracle backend needs --gt-mesh"))
    };
    let remote = || {
        cfg_url
            .clone()
            .or_else(env_url)
            .map(Backend::Remote)
            .ok_or_else(|| usage(format!("the remote backend needs a URL (remote:URL or {ENV_BACKEND_URL})")))
    };
    match args.backend.as_deref() {
        Some("oracle") => oracle(),
        Some("remote") => remote(),
        Some(s) if s.starts_with("remote:") => Ok(Backend::Remote(s["remote:".len()..].to_string())),
        Some(other) => Err(usage(format!("unknown backend `{other}` (oracle | remote | remote:URL)"))),
        None if args.gt_mesh.is_some() => oracle(),
        None => match &cfg.backend {
            BackendConfig::Oracle { .. } => oracle(),
            BackendConfig::Remote { .. } => remote(),
        },
    }
}

impl Backend {
    fn config(&self) -> BackendConfig {
        match self {
            Backend::Oracle(p) => BackendConfig::Oracle { mesh: Some(p.clone()) },
            Backend::Remote(u) => BackendConfig::Remote { url: Some(u.clone()) },
        }
    }

    fn completers(&self) -> CliResult<(Box<dyn ImageCompleter>, Box<dyn DepthCompleter>)> {
        Ok(match self {
            Backend::Oracle(p) => {
                let mesh = io::read_mesh(p)?;
                (Box::new(OracleCompleter::new(mesh.clone())), Box::new(OracleCompleter::new(mesh)))
            }
            Backend::Remote(url) => (
                Box::new(RemoteCompleter::new(RemoteConfig::new(url.clone()))),
                Box::new(RemoteCompleter::new(RemoteConfig::new(url.clone()))),
            ),
        })
    }
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum ViewsFile {
    Trajectory(TrajectoryJson),
    Views(Vec<ViewJson>),
}

pub fn render(g: &Global, a: &RenderArgs) -> CliResult {
    let cfg = load_config(g)?;
    let mesh = io::read_mesh(&a.mesh)?;
    let out = out_dir(g)?;
    let res = a.res.unwrap_or(cfg.resolution);
    let radius = a.radius.unwrap_or(cfg.radius);
    let intr = Intrinsics::from_fov(a.fov.unwrap_or(cfg.fov_deg), res, res)?;
    let views: Vec<ViewJson> = if let Some(p) = &a.views {
        match read_json::<ViewsFile>(p)? {
            ViewsFile::Trajectory(t) => t.views,
            ViewsFile::Views(v) => v,
        }
    } else if a.protocol {
        eval_views(intr, radius)?.iter().map(|v| ViewJson::from_view(v, ViewRole::Main)).collect()
    } else {
        let v = CameraView::orbit(intr, a.azimuth.unwrap_or(0.0), a.elevation.unwrap_or(0.0), radius, 0)?;
        vec![ViewJson::from_view(&v, ViewRole::Anchor)]
    };
    for (i, vj) in views.iter().enumerate() {
        let view = vj.to_view()?;
        let r = rasterize(&mesh, &view);
        io::write_image(out.join(format!("view_{i:02}.png")), &r.color, &r.mask)?;
        io::write_depth(out.join(format!("view_{i:02}.pfm")), &r.depth)?;
        log::info!("view {i}: az {} el {} mask {} px", view.azimuth_deg, view.elevation_deg, r.mask.count());
    }
    write_json(out.join("cameras.json"), &views)?;
    Ok(())
}

pub fn trajectory(g: &Global, a: &TrajectoryArgs) -> CliResult {
    let mut cfg = load_config(g)?;
    if let Some(k) = a.kind {
        cfg.trajectory = k;
    }
    if let Some(d) = a.degree {
        cfg.degree_deg = d;
    }
    if let Some(r) = a.radius {
        cfg.radius = r;
    }
    if let Some(r) = a.res {
        cfg.resolution = r;
    }
    if let Some(k) = a.inpaint {
        cfg.inpaint_count = k;
    }
    cfg.start_negative |= a.start_negative;
    cfg.validate()?;
    let traj = cfg.trajectory_for(cfg.intrinsics()?)?;
    let out = out_dir(g)?;
    write_json(out.join("traj.json"), &traj.to_json())?;
    Ok(())
}

pub fn reconstruct(g: &Global, a: &ReconstructArgs) -> CliResult {
    let mut cfg = load_config(g)?;
    if let Some(k) = a.kind {
        cfg.trajectory = k;
    }
    if let Some(d) = a.degree {
        cfg.degree_deg = d;
    }
    if let Some(k) = a.inpaint {
        cfg.inpaint_count = k;
    }
    cfg.hole_detection &= !a.no_holes;
    cfg.far_clip &= !a.no_clip;
    cfg.outlier_removal &= !a.no_outliers;

    let (color, mask) = io::read_image(&a.anchor)?;
    let (w, h) = color.dims();
    if w != h {
        return Err(usage(format!("anchor image must be square, got {w}x{h}")));
    }
    cfg.resolution = w;
    cfg.validate()?;
    let traj = match &a.traj {
        Some(p) => Trajectory::from_json(&read_json(p)?)?,
        None => cfg.trajectory_for(cfg.intrinsics()?)?,
    };
    if (traj.anchor.width(), traj.anchor.height()) != (w, h) {
        return Err(usage("anchor image size does not match the trajectory cameras"));
    }
    let backend = resolve_backend(&a.backend, &cfg)?;
    cfg.backend = backend.config();
    let (mut image, mut depth) = backend.completers()?;
    let out = out_dir(g)?;
    let created = io::unix_now();
    let anchor = AnchorImage {
        color,
        mask,
        view: traj.anchor,
    };
    let result = reconstruct_along(&anchor, &traj, &mut Completers::new(image.as_mut(), depth.as_mut()), &cfg);
    match result {
        Ok(run) => {
            let mesh = if a.no_mesh { None } else { Some(mesh_from_cloud(&run.cloud, &cfg.meshing)?) };
            write_run_dir(&out, &run.cloud, &run.audit, &cfg, mesh.as_ref())?;
            finish(&out, &cfg, created)?;
            log::info!("{} points written to {}", run.cloud.len(), out.display());
            Ok(())
        }
        Err(e) => {
            let e = *e;
            log::error!("step {} failed: {}", e.step, e.source);
            write_run_dir(&out, &e.cloud, &e.audit, &cfg, None)?;
            finish(&out, &cfg, created)?;
            Err(CliError::Core(e.source))
        }
    }
}

pub fn edit(g: &Global, a: &EditArgs) -> CliResult {
    let mut cfg = read_config(a.run.join("config.json"))?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let original = io::read_cloud(a.run.join("cloud.ply"))?;
    let audit: Audit = read_json(&a.run.join("audit.json"))?;
    let traj = Trajectory::from_json(&audit.trajectory)?;
    let (color, mask) = io::read_image(&a.edit_image)?;
    let region = io::read_mask(&a.edit_mask)?;
    let dims = (traj.anchor.width(), traj.anchor.height());
    if color.dims() != dims || region.dims() != dims {
        return Err(usage(format!("edit image and mask must be {}x{}", dims.0, dims.1)));
    }
    let thickness = a.thickness.unwrap_or_else(|| default_thickness(&original));
    if !(thickness.is_finite() && thickness >= 0.0) {
        return Err(usage("--thickness must be non-negative"));
    }
    let backend = resolve_backend(&a.backend, &cfg)?;
    cfg.backend = backend.config();
    let (mut image, mut depth) = backend.completers()?;
    let out = out_dir(g)?;
    let created = io::unix_now();

    let (kept, removed) = split_edit_region(&original, &traj.anchor, &region, a.mode, thickness)?;
    log::info!("removed {} of {} points", removed.len(), original.len());
    let anchor = AnchorImage {
        color,
        mask,
        view: traj.anchor,
    };
    let manifest_config = serde_json::json!({
        "reconstruction": cfg,
        "edit": {"mode": a.mode, "thickness": thickness, "removed_points": removed.len()},
    });
    let result = edit_along(
        &kept,
        &removed,
        &anchor,
        &region,
        thickness,
        &traj,
        &mut Completers::new(image.as_mut(), depth.as_mut()),
        &cfg,
    );
    match result {
        Ok(res) => {
            let mesh = if a.no_mesh { None } else { Some(mesh_from_cloud(&res.cloud, &cfg.meshing)?) };
            write_run_dir(&out, &res.cloud, &res.audit, &cfg, mesh.as_ref())?;
            io::write_cloud(out.join("added.ply"), &res.added)?;
            finish(&out, &manifest_config, created)?;
            Ok(())
        }
        Err(e) => {
            let e = *e;
            write_run_dir(&out, &e.cloud, &e.audit, &cfg, None)?;
            finish(&out, &manifest_config, created)?;
            Err(CliError::Core(e.source))
        }
    }
}

pub fn eval(g: &Global, a: &EvalArgs) -> CliResult {
    let cfg = load_config(g)?;
    let gt = io::read_mesh(&a.gt)?;
    let recon = io::read_mesh(&a.recon)?;
    if gt.is_empty() {
        return Err(usage("ground-truth PLY has no faces"));
    }
    let radius = a.radius.unwrap_or(cfg.radius);
    let res = a.res.unwrap_or(cfg.resolution);
    let report = if recon.is_empty() {
        point_report(&gt, &recon)?
    } else {
        eval_protocol(&gt, &recon, radius, res)?
    };
    let text = serde_json::to_string_pretty(&report).map_err(Error::Json)? + "\n";
    match &g.out {
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?;
        }
        Some(p) if p.extension().is_some_and(|e| e == "json") => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
            }
            std::fs::write(p, text).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        }
        Some(_) => {
            let dir = out_dir(g)?;
            let write = |name: &str, body: &str| {
                let p = dir.join(name);
                std::fs::write(&p, body).map_err(|e| CliError::Core(Error::Io { path: p, source: e }))
            };
            write("report.json", &text)?;
            write("report.csv", &report.to_csv())?;
        }
    }
    Ok(())
}

/// Chamfer-only report for a reconstruction given as bare points.
fn point_report(gt: &TriangleMesh, recon: &TriangleMesh) -> CliResult<EvalReport> {
    let cloud = PointCloud::new(
        recon
            .vertices
            .iter()
            .zip(&recon.colors)
            .map(|(p, c)| OrientedPoint {
                position: *p,
                color: *c,
                orientation: Vec3::z(),
                step: 0,
            })
            .collect(),
    );
    let raw = chamfer_bidirectional(Surface::Cloud(&cloud), Surface::Mesh(gt), DEFAULT_CHAMFER_SAMPLES, DEFAULT_CHAMFER_SEED)?;
    let diag = gt.bbox_diagonal();
    Ok(EvalReport {
        views: Vec::new(),
        mean_psnr_db: None,
        mean_ssim: None,
        lpips: None,
        chamfer: raw / diag,
        chamfer_scene_units: raw,
        gt_bbox_diagonal: diag,
        normalization: "gt_unit_diagonal".into(),
        chamfer_samples: DEFAULT_CHAMFER_SAMPLES,
        cvcs: Vec::new(),
    })
}

pub fn serve_oracle(g: &Global, a: &ServeArgs) -> CliResult {
    let cfg = load_config(g)?;
    let mesh = io::read_mesh(&a.gt_mesh)?;
    let options = ServerOptions {
        radius: cfg.radius,
        ..ServerOptions::default()
    };
    let mut server = OracleServer::bind(&format!("{}:{}", a.host, a.port), mesh, options)?;
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, stop.clone()).map_err(|e| Error::Io { path: "<signal>".into(), source: e })?;
    }
    let addr = server.local_addr().map(|a| a.to_string()).unwrap_or_default();
    println!("listening on http://{addr}");
    let _ = std::io::stdout().flush();
    server.serve(&stop)?;
    log::info!("shutting down");
    Ok(())
}

pub fn demo(g: &Global, a: &DemoArgs) -> CliResult {
    let mut cfg = load_config(g)?;
    if let Some(r) = a.res {
        cfg.resolution = r;
    }
    cfg.validate()?;
    let out = out_dir(g)?;
    let mesh = synthetic_corpus(a.name, &CorpusParams::default());
    let traj = cfg.trajectory_for(cfg.intrinsics()?)?;
    let anchor = rasterize(&mesh, &traj.anchor);
    io::write_mesh(out.join("mesh.ply"), &mesh)?;
    io::write_image(out.join("anchor.png"), &anchor.color, &anchor.mask)?;
    cfg.backend = BackendConfig::Oracle {
        mesh: Some(PathBuf::from("mesh.ply")),
    };
    write_json(out.join("config.json"), &cfg)?;
    write_json(out.join("traj.json"), &traj.to_json())?;
    Ok(())
}
