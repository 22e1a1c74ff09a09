use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use viewloom_core::camera::{Intrinsics, TrajectoryJson, ViewJson, ViewRole};
use viewloom_core::grid::Mask;
use viewloom_core::io;
use viewloom_core::metrics::eval_views;
use viewloom_core::raster::{synthetic_corpus, CorpusName, CorpusParams};

const RES: &str = "96";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_viewloom"));
    c.env_remove("VIEWLOOM_BACKEND_URL");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn viewloom")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `demo` at the test resolution, returning its directory.
fn demo(dir: &Path, name: &str) -> PathBuf {
    let d = dir.join(name);
    let o = run(&["demo", "--name", name, "--res", RES, "--out", s(&d)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    d
}

fn reconstruct(demo: &Path, out: &Path, extra: &[&str]) -> Output {
    let cfg = demo.join("config.json");
    let anchor = demo.join("anchor.png");
    let mut args = vec!["reconstruct", "--config", s(&cfg), "--anchor", s(&anchor), "--out", s(out), "--inpaint", "1"];
    args.extend_from_slice(extra);
    run(&args)
}

fn same_run_files(a: &Path, b: &Path) {
    for f in ["cloud.ply", "audit.json"] {
        assert!(std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

struct Server {
    child: Child,
    url: String,
}

impl Server {
    fn start(mesh: &Path) -> Self {
        let mut child = bin()
            .args(["serve-oracle", "--gt-mesh", s(mesh), "--port", "0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().strip_prefix("listening on ").expect("listening line").to_string();
        Self { child, url }
    }

    fn terminate(mut self) -> i32 {
        let pid = self.child.id().to_string();
        assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
        self.child.wait().unwrap().code().unwrap_or(-1)
    }
}

#[test]
fn render_single_view() {
    let t = tempfile::tempdir().unwrap();
    let mesh = t.path().join("sphere.ply");
    io::write_mesh(&mesh, &synthetic_corpus(CorpusName::Sphere, &CorpusParams::default())).unwrap();
    let out = t.path().join("r");
    let o = run(&["render", "--mesh", s(&mesh), "--azimuth", "-30", "--elevation", "10", "--res", "64", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, mask) = io::read_image(out.join("view_00.png")).unwrap();
    assert!(mask.count() > 0);
    assert_eq!(io::read_depth(out.join("view_00.pfm")).unwrap().dims(), (64, 64));
}

#[test]
fn render_protocol_matches_eval_cameras() {
    let t = tempfile::tempdir().unwrap();
    let mesh = t.path().join("sphere.ply");
    io::write_mesh(&mesh, &synthetic_corpus(CorpusName::Sphere, &CorpusParams::default())).unwrap();
    let out = t.path().join("r");
    let o = run(&["render", "--mesh", s(&mesh), "--protocol", "--res", "64", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let written: Vec<ViewJson> = serde_json::from_slice(&std::fs::read(out.join("cameras.json")).unwrap()).unwrap();
    let intr = Intrinsics::square(64).unwrap();
    let expected: Vec<ViewJson> = eval_views(intr, 3.0).unwrap().iter().map(|v| ViewJson::from_view(v, ViewRole::Main)).collect();
    assert_eq!(written, expected);
    assert!(out.join("view_11.png").exists());
}

#[test]
fn render_bad_mesh_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["render", "--mesh", "/nonexistent/mesh.ply", "--out", s(t.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn trajectory_files() {
    let t = tempfile::tempdir().unwrap();
    let read = |d: &Path| -> TrajectoryJson { serde_json::from_slice(&std::fs::read(d.join("traj.json")).unwrap()).unwrap() };
    let count = |j: &TrajectoryJson, r: ViewRole| j.views.iter().filter(|v| v.role == r).count();

    let z = t.path().join("z");
    let o = run(&["trajectory", "--kind", "zigzag", "--degree", "60", "--inpaint", "3", "--seed", "5", "--res", "64", "--out", s(&z)]);
    assert_eq!(code(&o), 0);
    let j = read(&z);
    assert_eq!((count(&j, ViewRole::Anchor), count(&j, ViewRole::Main), count(&j, ViewRole::Inpaint)), (1, 5, 3));
    assert_eq!(j.seed, 5);

    let c = t.path().join("c");
    assert_eq!(code(&run(&["trajectory", "--kind", "circular", "--out", s(&c)])), 0);
    let j = read(&c);
    let az: Vec<f64> = j.views.iter().filter(|v| v.role == ViewRole::Main).map(|v| v.azimuth_deg).collect();
    assert_eq!(az, [60.0, 120.0, 180.0, -120.0, -60.0]);

    assert_eq!(code(&run(&["trajectory", "--degree", "70", "--out", s(&t.path().join("bad"))])), 2);
    assert_eq!(code(&run(&["trajectory", "--kind", "spiral", "--out", s(&t.path().join("bad"))])), 2);
}

#[test]
fn oracle_reconstruction_writes_a_run_directory() {
    let t = tempfile::tempdir().unwrap();
    let d = demo(t.path(), "tee");
    let out = t.path().join("run");
    let o = reconstruct(&d, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["cloud.ply", "mesh.ply", "audit.json", "config.json", "manifest.json", "steps/00_partial.png", "steps/01_depth.pfm"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!io::read_cloud(out.join("cloud.ply")).unwrap().is_empty());
    assert!(!io::read_mesh(out.join("mesh.ply")).unwrap().is_empty());
    let manifest: io::RunManifest = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.verify(&out).unwrap().is_empty());
    assert!(manifest.files.iter().any(|f| f.path == "steps/00_completed.png"));

    // identical invocations give identical run files
    let again = t.path().join("again");
    assert_eq!(code(&reconstruct(&d, &again, &[])), 0);
    same_run_files(&out, &again);

    let bare = t.path().join("bare");
    let o = reconstruct(&d, &bare, &["--no-holes", "--no-clip", "--no-outliers", "--no-mesh"]);
    assert_eq!(code(&o), 0);
    assert!(!bare.join("mesh.ply").exists());
}

#[test]
fn unreachable_backend_exits_3() {
    let t = tempfile::tempdir().unwrap();
    let d = demo(t.path(), "sphere");
    let o = reconstruct(&d, &t.path().join("run"), &["--backend", "remote:http://127.0.0.1:9"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("backend unavailable"));
    // the partial run is still written, with the failure recorded
    let audit: serde_json::Value = serde_json::from_slice(&std::fs::read(t.path().join("run/audit.json")).unwrap()).unwrap();
    assert!(audit["error"].is_string());
    // remote with no URL anywhere is a usage error
    assert_eq!(code(&reconstruct(&d, &t.path().join("r2"), &["--backend", "remote"])), 2);
}

#[test]
fn edit_with_empty_mask_keeps_the_cloud() {
    let t = tempfile::tempdir().unwrap();
    let d = demo(t.path(), "sphere");
    let r = t.path().join("run");
    assert_eq!(code(&reconstruct(&d, &r, &["--no-mesh"])), 0);
    let mask = t.path().join("empty.png");
    io::write_mask(&mask, &Mask::new(96, 96, false)).unwrap();
    let out = t.path().join("edited");
    let anchor = d.join("anchor.png");
    let o = run(&["edit", "--run", s(&r), "--edit-image", s(&anchor), "--edit-mask", s(&mask), "--out", s(&out), "--no-mesh"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(io::read_cloud(out.join("cloud.ply")).unwrap(), io::read_cloud(r.join("cloud.ply")).unwrap());
    assert!(io::read_cloud(out.join("added.ply")).unwrap().is_empty());

    let missing = t.path().join("missing.png");
    let o = run(&["edit", "--run", s(&r), "--edit-image", s(&anchor), "--edit-mask", s(&missing), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn edit_regrows_a_masked_half() {
    let t = tempfile::tempdir().unwrap();
    let d = demo(t.path(), "sphere");
    let r = t.path().join("run");
    assert_eq!(code(&reconstruct(&d, &r, &["--no-mesh"])), 0);
    let (_, fg) = io::read_image(d.join("anchor.png")).unwrap();
    let mask = t.path().join("half.png");
    io::write_mask(&mask, &Mask::from_fn(96, 96, |x, y| x < 48 && *fg.get(x, y))).unwrap();
    let out = t.path().join("edited");
    let anchor = d.join("anchor.png");
    let o = run(&["edit", "--run", s(&r), "--edit-image", s(&anchor), "--edit-mask", s(&mask), "--mode", "surface", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!io::read_cloud(out.join("added.ply")).unwrap().is_empty());
    assert!(out.join("mesh.ply").exists());
}

#[test]
fn eval_reports() {
    let t = tempfile::tempdir().unwrap();
    let d = demo(t.path(), "sphere");
    let mesh = d.join("mesh.ply");
    let report = t.path().join("report.json");
    let o = run(&["eval", "--gt", s(&mesh), "--recon", s(&mesh), "--res", "64", "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(v["chamfer"].as_f64().unwrap() < 1e-12);
    assert!(v["lpips"].is_null());
    assert_eq!(v["normalization"], "gt_unit_diagonal");
    assert_eq!(v["views"].as_array().unwrap().len(), 12);
    for view in v["views"].as_array().unwrap() {
        assert_eq!(view["psnr_db"].as_f64().unwrap(), 99.0);
    }
    let gt = io::read_mesh(&mesh).unwrap();
    let diag = gt.bbox_diagonal();
    let moved = t.path().join("moved.ply");
    io::write_mesh(&moved, &gt.transformed(1.0, viewloom_core::Vec3::new(0.0, 0.0, 0.01 * diag))).unwrap();
    let dir = t.path().join("evaldir");
    let o = run(&["eval", "--gt", s(&mesh), "--recon", s(&moved), "--res", "64", "--out", s(&dir)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    let c = v["chamfer"].as_f64().unwrap();
    // a sphere moved along z: mean |cos| over the surface halves the shift
    assert!((c - 0.005).abs() < 5e-4, "{c}");
    assert!(dir.join("report.csv").exists());
}

#[test]
fn serve_oracle_loopback_matches_in_process() {
    let t = tempfile::tempdir().unwrap();
    let d = demo(t.path(), "sphere");
    let server = Server::start(&d.join("mesh.ply"));

    // malformed body
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent.post(&format!("{}/v1/complete_image", server.url)).send("{not json").unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: serde_json::Value = serde_json::from_str(&resp.body_mut().read_to_string().unwrap()).unwrap();
    assert!(body["code"].is_string() && body["message"].is_string());

    let local = t.path().join("local");
    let remote = t.path().join("remote");
    assert_eq!(code(&reconstruct(&d, &local, &["--no-mesh"])), 0);
    let backend = format!("remote:{}", server.url);
    let o = reconstruct(&d, &remote, &["--no-mesh", "--backend", &backend]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    same_run_files(&local, &remote);

    // the environment variable works as well
    let env_run = t.path().join("env");
    let cfg = d.join("config.json");
    let anchor = d.join("anchor.png");
    let o = bin()
        .env("VIEWLOOM_BACKEND_URL", &server.url)
        .args(["reconstruct", "--config", s(&cfg), "--anchor", s(&anchor), "--out", s(&env_run), "--inpaint", "1"])
        .args(["--no-mesh", "--backend", "remote"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    same_run_files(&local, &env_run);

    assert_eq!(server.terminate(), 0);
}

#[test]
fn demo_is_repeatable() {
    let t = tempfile::tempdir().unwrap();
    let a = demo(t.path(), "panel");
    let b = t.path().join("panel2");
    assert_eq!(code(&run(&["demo", "--name", "panel", "--res", RES, "--out", s(&b)])), 0);
    for f in ["mesh.ply", "anchor.png", "config.json", "traj.json"] {
        assert!(std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(code(&run(&["demo", "--name", "robe", "--out", s(&t.path().join("x"))])), 2);
}
