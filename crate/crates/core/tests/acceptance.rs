//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use viewloom_core::camera::{circular_azimuths, wrap_degrees, zigzag_azimuths, CameraView, Intrinsics, ViewRole};
use viewloom_core::cloud::{unproject, OrientedPoint, PointCloud};
use viewloom_core::complete::{
    align_inpainted_depth, remote_depth_completer, remote_image_completer, AnchorImage, OracleCompleter, OracleServer,
    ServerOptions,
};
use viewloom_core::grid::{ColorImage, DepthMap, Mask};
use viewloom_core::meshing::{
    build_sdf, extract_mesh, fibonacci_sphere, mesh_from_cloud, sample_oriented, trim_by_density, MeshingParams,
};
use viewloom_core::metrics::{chamfer_normalized, cvcs, eval_views, psnr, ssim, Surface, PSNR_CAP_DB};
use viewloom_core::pipeline::{
    default_thickness, edit, reconstruct, split_edit_region, write_run_dir, Completers, Reconstruction,
    ReconstructionConfig, RemovalMode,
};
use viewloom_core::raster::{rasterize, synthetic_corpus, tee_parts, CorpusName, CorpusParams, TriangleMesh};
use viewloom_core::robust::{detect_open_holes, HoleParams};
use viewloom_core::spatial::PointGrid;
use viewloom_core::warp::{project, project_with_sources, PixelSource, PartialView};
use viewloom_core::Vec3;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget: Duration, detail: String) -> Outcome {
    ensure(elapsed < budget, format!("{detail}; {:.1}s of {:.0}s budget", elapsed.as_secs_f64(), budget.as_secs_f64()))
}

fn anchor_of(mesh: &TriangleMesh, cfg: &ReconstructionConfig) -> AnchorImage {
    let view = CameraView::orbit(cfg.intrinsics().unwrap(), 0.0, 0.0, cfg.radius, 0).unwrap();
    let r = rasterize(mesh, &view);
    AnchorImage {
        color: r.color,
        mask: r.mask,
        view,
    }
}

fn oracle_run(mesh: &TriangleMesh, cfg: &ReconstructionConfig) -> Reconstruction {
    let anchor = anchor_of(mesh, cfg);
    let mut a = OracleCompleter::new(mesh.clone());
    let mut b = OracleCompleter::new(mesh.clone());
    reconstruct(&anchor, &mut Completers::new(&mut a, &mut b), cfg).expect("oracle reconstruction")
}

fn run_bytes(run: &Reconstruction, cfg: &ReconstructionConfig) -> (Vec<u8>, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    write_run_dir(dir.path(), &run.cloud, &run.audit, cfg, None).unwrap();
    (
        std::fs::read(dir.path().join("cloud.ply")).unwrap(),
        std::fs::read(dir.path().join("audit.json")).unwrap(),
    )
}

const CORPUS: [CorpusName; 4] = [CorpusName::Sphere, CorpusName::Tunic, CorpusName::Tee, CorpusName::Panel];
const ASSETS: [CorpusName; 3] = [CorpusName::Sphere, CorpusName::Tunic, CorpusName::Tee];

fn round_trip() -> Outcome {
    let intr = Intrinsics::square(512).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for name in CORPUS {
        let t = Instant::now();
        let mesh = synthetic_corpus(name, &CorpusParams::default());
        let (mut worst_depth, mut worst_color, mut worst_cov) = (0.0f64, 0.0f64, 1.0f64);
        for (az, el) in [(0.0, 0.0), (45.0, 20.0), (200.0, -15.0)] {
            let view = CameraView::orbit(intr, az, el, 3.0, 0).unwrap();
            let render = rasterize(&mesh, &view);
            let back = project(&unproject(&render), &view);
            let both = back.coverage.and(&render.mask);
            for (i, &b) in both.data().iter().enumerate() {
                if b {
                    worst_depth = worst_depth.max((back.depth.data()[i] as f64 - render.depth.data()[i] as f64).abs());
                    for c in 0..3 {
                        worst_color = worst_color.max((back.color.data()[i][c] - render.color.data()[i][c]).abs() as f64);
                    }
                }
            }
            worst_cov = worst_cov.min(both.count() as f64 / render.mask.count() as f64);
        }
        let el = t.elapsed();
        ok &= worst_depth <= 1e-4 && worst_color <= 1.0 / 255.0 && worst_cov >= 0.98 && el < Duration::from_secs(5);
        notes.push(format!(
            "{name:?} depth {worst_depth:.1e} color {worst_color:.1e} coverage {:.4} {:.2}s",
            worst_cov,
            el.as_secs_f64()
        ));
    }
    ensure(ok, notes.join("; "))
}

fn culling() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let unit = |rng: &mut ChaCha8Rng| {
        let v = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        v / v.norm()
    };
    let points: Vec<OrientedPoint> = (0..1000)
        .map(|_| OrientedPoint {
            position: unit(&mut rng) * rng.random_range(0.0..1.0f64).cbrt(),
            color: [0.5; 3],
            orientation: unit(&mut rng),
            step: 0,
        })
        .collect();
    let pc = PointCloud::new(points);
    let intr = Intrinsics::square(256).unwrap();
    let (mut violations, mut splats) = (0, 0);
    for s in 0..20 {
        let view = CameraView::orbit(intr, rng.random_range(-180.0..180.0), rng.random_range(-60.0..60.0), rng.random_range(2.0..4.0), s).unwrap();
        let (_, sources) = project_with_sources(&pc, &view);
        for src in sources.data() {
            if let PixelSource::Splat(i) = *src {
                splats += 1;
                let p = &pc.points()[i];
                let v0 = (view.center() - p.position).normalize();
                if p.orientation.dot(&v0) <= 0.0 {
                    violations += 1;
                }
            }
        }
    }
    let el = t.elapsed();
    let detail = format!("{violations} back-facing splats out of {splats}");
    ensure(violations == 0 && splats > 0, detail.clone()).and_then(|d| within(el, Duration::from_secs(1), d))
}

struct AssetRun {
    name: CorpusName,
    mesh: TriangleMesh,
    run: Reconstruction,
}

fn oracle_end_to_end(runs: &mut Vec<AssetRun>) -> Outcome {
    let cfg = ReconstructionConfig::default();
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ASSETS {
        let mesh = synthetic_corpus(name, &CorpusParams::default());
        let t = Instant::now();
        let run = oracle_run(&mesh, &cfg);
        let recon_mesh = mesh_from_cloud(&run.cloud, &MeshingParams::default()).unwrap();
        let el = t.elapsed();
        let cloud_c = chamfer_normalized(Surface::Cloud(&run.cloud), &mesh, 100_000, 0).unwrap();
        let mesh_c = chamfer_normalized(Surface::Mesh(&recon_mesh), &mesh, 100_000, 0).unwrap();
        ok &= cloud_c < 0.01 && mesh_c < 0.015 && el < Duration::from_secs(180);
        notes.push(format!(
            "{name:?} cloud {cloud_c:.5} mesh {mesh_c:.5} ({} points, {:.1}s)",
            run.cloud.len(),
            el.as_secs_f64()
        ));
        runs.push(AssetRun { name, mesh, run });
    }
    ensure(ok, notes.join("; "))
}

fn oracle_cvcs(runs: &[AssetRun]) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = !runs.is_empty();
    for r in runs {
        let mains: Vec<_> = r.run.audit.steps.iter().filter(|s| s.camera.role == ViewRole::Main).collect();
        let scores: Vec<f64> = mains.iter().flat_map(|s| s.cvcs_adjacent.iter().map(|a| a.cvcs)).collect();
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= mains.iter().all(|s| !s.cvcs_adjacent.is_empty()) && min >= 0.98;
        notes.push(format!("{:?} min {min:.4} over {} pairs", r.name, scores.len()));
    }
    ensure(ok, notes.join("; "))
}

/// Disk at `ring` depth with a centered inner disk at `inner` depth.
fn annulus(n: usize, ring: f32, inner: f32) -> (DepthMap, Mask, Mask) {
    let c = n as f64 / 2.0;
    let r = |x: usize, y: usize| ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
    let mask = Mask::from_fn(n, n, |x, y| r(x, y) <= 0.4 * n as f64);
    let interior = Mask::from_fn(n, n, |x, y| r(x, y) <= 0.2 * n as f64);
    let depth = DepthMap::from_fn(n, n, |x, y| {
        if *interior.get(x, y) {
            inner
        } else if *mask.get(x, y) {
            ring
        } else {
            0.0
        }
    });
    (depth, mask, interior)
}

fn hole_detection() -> Outcome {
    let t = Instant::now();
    let params = HoleParams::default();
    let mut bad = Vec::new();
    for n in [128, 256] {
        for off in [0.2f32, 0.5, 1.0] {
            let (depth, mask, interior) = annulus(n, 1.0, 1.0 + off);
            let deeper = detect_open_holes(&depth, &mask, &params).unwrap();
            if !interior.is_subset_of(&deeper.hole_mask) {
                bad.push(format!("deeper n={n} off={off} missed"));
            }
            let (depth, mask, _) = annulus(n, 1.0 + off, 1.0);
            let closer = detect_open_holes(&depth, &mask, &params).unwrap();
            if !closer.hole_mask.is_empty_mask() {
                bad.push(format!("closer n={n} off={off} flagged"));
            }
        }
    }
    let detail = format!("epsilon {}, 12 fixtures, {} misclassified", params.epsilon, bad.len());
    ensure(bad.is_empty(), format!("{detail} {bad:?}")).and_then(|_| within(t.elapsed(), Duration::from_secs(1), detail))
}

fn trajectory_semantics() -> Outcome {
    let zig = zigzag_azimuths(60.0, false).unwrap();
    let circ = circular_azimuths(60.0).unwrap();
    let views = eval_views(Intrinsics::square(64).unwrap(), 3.0).unwrap();
    let els: Vec<f64> = views.iter().map(|v| v.elevation_deg).collect();
    let azs: Vec<f64> = views.iter().map(|v| v.azimuth_deg).collect();
    let ok = zig == [60.0, -60.0, 120.0, -120.0, 180.0]
        && circ == [60.0, 120.0, 180.0, -120.0, -60.0]
        && els == (0..12).map(|k| if k % 2 == 0 { 0.0 } else { 20.0 }).collect::<Vec<_>>()
        && azs == (0..12).map(|k| wrap_degrees(k as f64 * 30.0)).collect::<Vec<_>>();
    ensure(ok, format!("zigzag {zig:?}, circular {circ:?}, eval azimuths {azs:?}, elevations {els:?}"))
}

fn depth_alignment() -> Outcome {
    let t = Instant::now();
    let n = 128;
    let truth = DepthMap::from_fn(n, n, |x, y| (1.5 + 0.01 * x as f64 + 0.005 * y as f64 + 0.2 * (x as f64 * 0.05).sin()) as f32);
    let coverage = Mask::from_fn(n, n, |x, _| x < n / 2);
    let inpaint = coverage.map(|c| !c);
    let warped = DepthMap::from_fn(n, n, |x, y| if *coverage.get(x, y) { *truth.get(x, y) } else { 0.0 });
    let noise = Normal::new(0.0, 1e-3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = (0.0f64, 0.0f64);
    let mut ok = true;
    for s in [0.5, 0.8, 1.25] {
        for b in [-0.3, 0.0, 0.3] {
            let pred = truth.map(|&d| ((d as f64 - b) / s + noise.sample(&mut rng)) as f32);
            let (_, fit) = align_inpainted_depth(&pred, &warped, &coverage, &inpaint).unwrap();
            let (es, eb) = ((fit.scale - s).abs(), (fit.shift - b).abs());
            ok &= es <= 0.01 * s && eb <= 0.01;
            worst = (worst.0.max(es / s), worst.1.max(eb));
        }
    }
    let detail = format!("worst relative scale error {:.1e}, worst shift error {:.1e}", worst.0, worst.1);
    ensure(ok, detail.clone()).and_then(|_| within(t.elapsed(), Duration::from_secs(1), detail))
}

fn meshing_fixture() -> Outcome {
    let t = Instant::now();
    let sphere = fibonacci_sphere(10_000, Vec3::zeros(), 1.0, [0.6, 0.6, 0.6]);
    let mesh = mesh_from_cloud(&sphere, &MeshingParams::default()).unwrap();
    let radial = mesh.vertices.iter().map(|v| (v.norm() - 1.0).abs()).sum::<f64>() / mesh.vertices.len().max(1) as f64;

    let tunic = synthetic_corpus(CorpusName::Tunic, &CorpusParams::default());
    let cloud = sample_oriented(&tunic, 100_000, 3);
    let params = MeshingParams::default();
    let grid = build_sdf(&cloud, &params.sdf).unwrap();
    let raw = extract_mesh(&grid);
    let trimmed = trim_by_density(&raw, &PointGrid::new(cloud.positions(), 2.0 * grid.voxel), params.clean.trim_voxels * grid.voxel);
    let final_mesh = mesh_from_cloud(&cloud, &params).unwrap();
    let (after_trim, after_clean) = (trimmed.boundary_loop_count(), final_mesh.boundary_loop_count());
    let el = t.elapsed();
    let detail = format!(
        "sphere mean radial error {radial:.5}; tunic loops {} raw, {after_trim} after trim, {after_clean} final",
        raw.boundary_loop_count()
    );
    ensure(mesh.faces.len() > 0 && radial < 0.02 && after_trim == 2 && after_clean == 2, detail.clone())
        .and_then(|_| within(el, Duration::from_secs(30), detail))
}

fn editing(tee: Option<&AssetRun>) -> Outcome {
    let t = Instant::now();
    let cfg = ReconstructionConfig::default();
    let parts = tee_parts(&CorpusParams::default());
    let original = synthetic_corpus(CorpusName::Tee, &CorpusParams::default());
    let g = match tee {
        Some(r) => r.run.cloud.clone(),
        None => oracle_run(&original, &cfg).cloud,
    };
    let mut edited_mesh = parts.torso.clone();
    edited_mesh.append(&parts.right_sleeve);

    let anchor = anchor_of(&original, &cfg);
    let sleeve = rasterize(&parts.left_sleeve, &anchor.view).mask;
    let thickness = default_thickness(&g);
    let (kept, removed) = split_edit_region(&g, &anchor.view, &sleeve, RemovalMode::Part, thickness).unwrap();

    let run_edit = |gt: &TriangleMesh| {
        let edited_anchor = anchor_of(gt, &cfg);
        let mut a = OracleCompleter::new(gt.clone());
        let mut b = OracleCompleter::new(gt.clone());
        let out = edit(&kept, &removed, &edited_anchor, &sleeve, thickness, &mut Completers::new(&mut a, &mut b), &cfg)
            .expect("edit run");
        chamfer_normalized(Surface::Cloud(&out.cloud), gt, 100_000, 0).unwrap()
    };
    let identity = run_edit(&original);
    let removal = run_edit(&edited_mesh);
    let el = t.elapsed();
    let detail = format!(
        "identity {identity:.5}; sleeve removal {removal:.5}; removed {} of {} points",
        removed.len(),
        g.len()
    );
    ensure(identity < 0.01 && removal < 0.01, detail.clone()).and_then(|_| within(el, Duration::from_secs(300), detail))
}

fn metric_identities() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = ColorImage::from_fn(64, 64, |_, _| [rng.random(), rng.random(), rng.random()]);
    let p = psnr(&a, &a, None).unwrap();
    let s = ssim(&a, &a).unwrap();
    let view = CameraView::orbit(Intrinsics::square(64).unwrap(), 0.0, 0.0, 3.0, 0).unwrap();
    // partial side offset by the f32 rounding of 0.1
    let hi = 0.1f32;
    let lo = (hi as f64 - 0.1) as f32;
    let partial = PartialView {
        color: ColorImage::new(64, 64, [lo; 3]),
        coverage: Mask::new(64, 64, true),
        ..PartialView::empty(&view)
    };
    let c = cvcs(&ColorImage::new(64, 64, [hi; 3]), &partial).unwrap();
    let square = |z: f64| {
        let v = vec![Vec3::new(0.0, 0.0, z), Vec3::new(1.0, 0.0, z), Vec3::new(1.0, 1.0, z), Vec3::new(0.0, 1.0, z)];
        TriangleMesh::new(v, vec![[0.5; 3]; 4], vec![[0, 1, 2], [0, 2, 3]]).unwrap()
    };
    let offset = 0.01 * square(0.0).bbox_diagonal();
    let ch = chamfer_normalized(Surface::Mesh(&square(offset)), &square(0.0), 100_000, 0).unwrap() * square(0.0).bbox_diagonal();
    let ok = p == PSNR_CAP_DB && (s - 1.0).abs() <= 1e-9 && (c - 0.9).abs() <= 1e-9 && (ch - offset).abs() <= 1e-6;
    let detail = format!("psnr {p}, ssim {s}, cvcs {c}, chamfer {ch:.9} vs offset {offset:.9}");
    ensure(ok, detail.clone()).and_then(|_| within(t.elapsed(), Duration::from_secs(1), detail))
}

fn loopback(sphere: Option<&AssetRun>) -> Outcome {
    let t = Instant::now();
    let cfg = ReconstructionConfig::default();
    let mesh = synthetic_corpus(CorpusName::Sphere, &CorpusParams::default());
    let local = match sphere {
        Some(r) => r.run.clone(),
        None => oracle_run(&mesh, &cfg),
    };
    let mut server = OracleServer::bind("127.0.0.1:0", mesh.clone(), ServerOptions::default()).unwrap();
    let url = format!("http://{}", server.local_addr().unwrap());
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let handle = std::thread::spawn(move || server.serve(&flag));
    let anchor = anchor_of(&mesh, &cfg);
    let mut a = remote_image_completer(url.clone());
    let mut b = remote_depth_completer(url);
    let remote = reconstruct(&anchor, &mut Completers::new(&mut a, &mut b), &cfg);
    stop.store(true, Ordering::SeqCst);
    handle.join().unwrap().unwrap();
    let remote = remote.map_err(|e| format!("remote run failed: {e}"))?;
    let (lc, la) = run_bytes(&local, &cfg);
    let (rc, ra) = run_bytes(&remote, &cfg);
    let detail = format!(
        "cloud.ply {} bytes {}, audit.json {} bytes {}",
        lc.len(),
        if lc == rc { "identical" } else { "DIFFER" },
        la.len(),
        if la == ra { "identical" } else { "DIFFER" }
    );
    ensure(lc == rc && la == ra, detail.clone()).and_then(|_| within(t.elapsed(), Duration::from_secs(240), detail))
}

fn determinism(runs: &[AssetRun]) -> Outcome {
    let cfg = ReconstructionConfig::default();
    let mut notes = Vec::new();
    let mut ok = !runs.is_empty();
    for r in runs {
        let again = oracle_run(&r.mesh, &cfg);
        let (c1, a1) = run_bytes(&r.run, &cfg);
        let (c2, a2) = run_bytes(&again, &cfg);
        ok &= c1 == c2 && a1 == a2;
        notes.push(format!("{:?} {}", r.name, if c1 == c2 && a1 == a2 { "identical" } else { "DIFFER" }));
    }
    ensure(ok, notes.join("; "))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, title: &str, outcome: Outcome, t: Instant| {
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {title}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {title}: {d} [{secs:.1}s]");
            }
        }
    };
    let mut runs = Vec::new();
    let t = Instant::now();
    report(1, "round-trip fidelity", round_trip(), t);
    let t = Instant::now();
    report(2, "culling soundness", culling(), t);
    let t = Instant::now();
    report(3, "oracle end-to-end reconstruction", oracle_end_to_end(&mut runs), t);
    let t = Instant::now();
    report(4, "oracle CVCS", oracle_cvcs(&runs), t);
    let t = Instant::now();
    report(5, "hole detection", hole_detection(), t);
    let t = Instant::now();
    report(6, "trajectory semantics", trajectory_semantics(), t);
    let t = Instant::now();
    report(7, "depth alignment", depth_alignment(), t);
    let t = Instant::now();
    report(8, "meshing fixture", meshing_fixture(), t);
    let t = Instant::now();
    report(9, "editing self-consistency", editing(runs.iter().find(|r| r.name == CorpusName::Tee)), t);
    let t = Instant::now();
    report(10, "metric identities", metric_identities(), t);
    let t = Instant::now();
    report(11, "loopback protocol equivalence", loopback(runs.iter().find(|r| r.name == CorpusName::Sphere)), t);
    let t = Instant::now();
    report(12, "determinism", determinism(&runs), t);
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
