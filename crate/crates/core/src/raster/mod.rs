//! Deterministic software rasterizer producing RGBD renders of triangle
//! meshes.
//!
//! Flat albedo, no lighting, no anti-aliasing. Pixels are sampled at their
//! centers `(x + 0.5, y + 0.5)`. Depth is the perspective-correct camera
//! z. Back faces are drawn. Z ties go to the lower face index.

mod corpus;

pub use corpus::{synthetic_corpus, tee_parts, CorpusName, CorpusParams, TeeParts};

use std::collections::BTreeMap;

use crate::camera::CameraView;
use crate::grid::{ColorImage, DepthMap, Mask, Rgb};
use crate::{Error, Result, Vec3};

/// Triangles behind this camera-space depth are clipped.
const NEAR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<Rgb>,
    pub normals: Option<Vec<Vec3>>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, colors: Vec<Rgb>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            colors,
            normals: None,
            faces,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.colors.len() != n {
            return Err(Error::invalid("mesh needs one color per vertex"));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::invalid("mesh needs one normal per vertex"));
            }
        }
        if self.faces.iter().flatten().any(|&i| i as usize >= n) {
            return Err(Error::invalid("face index out of range"));
        }
        if !self.vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("non-finite vertex coordinate"));
        }
        if !self.colors.iter().flatten().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::invalid("vertex color outside [0, 1]"));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bbox(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    /// Uniform scale about the origin followed by a translation.
    pub fn transformed(&self, scale: f64, offset: Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| v * scale + offset).collect(),
            colors: self.colors.clone(),
            normals: self.normals.clone(),
            faces: self.faces.clone(),
        }
    }

    /// Disjoint union; the other mesh's indices are shifted.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.colors.extend_from_slice(&other.colors);
        self.normals = match (self.normals.take(), &other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            _ => None,
        };
        self.faces.extend(other.faces.iter().map(|f| f.map(|i| i + base)));
    }

    /// Number of faces incident to each undirected edge.
    pub fn edge_face_counts(&self) -> BTreeMap<(u32, u32), usize> {
        let mut counts = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// True when every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        !self.faces.is_empty() && self.edge_face_counts().values().all(|&c| c == 2)
    }

    /// Number of connected components of the boundary-edge graph.
    pub fn boundary_loop_count(&self) -> usize {
        let boundary: Vec<(u32, u32)> = self
            .edge_face_counts()
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|(e, _)| e)
            .collect();
        let mut uf = UnionFind::new(self.vertices.len());
        for &(a, b) in &boundary {
            uf.union(a as usize, b as usize);
        }
        let mut roots: Vec<usize> = boundary.iter().map(|&(a, _)| uf.find(a as usize)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    /// Drop vertices no face references, remapping indices.
    pub fn compact(&self) -> TriangleMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut out = TriangleMesh::default();
        let mut normals = self.normals.as_ref().map(|_| Vec::new());
        let mut faces = Vec::with_capacity(self.faces.len());
        for f in &self.faces {
            let nf = f.map(|i| {
                let i = i as usize;
                if remap[i] == u32::MAX {
                    remap[i] = out.vertices.len() as u32;
                    out.vertices.push(self.vertices[i]);
                    out.colors.push(self.colors[i]);
                    if let (Some(dst), Some(src)) = (normals.as_mut(), self.normals.as_ref()) {
                        dst.push(src[i]);
                    }
                }
                remap[i]
            });
            faces.push(nf);
        }
        out.faces = faces;
        out.normals = normals;
        out
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so labels are order independent
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Complete color, depth and foreground mask at one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RGBDView {
    pub color: ColorImage,
    pub depth: DepthMap,
    pub mask: Mask,
    pub view: CameraView,
}

impl RGBDView {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.view.width(), self.view.height());
        if self.color.dims() != (w, h) || self.depth.dims() != (w, h) || self.mask.dims() != (w, h) {
            return Err(Error::invalid("RGBD planes must match the view resolution"));
        }
        let consistent = self
            .mask
            .data()
            .iter()
            .zip(self.depth.data())
            .all(|(&m, &d)| m == (d > 0.0 && d.is_finite()));
        if !consistent {
            return Err(Error::invalid("mask must equal the set of positive finite depths"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vec3,
    c: [f64; 3],
}

fn lerp(a: &ClipVertex, b: &ClipVertex, t: f64) -> ClipVertex {
    ClipVertex {
        p: a.p + (b.p - a.p) * t,
        c: [
            a.c[0] + (b.c[0] - a.c[0]) * t,
            a.c[1] + (b.c[1] - a.c[1]) * t,
            a.c[2] + (b.c[2] - a.c[2]) * t,
        ],
    }
}

/// Clip a camera-space triangle against the near plane. Returns 0, 3 or 4
/// vertices of a convex polygon.
fn clip_near(tri: [ClipVertex; 3]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = &tri[i];
        let b = &tri[(i + 1) % 3];
        let a_in = a.p.z >= NEAR;
        let b_in = b.p.z >= NEAR;
        if a_in {
            out.push(*a);
        }
        if a_in != b_in {
            let t = (NEAR - a.p.z) / (b.p.z - a.p.z);
            out.push(lerp(a, b, t));
        }
    }
    out
}

struct Target<'a> {
    color: &'a mut ColorImage,
    zbuf: &'a mut Vec<f64>,
}

fn draw_triangle(view: &CameraView, tri: [ClipVertex; 3], target: &mut Target<'_>) {
    let k = &view.intrinsics;
    let (w, h) = (k.width, k.height);
    let s: Vec<(f64, f64)> = tri.iter().map(|v| k.project(&v.p)).collect();
    let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[1].1 - s[0].1) * (s[2].0 - s[0].0);
    if area.abs() < 1e-12 || !area.is_finite() {
        return;
    }
    let min_u = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_u = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_v = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_v = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (min_u - 0.5).ceil().max(0.0);
    let x1 = (max_u - 0.5).floor().min(w as f64 - 1.0);
    let y0 = (min_v - 0.5).ceil().max(0.0);
    let y1 = (max_v - 0.5).floor().min(h as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let inv_area = 1.0 / area;
    let inv_z = [1.0 / tri[0].p.z, 1.0 / tri[1].p.z, 1.0 / tri[2].p.z];
    for y in y0 as usize..=y1 as usize {
        let pv = y as f64 + 0.5;
        for x in x0 as usize..=x1 as usize {
            let pu = x as f64 + 0.5;
            let e0 = (s[2].0 - s[1].0) * (pv - s[1].1) - (s[2].1 - s[1].1) * (pu - s[1].0);
            let e1 = (s[0].0 - s[2].0) * (pv - s[2].1) - (s[0].1 - s[2].1) * (pu - s[2].0);
            let e2 = (s[1].0 - s[0].0) * (pv - s[0].1) - (s[1].1 - s[0].1) * (pu - s[0].0);
            let l = [e0 * inv_area, e1 * inv_area, e2 * inv_area];
            if l[0] < 0.0 || l[1] < 0.0 || l[2] < 0.0 {
                continue;
            }
            let wsum = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
            let z = 1.0 / wsum;
            let idx = y * w + x;
            if !(z < target.zbuf[idx]) {
                continue;
            }
            target.zbuf[idx] = z;
            let mut c = [0f32; 3];
            for (ch, out) in c.iter_mut().enumerate() {
                let v = (l[0] * inv_z[0] * tri[0].c[ch] + l[1] * inv_z[1] * tri[1].c[ch] + l[2] * inv_z[2] * tri[2].c[ch]) * z;
                *out = v.clamp(0.0, 1.0) as f32;
            }
            target.color.data_mut()[idx] = c;
        }
    }
}

/// Render a mesh into color, depth and foreground mask at `view`.
pub fn rasterize(mesh: &TriangleMesh, view: &CameraView) -> RGBDView {
    let (w, h) = (view.width(), view.height());
    let mut color = ColorImage::new(w, h, [0.0; 3]);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let cam: Vec<Vec3> = mesh.vertices.iter().map(|v| view.pose.transform(v)).collect();
    {
        let mut target = Target {
            color: &mut color,
            zbuf: &mut zbuf,
        };
        for f in &mesh.faces {
            let tri = f.map(|i| {
                let i = i as usize;
                let c = mesh.colors[i];
                ClipVertex {
                    p: cam[i],
                    c: [c[0] as f64, c[1] as f64, c[2] as f64],
                }
            });
            if tri.iter().all(|v| v.p.z >= NEAR) {
                draw_triangle(view, tri, &mut target);
                continue;
            }
            let poly = clip_near(tri);
            for i in 1..poly.len().saturating_sub(1) {
                draw_triangle(view, [poly[0], poly[i], poly[i + 1]], &mut target);
            }
        }
    }
    let depth = DepthMap::from_vec(w, h, zbuf.iter().map(|&z| if z.is_finite() { z as f32 } else { 0.0 }).collect())
        .expect("dims");
    let mask = depth.map(|&d| d > 0.0);
    for (c, &m) in color.data_mut().iter_mut().zip(mask.data()) {
        if !m {
            *c = [0.0; 3];
        }
    }
    RGBDView {
        color,
        depth,
        mask,
        view: *view,
    }
}

/// Area-weighted vertex normals. Vertices with no incident area are listed
/// in `isolated` and get a zero normal.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
    pub isolated: Vec<usize>,
}

pub fn mesh_vertex_normals(mesh: &TriangleMesh) -> VertexNormals {
    let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
    for (f, face) in mesh.faces.iter().enumerate() {
        let [a, b, c] = mesh.triangle(f);
        // |cross| is twice the area, so the sum is area weighted.
        let n = (b - a).cross(&(c - a));
        for &i in face {
            acc[i as usize] += n;
        }
    }
    let mut isolated = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                n / len
            } else {
                isolated.push(i);
                Vec3::zeros()
            }
        })
        .collect();
    VertexNormals { normals, isolated }
}
