//! Procedural test meshes standing in for garment assets. All fit inside
//! the unit ball so they frame well from the default orbit.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::grid::Rgb;
use crate::{Error, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusName {
    Sphere,
    Tunic,
    Tee,
    Panel,
}

impl CorpusName {
    pub const ALL: [CorpusName; 4] = [CorpusName::Sphere, CorpusName::Tunic, CorpusName::Tee, CorpusName::Panel];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorpusName::Sphere => "sphere",
            CorpusName::Tunic => "tunic",
            CorpusName::Tee => "tee",
            CorpusName::Panel => "panel",
        }
    }
}

impl FromStr for CorpusName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        CorpusName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown corpus mesh `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusParams {
    /// Icosphere subdivision level.
    pub subdivisions: u32,
    /// Segments around each cylinder.
    pub segments: usize,
    /// Rings along the tallest cylinder or panel rows.
    pub rings: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            subdivisions: 4,
            segments: 64,
            rings: 32,
        }
    }
}

pub fn synthetic_corpus(name: CorpusName, params: &CorpusParams) -> TriangleMesh {
    match name {
        CorpusName::Sphere => icosphere(params.subdivisions),
        CorpusName::Tunic => tunic(params),
        CorpusName::Tee => {
            let parts = tee_parts(params);
            let mut mesh = parts.torso;
            mesh.append(&parts.left_sleeve);
            mesh.append(&parts.right_sleeve);
            mesh
        }
        CorpusName::Panel => panel(params),
    }
}

fn icosphere(subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
        (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
        (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) / 2.0).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let colors = verts
        .iter()
        .map(|v| [(0.5 + 0.45 * v.x) as f32, (0.5 + 0.45 * v.y) as f32, (0.5 + 0.45 * v.z) as f32])
        .collect();
    TriangleMesh {
        vertices: verts,
        colors,
        normals: None,
        faces,
    }
}

/// Open cylinder along `axis` (unit x or y) with caller-chosen colors.
fn open_cylinder(
    center: Vec3,
    axis: Vec3,
    radius: f64,
    length: f64,
    segments: usize,
    rings: usize,
    color: impl Fn(usize, usize) -> Rgb,
) -> TriangleMesh {
    // Two unit vectors spanning the cross-section.
    let (u, w) = if axis.y.abs() > 0.5 {
        (Vec3::x(), Vec3::z())
    } else {
        (Vec3::z(), Vec3::y())
    };
    let mut mesh = TriangleMesh::default();
    for j in 0..=rings {
        let s = -0.5 + j as f64 / rings as f64;
        for i in 0..segments {
            let a = 2.0 * PI * i as f64 / segments as f64;
            mesh.vertices
                .push(center + axis * (s * length) + (u * a.sin() + w * a.cos()) * radius);
            mesh.colors.push(color(i, j));
        }
    }
    let idx = |i: usize, j: usize| (j * segments + i % segments) as u32;
    for j in 0..rings {
        for i in 0..segments {
            mesh.faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            mesh.faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    mesh
}

fn tunic(p: &CorpusParams) -> TriangleMesh {
    let light: Rgb = [0.95, 0.9, 0.8];
    let dark: Rgb = [0.8, 0.25, 0.2];
    open_cylinder(Vec3::zeros(), Vec3::y(), 0.6, 1.4, p.segments, p.rings, |i, j| {
        if (i / 4 + j / 4) % 2 == 0 {
            light
        } else {
            dark
        }
    })
}

/// The tee's pieces, kept separate so edits can target one sleeve.
#[derive(Clone, Debug, PartialEq)]
pub struct TeeParts {
    pub torso: TriangleMesh,
    /// Sleeve along -x.
    pub left_sleeve: TriangleMesh,
    /// Sleeve along +x.
    pub right_sleeve: TriangleMesh,
}

pub fn tee_parts(p: &CorpusParams) -> TeeParts {
    let torso = open_cylinder(Vec3::zeros(), Vec3::y(), 0.45, 1.3, p.segments, p.rings, |_, j| {
        if (j / 3) % 2 == 0 {
            [0.2, 0.35, 0.75]
        } else {
            [0.9, 0.9, 0.95]
        }
    });
    let (inner, outer) = (0.40, 0.85);
    let len = outer - inner;
    let mid = (inner + outer) / 2.0;
    let sleeve_rings = (p.rings / 3).max(2);
    let sleeve_segments = (p.segments / 2).max(8);
    let sleeve_color = |i: usize, _j: usize| -> Rgb {
        if (i / 4) % 2 == 0 {
            [0.85, 0.6, 0.15]
        } else {
            [0.7, 0.45, 0.1]
        }
    };
    let left_sleeve = open_cylinder(Vec3::new(-mid, 0.32, 0.0), Vec3::x(), 0.18, len, sleeve_segments, sleeve_rings, sleeve_color);
    let right_sleeve = open_cylinder(Vec3::new(mid, 0.32, 0.0), Vec3::x(), 0.18, len, sleeve_segments, sleeve_rings, sleeve_color);
    TeeParts {
        torso,
        left_sleeve,
        right_sleeve,
    }
}

fn panel(p: &CorpusParams) -> TriangleMesh {
    let n = p.rings.max(2);
    let mut mesh = TriangleMesh::default();
    for j in 0..=n {
        for i in 0..=n {
            let x = -0.7 + 1.4 * i as f64 / n as f64;
            let y = -0.7 + 1.4 * j as f64 / n as f64;
            let z = 0.2 * (PI * x / 1.4).cos();
            mesh.vertices.push(Vec3::new(x, y, z));
            mesh.colors.push([
                (0.3 + 0.5 * i as f64 / n as f64) as f32,
                0.55,
                (0.3 + 0.5 * j as f64 / n as f64) as f32,
            ]);
        }
    }
    let idx = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    for j in 0..n {
        for i in 0..n {
            mesh.faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            mesh.faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_vertex_count() {
        for n in 0..5 {
            let s = synthetic_corpus(CorpusName::Sphere, &CorpusParams { subdivisions: n, ..Default::default() });
            assert_eq!(s.vertices.len(), 10 * 4usize.pow(n) + 2);
            assert!(s.is_closed());
            s.validate().unwrap();
        }
    }

    #[test]
    fn tunic_has_two_open_loops() {
        let t = synthetic_corpus(CorpusName::Tunic, &CorpusParams::default());
        assert_eq!(t.boundary_loop_count(), 2);
        t.validate().unwrap();
    }

    #[test]
    fn tee_is_wider_than_tall() {
        let t = synthetic_corpus(CorpusName::Tee, &CorpusParams::default());
        let (lo, hi) = t.bbox().unwrap();
        assert!(hi.x - lo.x > hi.y - lo.y);
        t.validate().unwrap();
        // torso and two sleeves each contribute two openings
        assert_eq!(t.boundary_loop_count(), 6);
    }

    #[test]
    fn everything_fits_in_unit_ball() {
        for name in CorpusName::ALL {
            let m = synthetic_corpus(name, &CorpusParams::default());
            assert!(m.vertices.iter().all(|v| v.norm() <= 1.0 + 1e-9), "{name:?}");
        }
    }

    #[test]
    fn names_parse() {
        assert_eq!("tee".parse::<CorpusName>().unwrap(), CorpusName::Tee);
        assert!("hat".parse::<CorpusName>().is_err());
    }
}
