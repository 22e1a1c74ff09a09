//! Point-to-mesh conversion: a normal-signed distance field on a voxel grid,
//! marching cubes at the zero level, then density trimming, component
//! cleanup, Laplacian smoothing and vertex coloring.

mod tables;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::cloud::{OrientedPoint, PointCloud};
use crate::grid::Rgb;
use crate::raster::TriangleMesh;
use crate::spatial::PointGrid;
use crate::{Error, Result, Vec3};

pub const DEFAULT_SDF_RESOLUTION: usize = 128;
pub const DEFAULT_PADDING: f64 = 0.05;

/// Signed distances sampled at voxel corners. Corner `(i, j, k)` sits at
/// `origin + voxel * (i, j, k)`; storage is x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub voxel: f64,
    pub values: Vec<f64>,
    pub support: Vec<f64>,
}

impl ScalarGrid {
    /// Samples `f` at every corner with unit support.
    pub fn from_fn(dims: [usize; 3], origin: Vec3, voxel: f64, f: impl Fn(&Vec3) -> f64) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        let mut values = Vec::with_capacity(n);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values.push(f(&(origin + Vec3::new(i as f64, j as f64, k as f64) * voxel)));
                }
            }
        }
        let grid = Self {
            dims,
            origin,
            voxel,
            values,
            support: vec![1.0; n],
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("grid needs at least 2 corners per axis"));
        }
        if !(self.voxel > 0.0 && self.voxel.is_finite()) {
            return Err(Error::invalid("voxel size must be positive"));
        }
        let n = self.dims.iter().product::<usize>();
        if self.values.len() != n || self.support.len() != n {
            return Err(Error::invalid("grid storage does not match dims"));
        }
        if self.values.iter().zip(&self.support).any(|(v, &s)| s > 0.0 && !v.is_finite()) {
            return Err(Error::invalid("non-finite value at a supported corner"));
        }
        Ok(())
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfParams {
    /// Corners along the longest bbox axis.
    pub resolution: usize,
    /// Bbox growth on every side, as a fraction of the longest extent.
    pub padding: f64,
    pub neighbors: usize,
    pub sigma_voxels: f64,
    /// Corners with no point this close get no support.
    pub support_voxels: f64,
}

impl Default for SdfParams {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_SDF_RESOLUTION,
            padding: DEFAULT_PADDING,
            neighbors: 8,
            sigma_voxels: 2.0,
            support_voxels: 4.0,
        }
    }
}

/// Normal-signed distance field of an oriented cloud. Positive values lie
/// on the side the orientations point to.
pub fn build_sdf(pc: &PointCloud, params: &SdfParams) -> Result<ScalarGrid> {
    let (lo, hi) = pc.bbox().ok_or_else(|| Error::invalid("cannot build a distance field from an empty cloud"))?;
    if params.resolution < 2 {
        return Err(Error::invalid("SDF resolution must be at least 2"));
    }
    if !(params.padding >= 0.0) || params.neighbors == 0 || !(params.sigma_voxels > 0.0) || !(params.support_voxels > 0.0) {
        return Err(Error::invalid("invalid SDF parameters"));
    }
    let extent = (hi - lo).max();
    // a single point or a degenerate cloud still gets a usable box
    let span = if extent > 0.0 { extent } else { 1.0 };
    let pad = span * params.padding.max(if extent > 0.0 { 0.0 } else { 0.5 });
    let origin = lo - Vec3::repeat(pad);
    let voxel = (span + 2.0 * pad) / (params.resolution - 1) as f64;
    let dims = [0, 1, 2].map(|a| (((hi[a] + pad - origin[a]) / voxel).ceil() as usize + 1).max(2));

    let positions = pc.positions();
    let occupancy = Occupancy::new(&positions, origin, voxel, dims);
    let index = PointGrid::new(positions, 2.0 * voxel);
    let reach = params.support_voxels * voxel;
    let reach_cells = params.support_voxels.ceil() as i64;
    let two_sigma2 = 2.0 * (params.sigma_voxels * voxel).powi(2);
    let pts = pc.points();

    let n = dims[0] * dims[1] * dims[2];
    let mut values = vec![reach; n];
    let mut support = vec![0.0; n];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if !occupancy.any_near([i, j, k], reach_cells) {
                    continue;
                }
                let p = origin + Vec3::new(i as f64, j as f64, k as f64) * voxel;
                let nb = index.knn(&p, params.neighbors, f64::INFINITY);
                if nb.first().is_none_or(|n| n.dist2 > reach * reach) {
                    continue;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for n in &nb {
                    let q = &pts[n.index];
                    let w = (-n.dist2 / two_sigma2).exp();
                    num += w * (p - q.position).dot(&q.orientation);
                    den += w;
                }
                if den > 0.0 {
                    let c = i + dims[0] * (j + dims[1] * k);
                    values[c] = num / den;
                    support[c] = den;
                }
            }
        }
    }
    Ok(ScalarGrid {
        dims,
        origin,
        voxel,
        values,
        support,
    })
}

/// Summed-volume table of points per voxel cell, for cheap "any point
/// nearby" tests.
struct Occupancy {
    cells: [usize; 3],
    sums: Vec<u32>,
}

impl Occupancy {
    fn new(points: &[Vec3], origin: Vec3, voxel: f64, dims: [usize; 3]) -> Self {
        let cells = [dims[0] - 1, dims[1] - 1, dims[2] - 1];
        let (sx, sy) = (cells[0] + 1, cells[1] + 1);
        let mut sums = vec![0u32; sx * sy * (cells[2] + 1)];
        for p in points {
            let c = [0, 1, 2].map(|a| (((p[a] - origin[a]) / voxel).floor().max(0.0) as usize).min(cells[a] - 1));
            sums[(c[0] + 1) + sx * ((c[1] + 1) + sy * (c[2] + 1))] += 1;
        }
        for a in 0..3 {
            let stride = [1, sx, sx * sy][a];
            for idx in 0..sums.len() {
                let coord = [idx % sx, (idx / sx) % sy, idx / (sx * sy)][a];
                if coord > 0 {
                    sums[idx] += sums[idx - stride];
                }
            }
        }
        Self { cells, sums }
    }

    /// Any point in the cells within `r` cells of corner `c`.
    fn any_near(&self, c: [usize; 3], r: i64) -> bool {
        let lo = [0, 1, 2].map(|a| (c[a] as i64 - r).max(0) as usize);
        let hi = [0, 1, 2].map(|a| ((c[a] as i64 + r) as usize).min(self.cells[a]));
        let (sx, sy) = (self.cells[0] + 1, self.cells[1] + 1);
        let s = |x: usize, y: usize, z: usize| self.sums[x + sx * (y + sy * z)] as i64;
        let total = s(hi[0], hi[1], hi[2]) - s(lo[0], hi[1], hi[2]) - s(hi[0], lo[1], hi[2]) - s(hi[0], hi[1], lo[2])
            + s(lo[0], lo[1], hi[2])
            + s(lo[0], hi[1], lo[2])
            + s(hi[0], lo[1], lo[2])
            - s(lo[0], lo[1], lo[2]);
        total > 0
    }
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

pub const MESH_GRAY: Rgb = [0.7, 0.7, 0.7];

/// Marching cubes at level zero. Cubes touching an unsupported corner are
/// skipped; vertices are shared between neighboring cubes and triangles
/// face the positive side.
pub fn extract_mesh(grid: &ScalarGrid) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut edge_vertex: FxHashMap<(usize, usize), u32> = FxHashMap::default();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let idx = CORNERS.map(|c| grid.index(i + c[0], j + c[1], k + c[2]));
                if idx.iter().any(|&c| grid.support[c] <= 0.0) {
                    continue;
                }
                let mut case = 0usize;
                for (b, &c) in idx.iter().enumerate() {
                    if grid.values[c] < 0.0 {
                        case |= 1 << b;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &tables::TRIANGLES[case];
                let mut vertex_of = |e: usize| -> u32 {
                    let [a, b] = EDGES[e];
                    let (ca, cb) = (idx[a], idx[b]);
                    let key = (ca.min(cb), ca.max(cb));
                    *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (grid.values[ca], grid.values[cb]);
                        let pa = grid.position(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                        let pb = grid.position(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                        let t = va / (va - vb);
                        vertices.push(pa + (pb - pa) * t);
                        (vertices.len() - 1) as u32
                    })
                };
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let f = [vertex_of(tri[0] as usize), vertex_of(tri[1] as usize), vertex_of(tri[2] as usize)];
                    // the table winds toward the negative side
                    faces.push([f[0], f[2], f[1]]);
                }
            }
        }
    }
    let colors = vec![MESH_GRAY; vertices.len()];
    TriangleMesh {
        vertices,
        colors,
        normals: None,
        faces,
    }
}

/// What survives component cleanup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ComponentFilter {
    Largest,
    /// Every component holding at least this fraction of the faces.
    MinFraction { fraction: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanParams {
    pub trim_voxels: f64,
    pub components: ComponentFilter,
    pub smoothing_iterations: usize,
    pub lambda: f64,
}

impl Default for CleanParams {
    fn default() -> Self {
        Self {
            trim_voxels: 2.0,
            components: ComponentFilter::Largest,
            smoothing_iterations: 3,
            lambda: 0.5,
        }
    }
}

/// Trim by density, drop floating components, smooth and color.
pub fn trim_and_clean(mesh: &TriangleMesh, pc: &PointCloud, voxel: f64, params: &CleanParams) -> TriangleMesh {
    if pc.is_empty() {
        return TriangleMesh::default();
    }
    let index = PointGrid::new(pc.positions(), (2.0 * voxel).max(f64::MIN_POSITIVE));
    let trimmed = trim_by_density(mesh, &index, params.trim_voxels * voxel);
    let kept = keep_components(&trimmed, params.components);
    let mut out = laplacian_smooth(&kept, params.smoothing_iterations, params.lambda);
    color_from_cloud(&mut out, pc, &index);
    out
}

/// Drops faces whose centroid is farther than `max_dist` from every point.
pub fn trim_by_density(mesh: &TriangleMesh, index: &PointGrid, max_dist: f64) -> TriangleMesh {
    let faces = (0..mesh.faces.len())
        .filter(|&f| {
            let [a, b, c] = mesh.triangle(f);
            let centroid = (a + b + c) / 3.0;
            !index.knn(&centroid, 1, max_dist).is_empty()
        })
        .map(|f| mesh.faces[f])
        .collect();
    TriangleMesh { faces, ..mesh.clone() }.compact()
}

/// Connected face components (faces sharing a vertex), largest first; ties
/// go to the component with the lowest face index.
pub fn face_components(mesh: &TriangleMesh) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..mesh.vertices.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for f in &mesh.faces {
        let r0 = find(&mut parent, f[0] as usize);
        for &v in &f[1..] {
            let r = find(&mut parent, v as usize);
            if r != r0 {
                let (lo, hi) = (r.min(r0), r.max(r0));
                parent[hi] = lo;
            }
        }
    }
    let mut groups: FxHashMap<usize, Vec<usize>> = FxHashMap::default();
    for (fi, f) in mesh.faces.iter().enumerate() {
        groups.entry(find(&mut parent, f[0] as usize)).or_default().push(fi);
    }
    let mut comps: Vec<Vec<usize>> = groups.into_values().collect();
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    comps
}

pub fn keep_components(mesh: &TriangleMesh, filter: ComponentFilter) -> TriangleMesh {
    let comps = face_components(mesh);
    let total = mesh.faces.len() as f64;
    let mut keep: Vec<usize> = match filter {
        ComponentFilter::Largest => comps.into_iter().next().unwrap_or_default(),
        ComponentFilter::MinFraction { fraction } => comps
            .into_iter()
            .filter(|c| c.len() as f64 >= fraction * total)
            .flatten()
            .collect(),
    };
    keep.sort_unstable();
    let faces = keep.into_iter().map(|f| mesh.faces[f]).collect();
    TriangleMesh { faces, ..mesh.clone() }.compact()
}

/// Uniform Laplacian: each vertex moves `lambda` of the way to the mean of
/// its edge neighbors, all vertices updated at once.
pub fn laplacian_smooth(mesh: &TriangleMesh, iterations: usize, lambda: f64) -> TriangleMesh {
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); mesh.vertices.len()];
    for f in &mesh.faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            neighbors[a as usize].push(b);
            neighbors[b as usize].push(a);
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
        n.dedup();
    }
    let mut verts = mesh.vertices.clone();
    for _ in 0..iterations {
        verts = verts
            .iter()
            .zip(&neighbors)
            .map(|(v, n)| {
                if n.is_empty() {
                    return *v;
                }
                let mean = n.iter().map(|&u| verts[u as usize]).sum::<Vec3>() / n.len() as f64;
                v + (mean - v) * lambda
            })
            .collect();
    }
    TriangleMesh {
        vertices: verts,
        normals: None,
        ..mesh.clone()
    }
}

/// Each vertex takes the color of its nearest cloud point.
pub fn color_from_cloud(mesh: &mut TriangleMesh, pc: &PointCloud, index: &PointGrid) {
    let pts = pc.points();
    mesh.colors = mesh
        .vertices
        .iter()
        .map(|v| index.nearest(v).map_or(MESH_GRAY, |n| pts[n.index].color))
        .collect();
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshingParams {
    pub sdf: SdfParams,
    pub clean: CleanParams,
}

/// The whole chain: distance field, marching cubes, trim and clean.
pub fn mesh_from_cloud(pc: &PointCloud, params: &MeshingParams) -> Result<TriangleMesh> {
    let grid = build_sdf(pc, &params.sdf)?;
    let raw = extract_mesh(&grid);
    Ok(trim_and_clean(&raw, pc, grid.voxel, &params.clean))
}

/// `n` area-uniform samples of a mesh, oriented by face winding and colored
/// by the nearest corner of their face.
pub fn sample_oriented(mesh: &TriangleMesh, n: usize, seed: u64) -> PointCloud {
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if total <= 0.0 {
        return PointCloud::empty();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let r: f64 = rng.random_range(0.0..total);
            let f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let su = u.sqrt();
            let w = [1.0 - su, su * (1.0 - v), su * v];
            let corner = (0..3).max_by(|&x, &y| w[x].total_cmp(&w[y])).unwrap();
            OrientedPoint {
                position: a * w[0] + b * w[1] + c * w[2],
                color: mesh.colors[mesh.faces[f][corner] as usize],
                orientation: (b - a).cross(&(c - a)).normalize(),
                step: 0,
            }
        })
        .collect();
    PointCloud::new(points)
}

/// `n` points spread evenly over a sphere on a Fibonacci lattice, facing
/// outward.
pub fn fibonacci_sphere(n: usize, center: Vec3, radius: f64, color: Rgb) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let points = (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let theta = golden * i as f64;
            let dir = Vec3::new(r * theta.cos(), y, r * theta.sin());
            OrientedPoint {
                position: center + dir * radius,
                color,
                orientation: dir,
                step: 0,
            }
        })
        .collect();
    PointCloud::new(points)
}
