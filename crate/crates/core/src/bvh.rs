//! Bounding-volume hierarchy over triangles for exact closest-point queries.

use crate::raster::TriangleMesh;
use crate::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaves: range into `order`. Inner nodes: `start` is the right child
    /// (the left child follows the node directly) and `count` is zero.
    start: u32,
    count: u32,
}

#[derive(Clone, Debug)]
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

/// Closest surface point found by a query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestHit {
    pub dist2: f64,
    pub face: usize,
    pub point: Vec3,
}

impl TriangleBvh {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        Self::from_triangles(tris)
    }

    pub fn from_triangles(tris: Vec<[Vec3; 3]>) -> Self {
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let centroids: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            build(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        }
        Self { tris, order, nodes }
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    /// Exact closest point on any triangle. Ties go to the lower face index.
    pub fn closest(&self, q: &Vec3) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestHit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let bound = box_dist2(q, &node.lo, &node.hi);
            if best.is_some_and(|b| bound > b.dist2) {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let f = f as usize;
                    let p = closest_point_on_triangle(q, &self.tris[f]);
                    let d2 = (p - q).norm_squared();
                    let better = match best {
                        None => true,
                        Some(b) => d2 < b.dist2 || (d2 == b.dist2 && f < b.face),
                    };
                    if better {
                        best = Some(ClosestHit { dist2: d2, face: f, point: p });
                    }
                }
            } else {
                let (l, r) = (n + 1, node.start as usize);
                let dl = box_dist2(q, &self.nodes[l].lo, &self.nodes[l].hi);
                let dr = box_dist2(q, &self.nodes[r].lo, &self.nodes[r].hi);
                // nearer child on top
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    pub fn distance(&self, q: &Vec3) -> Option<f64> {
        self.closest(q).map(|h| h.dist2.sqrt())
    }
}

fn build(tris: &[[Vec3; 3]], centroids: &[Vec3], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let mut clo = lo;
    let mut chi = hi;
    for &f in &order[start..end] {
        for v in &tris[f as usize] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let c = &centroids[f as usize];
        clo = clo.inf(c);
        chi = chi.sup(c);
    }
    let me = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        start: start as u32,
        count: (end - start) as u32,
    });
    let ext = chi - clo;
    if end - start <= LEAF_SIZE || ext.max() <= 0.0 {
        return;
    }
    let axis = ext.imax();
    let mid = (start + end) / 2;
    order[start..end].sort_by(|&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    build(tris, centroids, order, start, mid, nodes);
    let right = nodes.len();
    build(tris, centroids, order, mid, end, nodes);
    nodes[me].start = right as u32;
    nodes[me].count = 0;
}

fn box_dist2(q: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let v = if q[a] < lo[a] {
            lo[a] - q[a]
        } else if q[a] > hi[a] {
            q[a] - hi[a]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

/// Closest point on a triangle (Voronoi-region walk). Degenerate
/// triangles fall back to their edges.
pub fn closest_point_on_triangle(p: &Vec3, t: &[Vec3; 3]) -> Vec3 {
    let (a, b, c) = (t[0], t[1], t[2]);
    let ab = b - a;
    let ac = c - a;
    if ab.cross(&ac).norm_squared() <= f64::EPSILON * ab.norm_squared() * ac.norm_squared() {
        let cands = [
            closest_on_segment(p, &a, &b),
            closest_on_segment(p, &b, &c),
            closest_on_segment(p, &c, &a),
        ];
        return cands
            .into_iter()
            .min_by(|x, y| (x - p).norm_squared().total_cmp(&(y - p).norm_squared()))
            .unwrap();
    }
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

fn closest_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    a + ab * ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}
