//! Uniform spatial hash grid for exact k-nearest-neighbor queries.
//!
//! Queries scan cells in growing Chebyshev shells around the query cell and
//! stop once the k-th best distance is no larger than the radius already
//! covered, so results are exact regardless of the cell size. Ties are
//! broken by point index.

use rustc_hash::FxHashMap;

use crate::Vec3;

type CellKey = [i32; 3];

#[derive(Clone, Debug)]
pub struct PointGrid {
    cell: f64,
    points: Vec<Vec3>,
    cells: FxHashMap<CellKey, (u32, u32)>,
    order: Vec<u32>,
    key_min: CellKey,
    key_max: CellKey,
}

/// One neighbor: squared distance and point index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub dist2: f64,
    pub index: usize,
}

impl PointGrid {
    pub fn new(points: Vec<Vec3>, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let key = |p: &Vec3| -> CellKey {
            [
                (p.x / cell).floor() as i32,
                (p.y / cell).floor() as i32,
                (p.z / cell).floor() as i32,
            ]
        };
        let keys: Vec<CellKey> = points.iter().map(key).collect();
        let mut counts: FxHashMap<CellKey, u32> = FxHashMap::default();
        for k in &keys {
            *counts.entry(*k).or_insert(0) += 1;
        }
        let mut sorted: Vec<CellKey> = counts.keys().copied().collect();
        sorted.sort_unstable();
        let mut cells = FxHashMap::default();
        let mut start = 0u32;
        for k in &sorted {
            let n = counts[k];
            cells.insert(*k, (start, 0));
            start += n;
        }
        let mut order = vec![0u32; points.len()];
        for (i, k) in keys.iter().enumerate() {
            let slot = cells.get_mut(k).unwrap();
            order[(slot.0 + slot.1) as usize] = i as u32;
            slot.1 += 1;
        }
        let mut key_min = [i32::MAX; 3];
        let mut key_max = [i32::MIN; 3];
        for k in &sorted {
            for a in 0..3 {
                key_min[a] = key_min[a].min(k[a]);
                key_max[a] = key_max[a].max(k[a]);
            }
        }
        Self {
            cell,
            points,
            cells,
            order,
            key_min,
            key_max,
        }
    }

    /// Grid whose cell size is twice the median nearest-neighbor distance,
    /// estimated from a deterministic sample of the points.
    pub fn with_nn_cell(points: Vec<Vec3>) -> Self {
        let cell = density_cell(&points);
        let provisional = Self::new(points, cell);
        let median = provisional.median_nn_distance(512);
        if median > 0.0 {
            Self::new(provisional.points, 2.0 * median)
        } else {
            provisional
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Median distance from a strided sample of points to their nearest
    /// other point. Zero for clouds with fewer than two points.
    pub fn median_nn_distance(&self, max_samples: usize) -> f64 {
        let n = self.points.len();
        if n < 2 {
            return 0.0;
        }
        let stride = (n / max_samples.max(1)).max(1);
        let mut d: Vec<f64> = (0..n)
            .step_by(stride)
            .filter_map(|i| {
                self.knn_excluding(&self.points[i], 1, f64::INFINITY, Some(i))
                    .first()
                    .map(|nb| nb.dist2.sqrt())
            })
            .collect();
        d.sort_by(f64::total_cmp);
        d[(d.len() - 1) / 2]
    }

    pub fn knn(&self, query: &Vec3, k: usize, max_dist: f64) -> Vec<Neighbor> {
        self.knn_excluding(query, k, max_dist, None)
    }

    pub fn nearest(&self, query: &Vec3) -> Option<Neighbor> {
        self.knn(query, 1, f64::INFINITY).into_iter().next()
    }

    /// The `k` nearest points within `max_dist` of `query`, sorted by
    /// (distance, index). `exclude` skips one point index (self queries).
    pub fn knn_excluding(&self, query: &Vec3, k: usize, max_dist: f64, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return best;
        }
        let max2 = max_dist * max_dist;
        let c = self.cell;
        let q = [
            (query.x / c).floor() as i64,
            (query.y / c).floor() as i64,
            (query.z / c).floor() as i64,
        ];
        // Shells closer than this cannot intersect the occupied key range.
        let mut r0 = 0i64;
        let mut r_max = 0i64;
        for a in 0..3 {
            let lo = self.key_min[a] as i64;
            let hi = self.key_max[a] as i64;
            r0 = r0.max(lo - q[a]).max(q[a] - hi);
            r_max = r_max.max((q[a] - lo).abs()).max((hi - q[a]).abs());
        }
        let r0 = r0.max(0);
        let mut r = r0;
        loop {
            // Every unscanned cell lies at least (r - 1) * c + gap away; use
            // the conservative r * c bound after finishing shell r.
            if r > r0 && ((r - 1) as f64 * c) > max_dist {
                break;
            }
            self.scan_shell(q, r, query, k, max2, exclude, &mut best);
            if best.len() == k {
                let kth = best[k - 1].dist2;
                let covered = r as f64 * c;
                if kth <= covered * covered {
                    break;
                }
            }
            if r >= r_max {
                break;
            }
            r += 1;
        }
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_shell(
        &self,
        q: [i64; 3],
        r: i64,
        query: &Vec3,
        k: usize,
        max2: f64,
        exclude: Option<usize>,
        best: &mut Vec<Neighbor>,
    ) {
        let clamp = |a: usize, v: i64| v.clamp(self.key_min[a] as i64, self.key_max[a] as i64);
        let (x0, x1) = (clamp(0, q[0] - r), clamp(0, q[0] + r));
        let (y0, y1) = (clamp(1, q[1] - r), clamp(1, q[1] + r));
        let (z0, z1) = (clamp(2, q[2] - r), clamp(2, q[2] + r));
        for x in x0..=x1 {
            let on_x = (x - q[0]).abs() == r;
            for y in y0..=y1 {
                let on_xy = on_x || (y - q[1]).abs() == r;
                for z in z0..=z1 {
                    if !on_xy && (z - q[2]).abs() != r {
                        continue;
                    }
                    let Some(&(start, len)) = self.cells.get(&[x as i32, y as i32, z as i32]) else {
                        continue;
                    };
                    for &idx in &self.order[start as usize..(start + len) as usize] {
                        let idx = idx as usize;
                        if Some(idx) == exclude {
                            continue;
                        }
                        let d2 = (self.points[idx] - query).norm_squared();
                        if d2 > max2 {
                            continue;
                        }
                        insert_sorted(best, k, Neighbor { dist2: d2, index: idx });
                    }
                }
            }
        }
    }
}

fn insert_sorted(best: &mut Vec<Neighbor>, k: usize, nb: Neighbor) {
    let less = |a: &Neighbor, b: &Neighbor| a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
    if best.len() == k && !less(&nb, &best[k - 1]) {
        return;
    }
    let pos = best.iter().position(|b| less(&nb, b)).unwrap_or(best.len());
    best.insert(pos, nb);
    if best.len() > k {
        best.pop();
    }
}

/// Cell edge giving roughly a handful of points per occupied cell for a
/// surface-like cloud.
fn density_cell(points: &[Vec3]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = hi - lo;
    let diag = ext.norm();
    if diag <= 0.0 {
        return 1.0;
    }
    // Treat the cloud as a surface of area ~ diag^2.
    (diag * diag / points.len() as f64).sqrt() * 4.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Vec3], q: &Vec3, k: usize, max_dist: f64) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(i, p)| Neighbor { dist2: (p - q).norm_squared(), index: i })
            .filter(|n| n.dist2 <= max_dist * max_dist)
            .collect();
        all.sort_by(|a, b| a.dist2.total_cmp(&b.dist2).then(a.index.cmp(&b.index)));
        all.truncate(k);
        all
    }

    #[test]
    fn empty_grid_has_no_neighbors() {
        let g = PointGrid::new(vec![], 1.0);
        assert!(g.knn(&Vec3::zeros(), 3, f64::INFINITY).is_empty());
        assert!(g.nearest(&Vec3::zeros()).is_none());
    }

    #[test]
    fn far_query_still_finds_points() {
        let g = PointGrid::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)], 0.1);
        let n = g.nearest(&Vec3::new(100.0, 0.0, 0.0)).unwrap();
        assert_eq!(n.index, 1);
    }

    #[test]
    fn median_nn_on_regular_grid() {
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                pts.push(Vec3::new(x as f64 * 0.5, y as f64 * 0.5, 0.0));
            }
        }
        let g = PointGrid::with_nn_cell(pts);
        assert!((g.median_nn_distance(100) - 0.5).abs() < 1e-12);
        assert!((g.cell_size() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(
            raw in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -1.0f64..1.0), 1..200),
            q in (-8.0f64..8.0, -8.0f64..8.0, -3.0f64..3.0),
            k in 1usize..20,
            cell in 0.05f64..4.0,
            max_dist in prop_oneof![Just(f64::INFINITY), 0.1f64..6.0],
        ) {
            let pts: Vec<Vec3> = raw.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let g = PointGrid::new(pts.clone(), cell);
            let q = Vec3::new(q.0, q.1, q.2);
            prop_assert_eq!(g.knn(&q, k, max_dist), brute(&pts, &q, k, max_dist));
        }
    }
}
