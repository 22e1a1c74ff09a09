//! Error-accumulation countermeasures: open-hole detection on completed
//! depth maps and far-depth clipping of inpaint regions.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::grid::{DepthMap, Grid, Mask};
use crate::{Error, Result};

/// Default boundary-fraction threshold for flagging a region as a hole.
pub const DEFAULT_HOLE_EPSILON: f64 = 0.85;
/// Default edge threshold as a fraction of the foreground depth range.
pub const DEFAULT_EDGE_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleParams {
    pub epsilon: f64,
    pub edge_fraction: f64,
}

impl Default for HoleParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_HOLE_EPSILON,
            edge_fraction: DEFAULT_EDGE_FRACTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleRegion {
    pub pixels: usize,
    pub mean_depth: f64,
    /// Share of boundary pixels closer than the region mean.
    pub boundary_fraction: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleReport {
    #[serde(skip)]
    pub hole_mask: Mask,
    pub edge_threshold: f64,
    pub regions: Vec<HoleRegion>,
}

impl HoleReport {
    fn empty(w: usize, h: usize) -> Self {
        Self {
            hole_mask: Mask::new(w, h, false),
            edge_threshold: 0.0,
            regions: Vec::new(),
        }
    }

    pub fn flagged(&self) -> impl Iterator<Item = &HoleRegion> {
        self.regions.iter().filter(|r| r.flagged)
    }
}

const N4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const N8: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Edge pixels: foreground pixels with a 4-neighbor deeper by more than
/// `tau`, i.e. the near side of each depth discontinuity.
pub fn depth_edges(depth: &DepthMap, mask: &Mask, tau: f64) -> Mask {
    Mask::from_fn(depth.width(), depth.height(), |x, y| {
        if !*mask.get(x, y) {
            return false;
        }
        let d = *depth.get(x, y) as f64;
        N4.iter().any(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            mask.at(nx, ny) == Some(&true) && *depth.at(nx, ny).unwrap() as f64 - d > tau
        })
    })
}

/// Finds interiors of open holes: regions bounded by depth edges whose
/// boundary is mostly closer to the camera than the region itself.
///
/// Background and off-image pixels next to a region count as boundary
/// pixels that are not closer, so regions touching the silhouette are
/// hard to flag.
pub fn detect_open_holes(depth: &DepthMap, mask: &Mask, params: &HoleParams) -> Result<HoleReport> {
    if !depth.same_dims(mask) {
        return Err(Error::invalid("depth and mask dimensions differ"));
    }
    if !(params.epsilon > 0.0 && params.epsilon <= 1.0) {
        return Err(Error::invalid(format!("hole epsilon {} outside (0, 1]", params.epsilon)));
    }
    let (w, h) = depth.dims();
    let fg: Vec<f64> = mask
        .data()
        .iter()
        .zip(depth.data())
        .filter(|(&m, _)| m)
        .map(|(_, &d)| d as f64)
        .collect();
    if fg.is_empty() {
        return Ok(HoleReport::empty(w, h));
    }
    let (lo, hi) = fg.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let tau = params.edge_fraction * (hi - lo);
    let edges = depth_edges(depth, mask, tau);

    let mut label = Grid::new(w, h, usize::MAX);
    let mut regions = Vec::new();
    let mut members: Vec<Vec<(usize, usize)>> = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !*mask.get(sx, sy) || *edges.get(sx, sy) || *label.get(sx, sy) != usize::MAX {
                continue;
            }
            let id = members.len();
            let mut pix = Vec::new();
            let mut queue = VecDeque::from([(sx, sy)]);
            label.set(sx, sy, id);
            while let Some((x, y)) = queue.pop_front() {
                pix.push((x, y));
                for (dx, dy) in N4 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if mask.at(nx, ny) == Some(&true) {
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !*edges.get(nx, ny) && *label.get(nx, ny) == usize::MAX {
                            label.set(nx, ny, id);
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            members.push(pix);
        }
    }

    let mut hole_mask = Mask::new(w, h, false);
    for (id, pix) in members.iter().enumerate() {
        let mean = pix.iter().map(|&(x, y)| *depth.get(x, y) as f64).sum::<f64>() / pix.len() as f64;
        let mut boundary: HashSet<(isize, isize)> = HashSet::new();
        for &(x, y) in pix {
            for (dx, dy) in N8 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                let inside = nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h;
                if !inside || *label.get(nx as usize, ny as usize) != id {
                    boundary.insert((nx, ny));
                }
            }
        }
        let closer = boundary
            .iter()
            .filter(|&&(x, y)| mask.at(x, y) == Some(&true) && (*depth.at(x, y).unwrap() as f64) < mean)
            .count();
        let fraction = if boundary.is_empty() {
            0.0
        } else {
            closer as f64 / boundary.len() as f64
        };
        let flagged = fraction > params.epsilon;
        if flagged {
            for &(x, y) in pix {
                hole_mask.set(x, y, true);
            }
            for &(x, y) in &boundary {
                if *edges.at(x, y).unwrap_or(&false) {
                    hole_mask.set(x as usize, y as usize, true);
                }
            }
        }
        regions.push(HoleRegion {
            pixels: pix.len(),
            mean_depth: mean,
            boundary_fraction: fraction,
            flagged,
        });
    }
    Ok(HoleReport {
        hole_mask,
        edge_threshold: tau,
        regions,
    })
}

/// Keeps the inpaint pixels whose depth is at most the given quantile of
/// the region's depths (lower order statistic).
pub fn clip_far_depth_quantile(depth: &DepthMap, inpaint: &Mask, quantile: f64) -> Result<Mask> {
    if !depth.same_dims(inpaint) {
        return Err(Error::invalid("depth and mask dimensions differ"));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::invalid(format!("quantile {quantile} outside [0, 1]")));
    }
    let mut ds: Vec<f32> = depth
        .data()
        .iter()
        .zip(inpaint.data())
        .filter(|(_, &m)| m)
        .map(|(&d, _)| d)
        .collect();
    if ds.is_empty() {
        return Ok(Mask::new(depth.width(), depth.height(), false));
    }
    ds.sort_by(f32::total_cmp);
    let threshold = ds[((ds.len() - 1) as f64 * quantile).floor() as usize];
    Ok(inpaint.zip_map(depth, |&m, &d| m && d <= threshold))
}

/// Keeps the inpaint pixels no deeper than the region's (lower) median.
pub fn clip_far_depth(depth: &DepthMap, inpaint: &Mask) -> Result<Mask> {
    clip_far_depth_quantile(depth, inpaint, 0.5)
}
