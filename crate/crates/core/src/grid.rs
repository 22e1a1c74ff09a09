//! Dense row-major 2D rasters used for color images, depth maps and masks.

use crate::{Error, Result};

pub type Rgb = [f32; 3];
pub type ColorImage = Grid<Rgb>;
pub type DepthMap = Grid<f32>;
pub type Mask = Grid<bool>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "grid data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    /// Value at signed coordinates, `None` outside the raster.
    #[inline]
    pub fn at(&self, x: isize, y: isize) -> Option<&T> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(&self.data[y as usize * self.width + x as usize])
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_map<U, V>(&self, other: &Grid<U>, mut f: impl FnMut(&T, &U) -> V) -> Grid<V> {
        assert!(self.same_dims(other), "grid dimensions differ");
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_map(other, |&a, &b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_map(other, |&a, &b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        self.zip_map(other, |&a, &b| a && !b)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Dilation by a Euclidean disk: pixels within `radius` of a set pixel.
    pub fn dilate_disk(&self, radius: f64) -> Mask {
        if radius <= 0.0 {
            return self.clone();
        }
        let r2 = radius * radius;
        let dist = squared_distance_transform(self);
        dist.map(|&d| d <= r2)
    }
}

/// Snap a color to the 8-bit lattice `k / 255`.
#[inline]
pub fn quantize_rgb(c: Rgb) -> Rgb {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

#[inline]
pub fn rgb_to_u8(c: Rgb) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

#[inline]
pub fn u8_to_rgb(c: [u8; 3]) -> Rgb {
    c.map(|v| v as f32 / 255.0)
}

/// Exact squared Euclidean distance from every pixel to the nearest set
/// pixel (Felzenszwalb & Huttenlocher). Infinite when the mask is empty.
pub fn squared_distance_transform(mask: &Mask) -> Grid<f64> {
    let (w, h) = mask.dims();
    let mut out = Grid::new(w, h, f64::INFINITY);
    if mask.is_empty_mask() {
        return out;
    }
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    // columns
    for x in 0..w {
        for y in 0..h {
            f[y] = if *mask.get(x, y) { 0.0 } else { f64::INFINITY };
        }
        dt_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            out.set(x, y, d[y]);
        }
    }
    // rows
    for y in 0..h {
        for x in 0..w {
            f[x] = *out.get(x, y);
        }
        dt_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        for x in 0..w {
            out.set(x, y, d[x]);
        }
    }
    out
}

fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Skip leading infinite samples; parabolas rooted at infinity never win.
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let p = v[k];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        d[q] = (qf - p) * (qf - p) + f[v[k]];
    }
}
