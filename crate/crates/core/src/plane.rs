//! Single-channel 2-D rasters and instance label maps.

use crate::error::{Error, Result};

/// Row-major `height x width` raster. Pixel `(x, y)` covers the unit square
/// `[x, x+1) x [y, y+1)`, so its center sits at `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} plane needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Value at signed coordinates, `None` outside the raster.
    #[inline]
    pub fn get_checked(&self, x: isize, y: isize) -> Option<T> {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            None
        } else {
            Some(self.data[y as usize * self.width + x as usize])
        }
    }

    /// Value with coordinates clamped into the raster (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Plane<U> {
        Plane { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_size<U>(&self, other: &Plane<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }
}

pub type Mask = Plane<bool>;

/// Instance map: 0 is background, `1..=K` are instances.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMask {
    labels: Plane<u32>,
    areas: Vec<usize>,
    centroids: Vec<(f64, f64)>,
}

impl LabeledMask {
    /// Wraps a label raster. Labels must be contiguous `1..=K`.
    pub fn new(labels: Plane<u32>) -> Result<Self> {
        let k = labels.data().iter().copied().max().unwrap_or(0) as usize;
        let mut areas = vec![0usize; k];
        let mut sums = vec![(0.0f64, 0.0f64); k];
        for y in 0..labels.height() {
            for x in 0..labels.width() {
                let l = labels.get(x, y) as usize;
                if l > 0 {
                    areas[l - 1] += 1;
                    sums[l - 1].0 += x as f64 + 0.5;
                    sums[l - 1].1 += y as f64 + 0.5;
                }
            }
        }
        if let Some(missing) = areas.iter().position(|&a| a == 0) {
            return Err(Error::InvalidValue(format!("label {} is unused; labels must be contiguous", missing + 1)));
        }
        let centroids = sums.iter().zip(&areas).map(|(&(sx, sy), &a)| (sx / a as f64, sy / a as f64)).collect();
        Ok(Self { labels, areas, centroids })
    }

    /// Renumbers arbitrary labels to `1..=K` in order of first appearance
    /// (row-major), dropping instances smaller than `min_area`.
    pub fn relabel(raw: &Plane<u32>, min_area: usize) -> Self {
        let mut counts = std::collections::HashMap::new();
        for &l in raw.data() {
            if l != 0 {
                *counts.entry(l).or_insert(0usize) += 1;
            }
        }
        let mut mapping = std::collections::HashMap::new();
        let mut next = 0u32;
        for &l in raw.data() {
            if l != 0 && counts[&l] >= min_area && !mapping.contains_key(&l) {
                next += 1;
                mapping.insert(l, next);
            }
        }
        let labels = raw.map(|l| mapping.get(&l).copied().unwrap_or(0));
        Self::new(labels).expect("relabel yields contiguous labels")
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { labels: Plane::filled(width, height, 0), areas: Vec::new(), centroids: Vec::new() }
    }

    pub fn labels(&self) -> &Plane<u32> {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.areas.len()
    }

    /// Area in pixels of instance `label` (1-based).
    pub fn area(&self, label: u32) -> usize {
        self.areas[label as usize - 1]
    }

    pub fn areas(&self) -> &[usize] {
        &self.areas
    }

    /// Centroid `(x, y)` in continuous pixel coordinates.
    pub fn centroid(&self, label: u32) -> (f64, f64) {
        self.centroids[label as usize - 1]
    }

    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }

    pub fn instance(&self, label: u32) -> Mask {
        self.labels.map(|l| l == label)
    }

    pub fn foreground(&self) -> Mask {
        self.labels.map(|l| l != 0)
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }
}
