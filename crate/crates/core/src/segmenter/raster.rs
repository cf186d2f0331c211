use super::contour::Contour;
use crate::plane::{LabeledMask, Plane};

/// What rasterization discarded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RasterStats {
    /// Contours covering no pixel centre.
    pub degenerate: usize,
    /// Instances under the minimum area.
    pub too_small: usize,
}

/// Pixel centres inside `contour` by even-odd scanline fill.
pub fn fill(contour: &Contour, width: usize, height: usize) -> Vec<(usize, usize)> {
    let p = contour.points();
    let n = p.len();
    let mut out = Vec::new();
    let mut xs = Vec::new();
    for y in 0..height {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (a, b) = (p[i], p[(i + 1) % n]);
            if (a.1 > yc) != (b.1 > yc) {
                xs.push(a.0 + (yc - a.1) * (b.0 - a.0) / (b.1 - a.1));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // pixel x is inside when pair[0] <= x + 0.5 < pair[1]
            let first = (pair[0] - 0.5).ceil().max(0.0);
            let last = (pair[1] - 0.5).ceil() - 1.0;
            if last < first {
                continue;
            }
            let last = last.min(width as f64 - 1.0);
            let mut x = first as usize;
            while x as f64 <= last {
                out.push((x, y));
                x += 1;
            }
        }
    }
    out
}

/// Labels every contour's interior. Pixels claimed by several contours go
/// to the one with the nearest centroid; instances below `min_area` are
/// dropped and the rest renumbered `1..=K` in order of first pixel.
pub fn rasterize(contours: &[Contour], width: usize, height: usize, min_area: usize) -> (LabeledMask, RasterStats) {
    let mut stats = RasterStats::default();
    let mut owner = Plane::filled(width, height, 0u32);
    let mut owner_dist = Plane::filled(width, height, f64::INFINITY);
    for (k, c) in contours.iter().enumerate() {
        let pixels = fill(c, width, height);
        if pixels.is_empty() {
            stats.degenerate += 1;
            continue;
        }
        let (cx, cy) = c.centroid();
        for (x, y) in pixels {
            let d = (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy);
            if d < owner_dist.get(x, y) {
                owner_dist.set(x, y, d);
                owner.set(x, y, k as u32 + 1);
            }
        }
    }
    let mut counts = vec![0usize; contours.len() + 1];
    owner.data().iter().for_each(|&l| counts[l as usize] += 1);
    stats.too_small = counts[1..].iter().filter(|&&a| a > 0 && a < min_area).count();
    (LabeledMask::relabel(&owner, min_area), stats)
}
