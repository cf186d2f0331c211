use crate::imgproc::{components8, distance_transform, erode, NEIGHBORS8};
use crate::plane::{Mask, Plane};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedParams {
    pub threshold: f64,
    pub erosion_radius: usize,
    /// Components smaller than this (after erosion) yield no seed.
    pub min_seed_area: usize,
    /// Distance-transform peaks closer than this are merged.
    pub peak_separation: f64,
    /// A peak must rise at least this far above the saddle joining it to a
    /// higher peak to count as its own cell.
    pub peak_prominence: f64,
    /// Initial circle radius as a fraction of the inscribed distance.
    pub radius_factor: f64,
}

impl Default for SeedParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            erosion_radius: 2,
            min_seed_area: 4,
            peak_separation: 5.0,
            peak_prominence: 1.0,
            radius_factor: 0.6,
        }
    }
}

/// Initial circle of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// Peaks of `dt` inside `pixels` (indices into a raster of width `w`) whose
/// persistence reaches `prominence`, highest first. The global maximum of the
/// component is always kept.
fn persistent_peaks(dt: &Plane<f64>, pixels: &[usize], prominence: f64) -> Vec<(usize, f64)> {
    let w = dt.width();
    let value = |i: usize| dt.data()[i];
    let mut order = pixels.to_vec();
    order.sort_by(|&a, &b| value(b).total_cmp(&value(a)).then(a.cmp(&b)));

    let mut parent: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    fn find(parent: &mut std::collections::HashMap<usize, usize>, mut i: usize) -> usize {
        while parent[&i] != i {
            let p = parent[&parent[&i]];
            parent.insert(i, p);
            i = p;
        }
        i
    }
    // root -> peak pixel of that set
    let mut peak: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    let mut kept = Vec::new();
    for &p in &order {
        parent.insert(p, p);
        peak.insert(p, p);
        let (x, y) = ((p % w) as isize, (p / w) as isize);
        for &(dx, dy) in &NEIGHBORS8 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= dt.height() as isize {
                continue;
            }
            let q = ny as usize * w + nx as usize;
            if !parent.contains_key(&q) {
                continue;
            }
            let (ra, rb) = (find(&mut parent, p), find(&mut parent, q));
            if ra == rb {
                continue;
            }
            let (pa, pb) = (peak[&ra], peak[&rb]);
            // the set with the lower peak dies here
            let a_wins = value(pa) > value(pb) || (value(pa) == value(pb) && pa < pb);
            let (winner, loser, dying) = if a_wins { (ra, rb, pb) } else { (rb, ra, pa) };
            if value(dying) - value(p) >= prominence {
                kept.push((dying, value(dying)));
            }
            parent.insert(loser, winner);
        }
    }
    if let Some(&top) = order.first() {
        let root = find(&mut parent, top);
        kept.push((peak[&root], value(peak[&root])));
    }
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    kept
}

/// Threshold, erode, split into 8-connected components and place one seed
/// per component, or one per persistent distance-transform peak when a
/// component holds several well-separated peaks.
pub fn detect_seeds(map: &Plane<f64>, params: &SeedParams) -> Vec<Seed> {
    let mask: Mask = map.map(|v| v >= params.threshold);
    let eroded = erode(&mask, params.erosion_radius);
    let (labels, count) = components8(&eroded);
    let dt = distance_transform(&eroded);
    let w = map.width();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &l) in labels.data().iter().enumerate() {
        if l > 0 {
            members[l as usize - 1].push(i);
        }
    }
    let centre = |i: usize| ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
    let mut seeds = Vec::new();
    for pixels in members.iter().filter(|m| m.len() >= params.min_seed_area.max(1)) {
        let mut peaks: Vec<(usize, f64)> = Vec::new();
        for (p, v) in persistent_peaks(&dt, pixels, params.peak_prominence) {
            let (px, py) = centre(p);
            let far = peaks.iter().all(|&(q, _)| {
                let (qx, qy) = centre(q);
                (px - qx).hypot(py - qy) > params.peak_separation
            });
            if far {
                peaks.push((p, v));
            }
        }
        if peaks.len() >= 2 {
            for (p, v) in peaks {
                let (x, y) = centre(p);
                seeds.push(Seed { x, y, radius: (params.radius_factor * v).max(1.0) });
            }
        } else {
            let n = pixels.len() as f64;
            let (sx, sy) = pixels.iter().fold((0.0, 0.0), |(a, b), &i| {
                let (x, y) = centre(i);
                (a + x, b + y)
            });
            let max_dt = pixels.iter().map(|&i| dt.data()[i]).fold(0.0, f64::max);
            seeds.push(Seed { x: sx / n, y: sy / n, radius: (params.radius_factor * max_dt).max(1.0) });
        }
    }
    seeds
}
