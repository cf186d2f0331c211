//! Synthetic brightfield-like scenes of clustered, irregular cells with
//! exact instance ground truth.
//!
//! A cell is a star-convex blob: a disk whose radius is modulated by a few
//! random Fourier harmonics. Overlapping blobs are split along the
//! perpendicular bisector of their centres, so touching cells share a
//! straight boundary segment but never overlap.

use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imgproc::gaussian_blur;
use crate::plane::{LabeledMask, Plane};
use crate::trainer::edge_groundtruth_instances;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    /// Square image side in pixels.
    pub size: usize,
    /// Inclusive range of the number of cells.
    pub cell_count: (usize, usize),
    /// Range of base radii in pixels.
    pub radius: (f64, f64),
    /// Total harmonic amplitude as a fraction of the base radius.
    pub perturbation: f64,
    /// Probability that a new cell is placed against an existing one.
    pub touch_probability: f64,
    /// Centre distance of a touching pair as a fraction of `r1 + r2`.
    pub touch_spacing: (f64, f64),
    /// Extra clearance in pixels between cells that must not touch.
    pub free_gap: f64,
    /// Background intensity before the illumination ramp.
    pub background: f64,
    /// Minimum foreground-over-background intensity gap.
    pub contrast: f64,
    /// Peak-to-peak amplitude of the linear illumination ramp.
    pub ramp: f64,
    /// Depth of the dark halo just outside cells.
    pub halo: f64,
    /// Darkening of instance boundary pixels.
    pub membrane: f64,
    pub noise_sigma: f64,
    /// Gaussian σ of the edge target.
    pub edge_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            size: 64,
            cell_count: (2, 5),
            radius: (6.0, 10.0),
            perturbation: 0.15,
            touch_probability: 0.5,
            touch_spacing: (0.75, 0.9),
            free_gap: 3.0,
            background: 0.35,
            contrast: 0.2,
            ramp: 0.08,
            halo: 0.06,
            membrane: 0.08,
            noise_sigma: 0.03,
            edge_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.size < 8 {
            return bad(format!("scene size {} is below 8", self.size));
        }
        if self.cell_count.0 > self.cell_count.1 {
            return bad("cell_count range is reversed".into());
        }
        if !(self.radius.0 >= 3.0 && self.radius.0 <= self.radius.1) {
            return bad("radius range must satisfy 3 <= min <= max".into());
        }
        if !(0.0..0.5).contains(&self.perturbation) {
            return bad("perturbation must lie in [0, 0.5)".into());
        }
        if !(0.0..=1.0).contains(&self.touch_probability) {
            return bad("touch_probability must lie in [0,1]".into());
        }
        let (a, b) = self.touch_spacing;
        if !(a > 0.0 && a <= b && b < 1.0) {
            return bad("touch_spacing must satisfy 0 < min <= max < 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.contrast > self.noise_sigma) {
            return bad("contrast must exceed the noise σ".into());
        }
        if !(self.edge_sigma > 0.0) {
            return bad("edge_sigma must be positive".into());
        }
        if [self.free_gap, self.background, self.ramp, self.halo, self.membrane].iter().any(|v| !(*v >= 0.0)) {
            return bad("gap, background, ramp, halo and membrane must be non-negative".into());
        }
        Ok(())
    }

    /// Lower bound on the area of every generated instance.
    pub fn min_instance_area(&self) -> f64 {
        let r = self.radius.0 * (1.0 - self.perturbation);
        std::f64::consts::PI * r * r * 0.5
    }
}

/// Star-convex cell outline.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// `(order, amplitude as a fraction of radius, phase)`.
    pub harmonics: Vec<(u32, f64, f64)>,
}

impl Blob {
    pub fn radius_at(&self, theta: f64) -> f64 {
        let m: f64 = self.harmonics.iter().map(|&(k, a, p)| a * (k as f64 * theta + p).cos()).sum();
        self.radius * (1.0 + m)
    }

    pub fn max_radius(&self) -> f64 {
        self.radius * (1.0 + self.harmonics.iter().map(|h| h.1.abs()).sum::<f64>())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let d = dx.hypot(dy);
        d <= self.radius_at(dy.atan2(dx))
    }

    fn draw<R: Rng>(rng: &mut R, cx: f64, cy: f64, radius: f64, perturbation: f64) -> Self {
        let n = rng.random_range(3..=6u32);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let harmonics = raw
            .iter()
            .enumerate()
            .map(|(i, &a)| (i as u32 + 2, perturbation * a / total, rng.random_range(0.0..TAU)))
            .collect();
        Self { cx, cy, radius, harmonics }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Intensities in `[0,1]`.
    pub image: Plane<f64>,
    /// Union of instances as 0/1.
    pub region: Plane<f64>,
    /// Edge target in `[0,1]`.
    pub edge: Plane<f64>,
    pub labels: LabeledMask,
    pub blobs: Vec<Blob>,
    /// Label pairs that are 8-adjacent somewhere.
    pub touching: Vec<(u32, u32)>,
}

const PLACEMENT_ATTEMPTS: usize = 200;
const SCENE_ATTEMPTS: usize = 50;

/// Generates one scene; the output depends only on `spec`.
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = rng.random_range(spec.cell_count.0..=spec.cell_count.1);
    for _ in 0..SCENE_ATTEMPTS {
        if let Some(blobs) = place(spec, count, &mut rng) {
            let labels = rasterize_blobs(&blobs, spec.size);
            let areas_ok = (1..=count as u32).all(|l| labels.area(l) as f64 >= spec.min_instance_area());
            if labels.count() == count && areas_ok {
                return Ok(render(spec, blobs, labels, &mut rng));
            }
        }
    }
    Err(Error::Generation(format!(
        "could not place {count} cells of radius {:?} in {}x{} after {SCENE_ATTEMPTS} attempts",
        spec.radius, spec.size, spec.size
    )))
}

fn place<R: Rng>(spec: &SceneSpec, count: usize, rng: &mut R) -> Option<Vec<Blob>> {
    let mut blobs: Vec<Blob> = Vec::with_capacity(count);
    let size = spec.size as f64;
    for _ in 0..count {
        let r = rng.random_range(spec.radius.0..=spec.radius.1);
        let margin = r * (1.0 + spec.perturbation) + 1.0;
        if 2.0 * margin >= size {
            return None;
        }
        let touch = !blobs.is_empty() && rng.random_bool(spec.touch_probability);
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (cx, cy, partner) = if touch {
                let j = rng.random_range(0..blobs.len());
                let d = (r + blobs[j].radius) * rng.random_range(spec.touch_spacing.0..=spec.touch_spacing.1);
                let a = rng.random_range(0.0..TAU);
                (blobs[j].cx + d * a.cos(), blobs[j].cy + d * a.sin(), Some(j))
            } else {
                (rng.random_range(margin..size - margin), rng.random_range(margin..size - margin), None)
            };
            if cx < margin || cy < margin || cx > size - margin || cy > size - margin {
                continue;
            }
            let reach = r * (1.0 + spec.perturbation);
            let clear = blobs.iter().enumerate().all(|(i, b)| {
                let d = (b.cx - cx).hypot(b.cy - cy);
                if Some(i) == partner {
                    true
                } else {
                    d >= reach + b.max_radius() + spec.free_gap
                }
            });
            if clear {
                placed = Some(Blob::draw(rng, cx, cy, r, spec.perturbation));
                break;
            }
        }
        blobs.push(placed?);
    }
    Some(blobs)
}

/// Pixel centres inside several blobs go to the nearest centre, which
/// splits every overlapping pair along its perpendicular bisector.
fn rasterize_blobs(blobs: &[Blob], size: usize) -> LabeledMask {
    let raw = Plane::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut best: Option<(f64, u32)> = None;
        for (i, b) in blobs.iter().enumerate() {
            if b.contains(px, py) {
                let d = (b.cx - px).hypot(b.cy - py);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i as u32 + 1));
                }
            }
        }
        best.map_or(0, |(_, l)| l)
    });
    match LabeledMask::new(raw.clone()) {
        Ok(m) => m,
        // a blob fully covered by others leaves a gap in the labels
        Err(_) => LabeledMask::relabel(&raw, 1),
    }
}

fn render<R: Rng>(spec: &SceneSpec, blobs: Vec<Blob>, labels: LabeledMask, rng: &mut R) -> Scene {
    let n = spec.size;
    let lab = labels.labels();
    let fg = lab.map(|l| if l > 0 { 1.0 } else { 0.0 });
    let near_fg = gaussian_blur(&fg, 1.5);
    let angle = rng.random_range(0.0..TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let levels: Vec<f64> = blobs.iter().map(|_| rng.random_range(1.15..1.4)).collect();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid σ");

    let mut image = Plane::filled(n, n, 0.0);
    for y in 0..n {
        for x in 0..n {
            let (u, v) = ((x as f64 + 0.5) / n as f64 - 0.5, (y as f64 + 0.5) / n as f64 - 0.5);
            let ramp = spec.ramp * (ca * u + sa * v);
            let l = lab.get(x, y);
            let mut value = spec.background + ramp;
            if l == 0 {
                value -= spec.halo * 2.0 * near_fg.get(x, y);
            } else {
                let b = &blobs[l as usize - 1];
                let (dx, dy) = (x as f64 + 0.5 - b.cx, y as f64 + 0.5 - b.cy);
                let rho = (dx.hypot(dy) / b.radius_at(dy.atan2(dx))).min(1.0);
                value += spec.contrast * levels[l as usize - 1] * (1.0 - 0.15 * rho * rho);
                let on_boundary = [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|&(ox, oy)| lab.get_checked(x as isize + ox, y as isize + oy).is_some_and(|m| m != l));
                if on_boundary {
                    value -= spec.membrane;
                }
            }
            let eps = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            image.set(x, y, (value + eps).clamp(0.0, 1.0));
        }
    }
    let edge = edge_groundtruth_instances(&labels, spec.edge_sigma).expect("σ validated");
    let touching = touching_pairs(&labels);
    Scene { image, region: fg, edge, labels, blobs, touching }
}

/// Label pairs `(a, b)`, `a < b`, with 8-adjacent pixels.
pub fn touching_pairs(labels: &LabeledMask) -> Vec<(u32, u32)> {
    let lab = labels.labels();
    let mut pairs = std::collections::BTreeSet::new();
    for y in 0..lab.height() {
        for x in 0..lab.width() {
            let a = lab.get(x, y);
            if a == 0 {
                continue;
            }
            for &(dx, dy) in &crate::imgproc::NEIGHBORS8 {
                if let Some(b) = lab.get_checked(x as isize + dx, y as isize + dy) {
                    if b != 0 && b != a {
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
    }
    pairs.into_iter().collect()
}

/// Seed of the `index`-th scene of a dataset.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    // splitmix64 finalizer keeps neighbouring indices uncorrelated
    let mut z = base.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `count` scenes sharing `template` except for their seeds.
pub fn generate_set(template: &SceneSpec, base_seed: u64, count: usize) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| generate(&SceneSpec { seed: scene_seed(base_seed, i), ..*template }))
        .collect()
}

pub const TRAIN_SCENES: usize = 245;
pub const TEST_SCENES: usize = 50;
/// Base seeds of the standard train and test splits.
pub const TRAIN_BASE_SEED: u64 = 1;
pub const TEST_BASE_SEED: u64 = 2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cells_gives_blank_scene() {
        let spec = SceneSpec { cell_count: (0, 0), seed: 3, ..SceneSpec::default() };
        let s = generate(&spec).unwrap();
        assert_eq!(s.labels.count(), 0);
        assert!(s.region.data().iter().all(|&v| v == 0.0));
        assert!(s.edge.data().iter().all(|&v| v == 0.0));
        let mean = s.image.data().iter().sum::<f64>() / s.image.len() as f64;
        assert!((mean - spec.background).abs() < 0.02);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SceneSpec { seed: 42, ..SceneSpec::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = generate(&SceneSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(generate(&spec).unwrap().image, other.image);
    }

    fn adjacent_somewhere(labels: &LabeledMask, a: u32, b: u32) -> bool {
        let lab = labels.labels();
        let (w, h) = (lab.width() as isize, lab.height() as isize);
        for y in 0..h {
            for x in 0..w {
                if lab.get(x as usize, y as usize) != a {
                    continue;
                }
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h && lab.get(nx as usize, ny as usize) == b {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    #[test]
    fn forced_pair_touches_without_overlap() {
        for seed in 0..20 {
            let spec = SceneSpec { cell_count: (2, 2), touch_probability: 1.0, seed, ..SceneSpec::default() };
            let s = generate(&spec).unwrap();
            let d = (s.blobs[0].cx - s.blobs[1].cx).hypot(s.blobs[0].cy - s.blobs[1].cy);
            assert!(d < s.blobs[0].radius + s.blobs[1].radius);
            assert_eq!(s.labels.count(), 2);
            assert!(adjacent_somewhere(&s.labels, 1, 2), "seed {seed}");
            assert_eq!(s.touching, vec![(1, 2)]);
        }
    }

    #[test]
    fn separated_cells_do_not_touch() {
        for seed in 0..10 {
            let spec = SceneSpec { cell_count: (3, 3), touch_probability: 0.0, seed, ..SceneSpec::default() };
            let s = generate(&spec).unwrap();
            assert!(s.touching.is_empty());
            assert_eq!(s.labels.count(), 3);
        }
    }

    #[test]
    fn scene_invariants_hold_over_many_seeds() {
        let spec = SceneSpec::default();
        for seed in 0..60 {
            let s = generate(&SceneSpec { seed, ..spec }).unwrap();
            let lab = s.labels.labels();
            // union of instances equals the region target
            for (l, r) in lab.data().iter().zip(s.region.data()) {
                assert_eq!(*l != 0, *r == 1.0);
            }
            for l in 1..=s.labels.count() as u32 {
                assert!(s.labels.area(l) as f64 >= spec.min_instance_area(), "seed {seed} label {l}");
            }
            let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0.0, 0.0, 0.0);
            for (v, r) in s.image.data().iter().zip(s.region.data()) {
                if *r == 1.0 {
                    fg += v;
                    nf += 1.0;
                } else {
                    bg += v;
                    nb += 1.0;
                }
            }
            assert!(fg / nf - bg / nb >= spec.contrast - 3.0 * spec.noise_sigma, "seed {seed}");
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.edge.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn blobs_are_star_convex_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let b = Blob::draw(&mut rng, 0.0, 0.0, 8.0, 0.2);
            assert!((3..=6).contains(&b.harmonics.len()));
            for i in 0..360 {
                let r = b.radius_at(i as f64 * TAU / 360.0);
                assert!(r >= 8.0 * 0.8 - 1e-12 && r <= 8.0 * 1.2 + 1e-12);
            }
        }
    }

    #[test]
    fn infeasible_packing_is_an_error() {
        let spec = SceneSpec { size: 16, cell_count: (6, 6), radius: (6.0, 6.0), touch_probability: 0.0, ..SceneSpec::default() };
        assert!(matches!(generate(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = SceneSpec::default();
        for bad in [
            SceneSpec { radius: (2.0, 5.0), ..base },
            SceneSpec { contrast: 0.01, noise_sigma: 0.05, ..base },
            SceneSpec { touch_probability: 1.5, ..base },
            SceneSpec { cell_count: (4, 2), ..base },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn dataset_seeds_are_distinct_and_stable() {
        let seeds: std::collections::HashSet<u64> = (0..TRAIN_SCENES).map(|i| scene_seed(TRAIN_BASE_SEED, i)).collect();
        assert_eq!(seeds.len(), TRAIN_SCENES);
        assert!((0..TEST_SCENES).all(|i| !seeds.contains(&scene_seed(TEST_BASE_SEED, i))));
        assert_eq!(scene_seed(7, 3), scene_seed(7, 3));
    }
}
