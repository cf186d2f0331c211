//! Small image-processing toolkit: Gaussian smoothing, gradients,
//! binary erosion, connected components and the Euclidean distance transform.

use std::collections::VecDeque;

use crate::plane::{Mask, Plane};

/// Normalized 1-D Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(src: &Plane<f64>, sigma: f64) -> Plane<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let horizontal = Plane::from_fn(src.width(), src.height(), |x, y| {
        k.iter().enumerate().map(|(i, &w)| w * src.get_clamped(x as isize + i as isize - r, y as isize)).sum::<f64>()
    });
    Plane::from_fn(src.width(), src.height(), |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, &w)| w * horizontal.get_clamped(x as isize, y as isize + i as isize - r))
            .sum::<f64>()
    })
}

/// Central-difference gradient magnitude with edge replication.
pub fn gradient_magnitude(src: &Plane<f64>) -> Plane<f64> {
    Plane::from_fn(src.width(), src.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        let gx = (src.get_clamped(x + 1, y) - src.get_clamped(x - 1, y)) / 2.0;
        let gy = (src.get_clamped(x, y + 1) - src.get_clamped(x, y - 1)) / 2.0;
        gx.hypot(gy)
    })
}

/// Offsets of a digital disk of the given radius.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                v.push((dx, dy));
            }
        }
    }
    v
}

/// Binary erosion by a disk; pixels outside the raster count as background.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    Plane::from_fn(mask.width(), mask.height(), |x, y| {
        mask.get(x, y)
            && offsets
                .iter()
                .all(|&(dx, dy)| mask.get_checked(x as isize + dx, y as isize + dy).unwrap_or(false))
    })
}

pub const NEIGHBORS8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// 8-connected components, labeled `1..=K` in row-major order of first pixel.
pub fn components8(mask: &Mask) -> (Plane<u32>, usize) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = Plane::filled(w, h, 0u32);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || labels.get(x, y) != 0 {
                continue;
            }
            next += 1;
            labels.set(x, y, next);
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                for &(dx, dy) in &NEIGHBORS8 {
                    let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                    if mask.get_checked(nx, ny) == Some(true) && labels.get(nx as usize, ny as usize) == 0 {
                        labels.set(nx as usize, ny as usize, next);
                        queue.push_back((nx as usize, ny as usize));
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let sep = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    for q in 1..n {
        let mut s = sep(q, v[k]);
        while s <= z[k] {
            if k == 0 {
                break;
            }
            k -= 1;
            s = sep(q, v[k]);
        }
        if s <= z[k] {
            // k == 0 and the new parabola dominates everywhere
            v[0] = q;
            z[1] = f64::INFINITY;
            continue;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from each foreground pixel to the nearest background
/// pixel (0 on background). The raster is framed by background.
pub fn distance_transform(mask: &Mask) -> Plane<f64> {
    let (w, h) = (mask.width(), mask.height());
    // pad by one so the frame counts as background
    let (pw, ph) = (w + 2, h + 2);
    let big = ((pw * pw + ph * ph) as f64) * 4.0;
    let mut g = vec![0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                g[(y + 1) * pw + x + 1] = big;
            }
        }
    }
    let mut col = vec![0f64; ph];
    let mut tmp = vec![0f64; ph];
    for x in 0..pw {
        for y in 0..ph {
            col[y] = g[y * pw + x];
        }
        edt_1d(&col, &mut tmp);
        for y in 0..ph {
            g[y * pw + x] = tmp[y];
        }
    }
    let mut row = vec![0f64; pw];
    let mut tmp = vec![0f64; pw];
    for y in 0..ph {
        row.copy_from_slice(&g[y * pw..(y + 1) * pw]);
        edt_1d(&row, &mut tmp);
        g[y * pw..(y + 1) * pw].copy_from_slice(&tmp);
    }
    Plane::from_fn(w, h, |x, y| g[(y + 1) * pw + x + 1].sqrt())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn brute_edt(mask: &Mask) -> Plane<f64> {
        let (w, h) = (mask.width() as isize, mask.height() as isize);
        Plane::from_fn(mask.width(), mask.height(), |x, y| {
            if !mask.get(x, y) {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for by in -1..=h {
                for bx in -1..=w {
                    if mask.get_checked(bx, by) != Some(true) {
                        let d = ((bx - x as isize).pow(2) + (by - y as isize).pow(2)) as f64;
                        best = best.min(d);
                    }
                }
            }
            best.sqrt()
        })
    }

    proptest! {
        #[test]
        fn edt_matches_brute_force(bits in proptest::collection::vec(proptest::bool::weighted(0.75), 12 * 9)) {
            let mask = Plane::new(12, 9, bits).unwrap();
            let fast = distance_transform(&mask);
            let slow = brute_edt(&mask);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let p = Plane::filled(9, 7, 0.4);
        assert!(gaussian_blur(&p, 1.5).data().iter().all(|v| (v - 0.4).abs() < 1e-12));
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(gradient_magnitude(&p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn components_and_erosion() {
        let mask = Plane::new(5, 3, vec![
            true, true, false, false, true,
            false, true, false, false, false,
            false, false, true, false, true,
        ]).unwrap();
        let (labels, n) = components8(&mask);
        assert_eq!(n, 3);
        assert_eq!(labels.get(2, 2), 1, "diagonal neighbours join");
        assert_eq!(labels.get(4, 0), 2);
        let square = Plane::from_fn(9, 9, |x, y| (2..7).contains(&x) && (2..7).contains(&y));
        let e = erode(&square, 1);
        assert_eq!(e.data().iter().filter(|&&b| b).count(), 9);
        assert_eq!(erode(&square, 0), square);
    }
}
