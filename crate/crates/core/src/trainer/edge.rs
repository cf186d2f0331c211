use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, gradient_magnitude};
use crate::plane::{LabeledMask, Plane};

/// Gradient magnitude of the Gaussian-smoothed binary mask `g`, rescaled so
/// its maximum is 1 (an all-constant mask yields zeros).
pub fn edge_groundtruth(g: &Plane<f64>, sigma: f64) -> Result<Plane<f64>> {
    if g.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidValue("edge ground truth needs a binary mask".into()));
    }
    check_sigma(sigma)?;
    Ok(rescale_to_unit(gradient_magnitude(&gaussian_blur(g, sigma))))
}

/// Edge target for an instance map: the pixelwise maximum of each
/// instance's smoothed-mask gradient magnitude, rescaled to max 1.
///
/// Unlike [`edge_groundtruth`] on the union mask, this keeps the boundary
/// between touching instances.
pub fn edge_groundtruth_instances(labels: &LabeledMask, sigma: f64) -> Result<Plane<f64>> {
    check_sigma(sigma)?;
    let (w, h) = (labels.width(), labels.height());
    let mut acc = Plane::filled(w, h, 0.0);
    for label in 1..=labels.count() as u32 {
        let inst = labels.instance(label).map(|b| if b { 1.0 } else { 0.0 });
        let mag = gradient_magnitude(&gaussian_blur(&inst, sigma));
        for (a, &m) in acc.data_mut().iter_mut().zip(mag.data()) {
            *a = f64::max(*a, m);
        }
    }
    Ok(rescale_to_unit(acc))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("σ must be positive, got {sigma}")))
    }
}

fn rescale_to_unit(mut p: Plane<f64>) -> Plane<f64> {
    let max = p.data().iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        p.data_mut().iter_mut().for_each(|v| *v /= max);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 2-D convolution with the sampled Gaussian and explicit finite differences.
    fn oracle(g: &Plane<f64>, sigma: f64) -> Plane<f64> {
        let r = (3.0 * sigma).ceil() as isize;
        let norm: f64 = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).sum();
        let blurred = Plane::from_fn(g.width(), g.height(), |x, y| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() / (norm * norm);
                    acc += wgt * g.get_clamped(x as isize + dx, y as isize + dy);
                }
            }
            acc
        });
        let mag = Plane::from_fn(g.width(), g.height(), |x, y| {
            let (x, y) = (x as isize, y as isize);
            let gx = 0.5 * (blurred.get_clamped(x + 1, y) - blurred.get_clamped(x - 1, y));
            let gy = 0.5 * (blurred.get_clamped(x, y + 1) - blurred.get_clamped(x, y - 1));
            (gx * gx + gy * gy).sqrt()
        });
        let max = mag.data().iter().copied().fold(0.0, f64::max);
        mag.map(|v| v / max)
    }

    #[test]
    fn constant_masks_have_no_edges() {
        for v in [0.0, 1.0] {
            let e = edge_groundtruth(&Plane::filled(16, 12, v), 1.5).unwrap();
            assert!(e.data().iter().all(|&x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn square_edge_peaks_on_boundary_ring() {
        let g = Plane::from_fn(24, 24, |x, y| if (8..16).contains(&x) && (8..16).contains(&y) { 1.0 } else { 0.0 });
        let e = edge_groundtruth(&g, 1.5).unwrap();
        let o = oracle(&g, 1.5);
        for (a, b) in e.data().iter().zip(o.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let (mut best, mut at) = (0.0, (0, 0));
        for y in 0..24 {
            for x in 0..24 {
                if e.get(x, y) > best {
                    best = e.get(x, y);
                    at = (x, y);
                }
            }
        }
        assert_eq!(best, 1.0);
        let on_ring = |c: usize| c == 7 || c == 8 || c == 15 || c == 16;
        let inside = |c: usize| (7..=16).contains(&c);
        assert!((on_ring(at.0) && inside(at.1)) || (on_ring(at.1) && inside(at.0)), "argmax {at:?}");
    }

    #[test]
    fn rejects_non_binary_and_bad_sigma() {
        assert!(edge_groundtruth(&Plane::filled(4, 4, 0.5), 1.0).is_err());
        assert!(edge_groundtruth(&Plane::filled(4, 4, 1.0), 0.0).is_err());
    }

    #[test]
    fn instance_edges_mark_shared_boundaries() {
        let raw = Plane::from_fn(20, 14, |x, y| match (x, y) {
            (4..=9, 2..=11) => 1,
            (10..=15, 2..=11) => 2,
            _ => 0,
        });
        let labels = LabeledMask::new(raw).unwrap();
        let union = labels.foreground().map(|b| if b { 1.0 } else { 0.0 });
        let plain = edge_groundtruth(&union, 1.0).unwrap();
        let inst = edge_groundtruth_instances(&labels, 1.0).unwrap();
        assert!(plain.get(9, 6) < 0.05, "union mask has no internal boundary");
        assert!(inst.get(9, 6) > 0.8 && inst.get(10, 6) > 0.8);
    }
}
