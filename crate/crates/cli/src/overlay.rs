//! Colour overlays: the grayscale image with each instance boundary drawn in its own colour.

use cellseg_core::plane::{LabeledMask, Plane};

/// Labelled pixels with a 4-neighbour of another label or outside the image.
pub fn is_boundary(labels: &Plane<u32>, x: usize, y: usize) -> bool {
    let l = labels.get(x, y);
    if l == 0 {
        return false;
    }
    let (x, y) = (x as isize, y as isize);
    [(1, 0), (-1, 0), (0, 1), (0, -1)]
        .iter()
        .any(|&(dx, dy)| labels.get_checked(x + dx, y + dy) != Some(l))
}

/// Fully saturated colour for label `l`, hues spaced by the golden angle.
pub fn label_color(l: u32) -> [u8; 3] {
    let hue = (l as f64 * 137.507_764_05).rem_euclid(360.0) / 60.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 255.0f64).round() as u8, (g * 255.0f64).round() as u8, (b * 255.0f64).round() as u8]
}

/// Interleaved RGB8 pixels.
pub fn render_overlay(image: &Plane<f64>, labels: &LabeledMask) -> Vec<u8> {
    let lp = labels.labels();
    let mut rgb = Vec::with_capacity(image.len() * 3);
    for y in 0..image.height() {
        for x in 0..image.width() {
            if is_boundary(lp, x, y) {
                rgb.extend_from_slice(&label_color(lp.get(x, y)));
            } else {
                let v = (image.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
                rgb.extend_from_slice(&[v, v, v]);
            }
        }
    }
    rgb
}
