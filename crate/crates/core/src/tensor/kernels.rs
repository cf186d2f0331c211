//! Raw forward/backward kernels on flat buffers. Shapes are validated by the tape.

use crate::scalar::Scalar;

/// Unfolds a `[C,H,W]` input into `[C*9, H*W]` columns for a 3x3 kernel, zero padding 1.
pub(super) fn unfold3<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(col.len(), c * 9 * hw);
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`unfold3`]: scatters column gradients back onto the input grid.
pub(super) fn fold3<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] += src[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] += src[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] += src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn conv3_forward<T: Scalar>(
    input: &[T],
    (cin, h, w): (usize, usize, usize),
    kernel: &[T],
    bias: &[T],
    cout: usize,
) -> Vec<T> {
    let hw = h * w;
    let mut col = vec![T::zero(); cin * 9 * hw];
    unfold3(input, cin, h, w, &mut col);
    let mut out = vec![T::zero(); cout * hw];
    for (co, b) in bias.iter().enumerate() {
        out[co * hw..(co + 1) * hw].fill(*b);
    }
    T::gemm(cout, cin * 9, hw, T::one(), kernel, false, &col, false, T::one(), &mut out);
    out
}

/// Returns `(d_input, d_kernel, d_bias)`; entries not requested are `None`.
#[allow(clippy::type_complexity)]
pub(super) fn conv3_backward<T: Scalar>(
    input: &[T],
    (cin, h, w): (usize, usize, usize),
    kernel: &[T],
    cout: usize,
    grad_out: &[T],
    want: (bool, bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let hw = h * w;
    let k = cin * 9;
    let d_bias = want.2.then(|| {
        (0..cout)
            .map(|co| grad_out[co * hw..(co + 1) * hw].iter().fold(T::zero(), |a, &g| a + g))
            .collect()
    });
    let d_kernel = want.1.then(|| {
        let mut col = vec![T::zero(); k * hw];
        unfold3(input, cin, h, w, &mut col);
        let mut dk = vec![T::zero(); cout * k];
        T::gemm(cout, hw, k, T::one(), grad_out, false, &col, true, T::zero(), &mut dk);
        dk
    });
    let d_input = want.0.then(|| {
        let mut dcol = vec![T::zero(); k * hw];
        T::gemm(k, cout, hw, T::one(), kernel, true, grad_out, false, T::zero(), &mut dcol);
        let mut di = vec![T::zero(); cin * hw];
        fold3(&dcol, cin, h, w, &mut di);
        di
    });
    (d_input, d_kernel, d_bias)
}

/// 2x2 max pooling; returns values and the flat input index of each window's maximum.
pub(super) fn maxpool2_forward<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let candidates = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                // strict comparison keeps the first maximum in row-major order
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(super) fn upsample2_forward<T: Scalar>(input: &[T], (c, h, w): (usize, usize, usize)) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            let src = &input[ci * h * w + (y / 2) * w..ci * h * w + (y / 2 + 1) * w];
            let dst = &mut out[ci * oh * ow + y * ow..ci * oh * ow + (y + 1) * ow];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
    out
}

pub(super) fn upsample2_backward<T: Scalar>(grad_out: &[T], (c, h, w): (usize, usize, usize)) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                g[ci * h * w + (y / 2) * w + x / 2] += grad_out[ci * oh * ow + y * ow + x];
            }
        }
    }
    g
}
