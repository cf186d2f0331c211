use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn grid(shape: &[usize], values: &[f64]) -> TensorGrid<f64> {
    TensorGrid::new(shape.to_vec(), values.to_vec()).unwrap()
}

fn random_grid(rng: &mut ChaCha8Rng, shape: &[usize]) -> TensorGrid<f64> {
    TensorGrid::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Direct sliding-window convolution over an explicitly zero-padded input.
fn conv_oracle(input: &TensorGrid<f64>, kernel: &TensorGrid<f64>, bias: &[f64]) -> Vec<f64> {
    let (cin, h, w) = input.dims3().unwrap();
    let cout = kernel.shape()[0];
    let (ph, pw) = (h + 2, w + 2);
    let mut padded = vec![0.0; cin * ph * pw];
    for c in 0..cin {
        for y in 0..h {
            for x in 0..w {
                padded[c * ph * pw + (y + 1) * pw + x + 1] = input.values()[c * h * w + y * w + x];
            }
        }
    }
    let k = kernel.values();
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o];
                for c in 0..cin {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            acc += k[((o * cin + c) * 3 + dy) * 3 + dx] * padded[c * ph * pw + (y + dy) * pw + x + dx];
                        }
                    }
                }
                out[o * h * w + y * w + x] = acc;
            }
        }
    }
    out
}

fn run_conv(input: &TensorGrid<f64>, kernel: &TensorGrid<f64>, bias: &TensorGrid<f64>) -> TensorGrid<f64> {
    let mut tape = Tape::new();
    let (i, k, b) = (tape.constant(input.clone()), tape.constant(kernel.clone()), tape.constant(bias.clone()));
    let y = tape.conv2d(i, k, b).unwrap();
    tape.value(y).unwrap().clone()
}

#[test]
fn conv_zero_input_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = run_conv(&TensorGrid::zeros(&[1, 3, 3]), &random_grid(&mut rng, &[1, 1, 3, 3]), &TensorGrid::zeros(&[1]));
    assert!(out.values().iter().all(|&v| v == 0.0));
    assert_eq!(out.shape(), &[1, 3, 3]);
}

#[test]
fn conv_identity_kernel_reproduces_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = random_grid(&mut rng, &[1, 5, 4]);
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let out = run_conv(&input, &grid(&[1, 1, 3, 3], &k), &TensorGrid::zeros(&[1]));
    assert_eq!(out, input);
}

#[test]
fn conv_all_ones_kernel_on_2x2() {
    let input = grid(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let kernel = TensorGrid::filled(&[1, 1, 3, 3], 1.0);
    let expected = conv_oracle(&input, &kernel, &[0.0]);
    // every padded 3x3 window around a 2x2 grid covers all four cells
    assert_eq!(expected, vec![10.0; 4]);
    let out = run_conv(&input, &kernel, &TensorGrid::zeros(&[1]));
    assert_eq!(out.values(), expected.as_slice());
}

#[test]
fn conv_matches_sliding_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(cin, cout, h, w) in &[(1, 1, 1, 1), (2, 3, 4, 5), (3, 2, 7, 3), (4, 4, 8, 8)] {
        let input = random_grid(&mut rng, &[cin, h, w]);
        let kernel = random_grid(&mut rng, &[cout, cin, 3, 3]);
        let bias = random_grid(&mut rng, &[cout]);
        let want = conv_oracle(&input, &kernel, bias.values());
        let got = run_conv(&input, &kernel, &bias);
        for (a, b) in got.values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut tape = Tape::<f64>::new();
    let i = tape.constant(TensorGrid::zeros(&[2, 4, 4]));
    let k = tape.constant(TensorGrid::zeros(&[1, 3, 3, 3]));
    let b = tape.constant(TensorGrid::zeros(&[1]));
    assert!(matches!(tape.conv2d(i, k, b), Err(Error::Dimension(_))));
}

#[test]
fn relu_cases() {
    let mut tape = Tape::new();
    let x = tape.leaf(grid(&[3], &[-1.0, 0.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).unwrap().values(), &[0.0, 0.0, 2.0]);
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    // subgradient at exactly zero is zero
    assert_eq!(g.get(x).unwrap().values(), &[0.0, 0.0, 1.0]);

    let mut tape = Tape::new();
    let pos = grid(&[4], &[0.5, 1.0, 3.0, 1e-3]);
    let x = tape.constant(pos.clone());
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).unwrap(), &pos);
}

#[test]
fn relu_gradient_matches_finite_difference() {
    for &(x0, want) in &[(-0.5, 0.0), (0.5, 1.0)] {
        let mut tape = Tape::new();
        let x = tape.leaf(grid(&[1], &[x0]));
        let y = tape.relu(x).unwrap();
        let g = tape.backward(y).unwrap().get(x).unwrap().values()[0];
        let h = 1e-5;
        let fd = ((x0 + h).max(0.0) - (x0 - h).max(0.0)) / (2.0 * h);
        assert!((g - fd).abs() < 1e-9);
        assert_eq!(g, want);
    }
}

#[test]
fn ln_values_and_gradient() {
    let xs = [0.3, 2.0, 1e-9, 0.0];
    let mut tape = Tape::new();
    let x = tape.leaf(grid(&[4], &xs));
    let y = tape.ln(x, 1e-7).unwrap();
    let v = tape.value(y).unwrap().values().to_vec();
    assert!((v[0] - 0.3f64.ln()).abs() < 1e-15);
    assert!((v[1] - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(v[2], 1e-7f64.ln());
    assert_eq!(v[3], 1e-7f64.ln());
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap().get(x).unwrap().values().to_vec();
    for i in 0..2 {
        let h = 1e-6;
        let fd = ((xs[i] + h).ln() - (xs[i] - h).ln()) / (2.0 * h);
        assert!((g[i] - fd).abs() < 1e-8 * fd.abs());
    }
    assert_eq!(&g[2..], &[0.0, 0.0]);
}

#[test]
fn sigmoid_values() {
    let mut tape = Tape::new();
    let x = tape.constant(grid(&[5], &[0.0, 40.0, 1.0, -40.0, -800.0]));
    let y = tape.sigmoid(x).unwrap();
    let v = tape.value(y).unwrap().values().to_vec();
    assert_eq!(v[0], 0.5);
    assert!((1.0 - v[1]).abs() < 1e-12 && v[1] < 1.0);
    let direct = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((v[2] - 0.7310585786300049).abs() < 1e-15);
    assert!((v[2] - direct).abs() < 1e-15);
    assert!(v[3] > 0.0 && v[4] > 0.0);
}

#[test]
fn maxpool_cases() {
    let mut tape = Tape::new();
    let c = tape.constant(TensorGrid::filled(&[2, 4, 4], 0.3));
    let p = tape.maxpool2(c).unwrap();
    assert_eq!(tape.value(p).unwrap(), &TensorGrid::filled(&[2, 2, 2], 0.3));

    let x = tape.constant(grid(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = tape.maxpool2(x).unwrap();
    assert_eq!(tape.value(p).unwrap().values(), &[4.0]);

    let odd = tape.constant(TensorGrid::zeros(&[1, 3, 4]));
    assert!(matches!(tape.maxpool2(odd), Err(Error::Dimension(_))));
}

#[test]
fn maxpool_matches_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = random_grid(&mut rng, &[1, 4, 4]);
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let p = tape.maxpool2(x).unwrap();
    let v = input.values();
    for oy in 0..2 {
        for ox in 0..2 {
            let mut m = f64::NEG_INFINITY;
            for dy in 0..2 {
                for dx in 0..2 {
                    m = m.max(v[(2 * oy + dy) * 4 + 2 * ox + dx]);
                }
            }
            assert_eq!(tape.value(p).unwrap().values()[oy * 2 + ox], m);
        }
    }
}

#[test]
fn maxpool_tie_routes_to_first_index() {
    let mut tape = Tape::new();
    let x = tape.leaf(grid(&[1, 2, 2], &[1.0, 5.0, 5.0, 5.0]));
    let p = tape.maxpool2(x).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().values(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn upsample_cases() {
    let mut tape = Tape::new();
    let x = tape.constant(grid(&[1, 1, 1], &[1.0]));
    let u = tape.upsample2(x).unwrap();
    assert_eq!(tape.value(u).unwrap(), &grid(&[1, 2, 2], &[1.0; 4]));
    let c = tape.constant(TensorGrid::filled(&[3, 2, 3], 0.7));
    let u = tape.upsample2(c).unwrap();
    assert_eq!(tape.value(u).unwrap(), &TensorGrid::filled(&[3, 4, 6], 0.7));
}

#[test]
fn concat_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_grid(&mut rng, &[1, 3, 2]);
    let b = random_grid(&mut rng, &[1, 3, 2]);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.concat_channels(va, vb).unwrap();
    let cv = tape.value(c).unwrap();
    assert_eq!(cv.shape(), &[2, 3, 2]);
    assert_eq!(cv.channels(0, 1).unwrap(), a);
    assert_eq!(cv.channels(1, 2).unwrap(), b);

    let empty = tape.constant(TensorGrid::zeros(&[0, 3, 2]));
    let c = tape.concat_channels(va, empty).unwrap();
    assert_eq!(tape.value(c).unwrap(), &a);

    let wrong = tape.constant(TensorGrid::zeros(&[1, 2, 2]));
    assert!(tape.concat_channels(va, wrong).is_err());
}

#[test]
fn backward_of_sum_is_ones_and_constant_loss_gives_zeros() {
    let mut tape = Tape::new();
    let x = tape.leaf(grid(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().values(), &[1.0; 4]);

    let mut tape = Tape::new();
    let x = tape.leaf(grid(&[3], &[1.0, 2.0, 3.0]));
    let c = tape.constant(grid(&[1], &[7.0]));
    let g = tape.backward(c).unwrap();
    assert_eq!(g.get(x).unwrap().values(), &[0.0; 3]);
}

#[test]
fn backward_guards() {
    let mut tape = Tape::new();
    let x = tape.leaf(grid(&[3], &[1.0, 2.0, 3.0]));
    assert!(matches!(tape.backward(x), Err(Error::Tape(_))), "non-scalar loss");
    let s = tape.sum(x).unwrap();
    let g1 = tape.backward(s).unwrap();
    assert_eq!(g1.get(x).unwrap().values(), &[1.0; 3]);
    assert!(matches!(tape.backward(s), Err(Error::Tape(_))), "second backward");

    let mut other = Tape::<f64>::new();
    let y = other.leaf(grid(&[1], &[1.0]));
    let mut fresh = Tape::<f64>::new();
    assert!(matches!(fresh.backward(y), Err(Error::Tape(_))), "detached loss");
}

#[test]
fn nonfinite_is_an_error() {
    assert!(TensorGrid::new(vec![1], vec![f64::NAN]).is_err());
    let mut tape = Tape::new();
    let a = tape.constant(grid(&[1], &[1.0]));
    let z = tape.constant(grid(&[1], &[0.0]));
    assert!(matches!(tape.div(a, z), Err(Error::NonFinite(_))));
}

/// Builds `sum(sigmoid(conv(relu(conv(up(pool(x)))) , k2)) * w)` and returns the loss.
fn composite(tape: &mut Tape<f64>, leaves: &[Var]) -> Var {
    let [x, k1, b1, k2, b2, w] = leaves else { unreachable!() };
    let p = tape.maxpool2(*x).unwrap();
    let u = tape.upsample2(p).unwrap();
    let c1 = tape.conv2d(u, *k1, *b1).unwrap();
    let r = tape.relu(c1).unwrap();
    let cat = tape.concat_channels(r, *x).unwrap();
    let c2 = tape.conv2d(cat, *k2, *b2).unwrap();
    let s = tape.sigmoid(c2).unwrap();
    let m = tape.mul(s, *w).unwrap();
    tape.sum(m).unwrap()
}

#[test]
fn composite_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shapes: [&[usize]; 6] = [&[2, 4, 4], &[3, 2, 3, 3], &[3], &[2, 5, 3, 3], &[2], &[2, 4, 4]];
    let mut checked = 0;
    for _trial in 0..5 {
        let inputs: Vec<TensorGrid<f64>> = shapes.iter().map(|s| random_grid(&mut rng, s)).collect();
        let eval = |inputs: &[TensorGrid<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|g| tape.constant(g.clone())).collect();
            let l = composite(&mut tape, &vars);
            tape.scalar(l).unwrap()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|g| tape.leaf(g.clone())).collect();
        let loss = composite(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-5;
        for (li, var) in vars.iter().enumerate() {
            let analytic = grads.get(*var).unwrap().values().to_vec();
            for idx in 0..inputs[li].len() {
                let mut plus = inputs.clone();
                let v = plus[li].values()[idx];
                plus[li].set(idx, v + h).unwrap();
                let mut minus = inputs.clone();
                minus[li].set(idx, v - h).unwrap();
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[idx];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                if (a - fd).abs() / denom > 1e-4 {
                    // pre-activations within the step of a relu/maxpool kink make FD meaningless
                    assert!((a - fd).abs() < 1e-3, "leaf {li} idx {idx}: {a} vs {fd}");
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 500);
}

#[test]
fn upsample_and_concat_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_grid(&mut rng, &[1, 2, 2]);
    let b = random_grid(&mut rng, &[2, 4, 4]);
    let w = random_grid(&mut rng, &[3, 4, 4]);
    let f = |a: &TensorGrid<f64>, b: &TensorGrid<f64>, track: bool| {
        let mut tape = Tape::new();
        let (va, vb) = if track { (tape.leaf(a.clone()), tape.leaf(b.clone())) } else { (tape.constant(a.clone()), tape.constant(b.clone())) };
        let vw = tape.constant(w.clone());
        let u = tape.upsample2(va).unwrap();
        let c = tape.concat_channels(u, vb).unwrap();
        let m = tape.mul(c, vw).unwrap();
        let sq = tape.mul(m, m).unwrap();
        let l = tape.sum(sq).unwrap();
        (tape, va, vb, l)
    };
    let (mut tape, va, vb, l) = f(&a, &b, true);
    let g = tape.backward(l).unwrap();
    let h = 1e-5;
    for (which, base) in [(0, &a), (1, &b)] {
        let analytic = g.get(if which == 0 { va } else { vb }).unwrap().values().to_vec();
        for i in 0..base.len() {
            let mut p = base.clone();
            p.set(i, base.values()[i] + h).unwrap();
            let mut m = base.clone();
            m.set(i, base.values()[i] - h).unwrap();
            let eval = |x: &TensorGrid<f64>| {
                let (t, _, _, l) = if which == 0 { f(x, &b, false) } else { f(&a, x, false) };
                t.scalar(l).unwrap()
            };
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            assert!((analytic[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{which}/{i}");
        }
    }
}

proptest! {
    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_grid(&mut rng, &[2, 5, 6]);
        let y = random_grid(&mut rng, &[2, 5, 6]);
        let k = random_grid(&mut rng, &[3, 2, 3, 3]);
        let zero = TensorGrid::zeros(&[3]);
        let mix = TensorGrid::from_fn(&[2, 5, 6], |i| a * x.values()[i] + b * y.values()[i]).unwrap();
        let lhs = run_conv(&mix, &k, &zero);
        let (cx, cy) = (run_conv(&x, &k, &zero), run_conv(&y, &k, &zero));
        for i in 0..lhs.len() {
            prop_assert!((lhs.values()[i] - (a * cx.values()[i] + b * cy.values()[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn activations_stay_in_range(values in proptest::collection::vec(-60.0f64..60.0, 1..50)) {
        let mut tape = Tape::new();
        let x = tape.constant(TensorGrid::new(vec![values.len()], values).unwrap());
        let s = tape.sigmoid(x).unwrap();
        let r = tape.relu(x).unwrap();
        prop_assert!(tape.value(s).unwrap().values().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(tape.value(r).unwrap().values().iter().all(|&v| v >= 0.0));
    }
}
