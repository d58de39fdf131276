use lapsr_core::tensor::{conv2d, conv_transpose2d, init_bilinear, Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: lapsr_core::Real>(shape: [usize; 4], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64(rng.random_range(-1.0..1.0)))
}

/// Cross-correlation written as the textbook seven nested loops, in f64.
fn conv_oracle(
    x: &Tensor<f32>,
    w: &Tensor<f32>,
    b: &Tensor<f32>,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let [n, c, h, wd] = x.shape().0;
    let [oc, _, kh, kw] = w.shape().0;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * oc * oh * ow);
    for bn in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = f64::from(b.data()[o]);
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += f64::from(x.at(bn, ci, iy as usize, ix as usize))
                                    * f64::from(w.at(o, ci, ky, kx));
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution as a direct scatter-accumulate, in f64.
fn conv_t_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, ic, h, wd] = x.shape().0;
    let [_, oc, kh, kw] = w.shape().0;
    let (oh, ow) = (
        (h - 1) * stride + kh - 2 * pad,
        (wd - 1) * stride + kw - 2 * pad,
    );
    let mut out = Tensor::zeros([n, oc, oh, ow]);
    for bn in 0..n {
        for ci in 0..ic {
            for y in 0..h {
                for xx in 0..wd {
                    for o in 0..oc {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (y * stride + ky) as isize - pad as isize;
                                let ox = (xx * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let idx = ((bn * oc + o) * oh + oy as usize) * ow + ox as usize;
                                out.data_mut()[idx] += x.at(bn, ci, y, xx) * w.at(ci, o, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn param<T: lapsr_core::Real>(g: &mut Graph<T>, t: Tensor<T>) -> lapsr_core::Var {
    g.leaf(t.with_requires_grad(true))
}

fn max_rel(actual: impl IntoIterator<Item = f64>, expected: &[f64]) -> f64 {
    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    actual
        .into_iter()
        .zip(expected)
        .map(|(a, e)| (a - e).abs() / scale)
        .fold(0.0, f64::max)
}

#[test]
fn conv2d_matches_direct_loops() {
    let x = random::<f32>([2, 3, 8, 8], 1);
    let w = random::<f32>([5, 3, 3, 3], 2);
    let b = random::<f32>([1, 5, 1, 1], 3);
    let y = conv2d(&x, &w, &b, 1, 1).unwrap();
    assert_eq!(y.shape().0, [2, 5, 8, 8]);
    let err = max_rel(
        y.data().iter().map(|&v| f64::from(v)),
        &conv_oracle(&x, &w, &b, 1, 1),
    );
    assert!(err <= 1e-6, "relative error {err}");
}

#[test]
fn strided_and_unpadded_conv2d_match_direct_loops() {
    for (stride, pad, k) in [(2, 0, 3), (2, 1, 4), (1, 0, 1), (3, 2, 5)] {
        let x = random::<f32>([1, 2, 11, 9], 4);
        let w = random::<f32>([3, 2, k, k], 5);
        let b = random::<f32>([1, 3, 1, 1], 6);
        let y = conv2d(&x, &w, &b, stride, pad).unwrap();
        let err = max_rel(
            y.data().iter().map(|&v| f64::from(v)),
            &conv_oracle(&x, &w, &b, stride, pad),
        );
        assert!(err <= 1e-6, "stride {stride} pad {pad} k {k}: {err}");
    }
}

#[test]
fn conv_transpose_matches_scatter_oracle() {
    let x = random::<f64>([2, 3, 5, 4], 7);
    let w = random::<f64>([3, 2, 4, 4], 8);
    let zero = Tensor::zeros([1, 2, 1, 1]);
    let y = conv_transpose2d(&x, &w, &zero, 2, 1).unwrap();
    let expected = conv_t_oracle(&x, &w, 2, 1);
    assert_eq!(y.shape(), expected.shape());
    assert!(max_rel(y.data().iter().copied(), expected.data()) <= 1e-12);
}

#[test]
fn bilinear_transposed_conv_interpolates_interior() {
    let x = Tensor::<f64>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let k = init_bilinear::<f64>(4).unwrap();
    let y = conv_transpose2d(&x, &k, &Tensor::zeros([1, 1, 1, 1]), 2, 1).unwrap();
    assert_eq!(y.shape().0, [1, 1, 4, 4]);
    assert_eq!(y.data(), conv_t_oracle(&x, &k, 2, 1).data());
    // Interior 2×2 sits at quarter-pixel offsets: 0.75·near + 0.25·far per axis.
    let bilinear = |py: f64, px: f64| {
        let top = 1.0 + px;
        let bottom = 3.0 + px;
        top + (bottom - top) * py
    };
    assert!((y.at(0, 0, 1, 1) - bilinear(0.25, 0.25)).abs() < 1e-12);
    assert!((y.at(0, 0, 1, 2) - bilinear(0.25, 0.75)).abs() < 1e-12);
    assert!((y.at(0, 0, 2, 1) - bilinear(0.75, 0.25)).abs() < 1e-12);
    assert!((y.at(0, 0, 2, 2) - bilinear(0.75, 0.75)).abs() < 1e-12);
    // Ones: interior reproduces the constant, the zero-padded border loses a quarter.
    let ones = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
    let y = conv_transpose2d(&ones, &k, &Tensor::zeros([1, 1, 1, 1]), 2, 1).unwrap();
    assert_eq!(y.at(0, 0, 2, 3), 1.0);
    assert_eq!(y.at(0, 0, 0, 3), 0.75);
    assert_eq!(y.at(0, 0, 0, 0), 0.5625);
}

#[test]
fn transposed_input_gradient_is_a_forward_convolution() {
    let x = random::<f64>([1, 2, 4, 5], 9);
    let w = random::<f64>([2, 3, 4, 4], 10);
    let b = random::<f64>([1, 3, 1, 1], 11);
    let mut g = Graph::new();
    let (xv, wv, bv) = (param(&mut g, x), param(&mut g, w.clone()), param(&mut g, b));
    let y = g.conv_transpose2d(xv, wv, bv, 2, 1).unwrap();
    let seed = random::<f64>(g.value(y).shape().0, 12);
    g.backward_with(y, seed.data()).unwrap();
    let expected = conv2d(&seed, &w, &Tensor::zeros([1, 2, 1, 1]), 2, 1).unwrap();
    assert!(max_rel(g.grad(xv).unwrap().iter().copied(), expected.data()) <= 1e-12);
}

#[test]
fn leaky_relu_gradient_matches_finite_difference() {
    let f = |v: f64| {
        let mut g = Graph::new();
        let x = param(&mut g, Tensor::scalar(v));
        let y = g.leaky_relu(x, 0.2);
        (g.value(y).item(), g, x, y)
    };
    let (_, mut g, x, y) = f(-3.0);
    g.backward(y).unwrap();
    let analytic = g.grad(x).unwrap()[0];
    let h = 1e-6;
    let numeric = (f(-3.0 + h).0 - f(-3.0 - h).0) / (2.0 * h);
    assert!((analytic - 0.2).abs() < 1e-15);
    assert!((numeric - analytic).abs() < 1e-6);
    assert_eq!(f(2.0).0, 2.0);
    assert_eq!(f(-1.0).0, -0.2);
}

#[test]
fn forward_and_backward_are_bitwise_repeatable() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = param(&mut g, random([2, 3, 9, 7], 13));
        let w = param(&mut g, random([4, 3, 3, 3], 14));
        let b = param(&mut g, random([1, 4, 1, 1], 15));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        let a = g.leaky_relu(y, 0.2);
        let c = g.charbonnier(a, 1e-3);
        let loss = g.sum(c);
        g.backward(loss).unwrap();
        (
            g.value(loss).item().to_bits(),
            g.grad(w).unwrap().to_vec(),
            g.grad(x).unwrap().to_vec(),
        )
    };
    let (l1, w1, x1) = run();
    let (l2, w2, x2) = run();
    assert_eq!(l1, l2);
    assert_eq!(
        w1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        w2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        x1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        x2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

fn geometry() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, u64)> {
    // (channels in, channels out, kernel, stride, pad, side, seed)
    (
        1usize..4,
        1usize..4,
        1usize..5,
        1usize..3,
        0usize..2,
        5usize..10,
        any::<u64>(),
    )
        .prop_map(|(ci, co, k, s, p, side, seed)| {
            let p = p.min(k - 1);
            // Round the side up so the stride tiles the padded input exactly.
            let side = side + (s - (side + 2 * p - k) % s) % s;
            (ci, co, k, s, p, side, seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_and_transpose_are_adjoint((ci, co, k, s, p, side, seed) in geometry()) {
        let x = random::<f32>([2, ci, side, side], seed);
        let w = random::<f32>([co, ci, k, k], seed ^ 1);
        let y_shape = conv2d(&x, &w, &Tensor::zeros([1, co, 1, 1]), s, p).unwrap().shape();
        let y = random::<f32>(y_shape.0, seed ^ 2);
        let cx = conv2d(&x, &w, &Tensor::zeros([1, co, 1, 1]), s, p).unwrap();
        let ty = conv_transpose2d(&y, &w, &Tensor::zeros([1, ci, 1, 1]), s, p).unwrap();
        let lhs = cx.dot(&y).unwrap();
        let mut rhs = 0.0;
        for n in 0..2 {
            for c in 0..ci {
                for yy in 0..ty.shape().h() {
                    for xx in 0..ty.shape().w() {
                        rhs += f64::from(x.at(n, c, yy, xx)) * f64::from(ty.at(n, c, yy, xx));
                    }
                }
            }
        }
        let scale = cx.data().iter().map(|v| f64::from(v.abs())).sum::<f64>().max(1.0);
        prop_assert!((lhs - rhs).abs() <= 1e-5 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_is_linear((ci, co, k, s, p, side, seed) in geometry(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let x = random::<f64>([1, ci, side, side], seed);
        let y = random::<f64>([1, ci, side, side], seed ^ 3);
        let w = random::<f64>([co, ci, k, k], seed ^ 4);
        let zero = Tensor::zeros([1, co, 1, 1]);
        let mix = Tensor::from_fn([1, ci, side, side], |n, c, i, j| a * x.at(n, c, i, j) + b * y.at(n, c, i, j));
        let lhs = conv2d(&mix, &w, &zero, s, p).unwrap();
        let (cx, cy) = (conv2d(&x, &w, &zero, s, p).unwrap(), conv2d(&y, &w, &zero, s, p).unwrap());
        for ((l, u), v) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * u + b * v)).abs() <= 1e-6);
        }
    }

    #[test]
    fn smooth_graph_stays_finite(seed in any::<u64>(), scale in 1e-3f32..1e3) {
        let mut g = Graph::<f32>::new();
        let x = param(&mut g, Tensor::from_fn([1, 2, 6, 6], {
            let base = random::<f32>([1, 2, 6, 6], seed);
            move |n, c, i, j| base.at(n, c, i, j) * scale
        }));
        let w = param(&mut g, random([2, 2, 3, 3], seed ^ 5));
        let b = param(&mut g, random([1, 2, 1, 1], seed ^ 6));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        let r = g.leaky_relu(y, 0.2);
        let c = g.charbonnier(r, 1e-3);
        let loss = g.mean(c);
        g.backward(loss).unwrap();
        prop_assert!(g.value(loss).all_finite());
        prop_assert!(g.grad(x).unwrap().iter().all(|v| v.is_finite()));
        prop_assert!(g.grad(w).unwrap().iter().all(|v| v.is_finite()));
    }
}
