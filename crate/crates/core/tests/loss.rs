use lapsr_core::loss::{charbonnier_loss, gdl_loss, gdl_term_count, total_loss, LossConfig};
use lapsr_core::{Graph, Tensor};
use proptest::prelude::*;

const EPS: f64 = 1e-3;

fn tensor(shape: [usize; 4], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

fn pair_value(
    f: impl Fn(&mut Graph<f64>, lapsr_core::Var, lapsr_core::Var) -> lapsr_core::Var,
    a: &Tensor<f64>,
    b: &Tensor<f64>,
) -> f64 {
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = f(&mut g, va, vb);
    g.value(out).item()
}

fn charb(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    pair_value(|g, x, y| charbonnier_loss(g, x, y, EPS).unwrap(), a, b)
}

fn gdl(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    pair_value(|g, x, y| gdl_loss(g, x, y, EPS).unwrap(), a, b)
}

#[test]
fn identities_on_equal_images() {
    let x = Tensor::from_fn([2, 3, 5, 4], |n, c, y, x| {
        (n + 2 * c + 3 * y + 5 * x) as f64 * 0.01
    });
    assert_eq!(charb(&x, &x), 120.0 * EPS);
    assert_eq!(gdl_term_count(x.shape()), 2 * 3 * (4 * 4 + 5 * 3));
    assert_eq!(gdl(&x, &x), gdl_term_count(x.shape()) as f64 * EPS);
}

#[test]
fn ramp_against_constant_by_hand() {
    let ramp = tensor([1, 1, 2, 2], &[0.0, 1.0, 0.0, 1.0]);
    let flat = tensor([1, 1, 2, 2], &[0.5; 4]);
    let expected = 2.0 * (1.0 + EPS * EPS).sqrt() + 2.0 * EPS;
    assert!((gdl(&ramp, &flat) - expected).abs() < 1e-9);
}

#[test]
fn lambda_zero_total_is_plain_charbonnier_bitwise() {
    let pred = Tensor::<f32>::from_fn([2, 3, 6, 6], |n, c, y, x| {
        ((n * 7 + c * 5 + y * 3 + x) as f32 * 0.37).sin()
    });
    let target = Tensor::<f32>::from_fn([2, 3, 6, 6], |n, c, y, x| {
        ((n + c + y * x) as f32 * 0.11).cos()
    });
    let run = |lambda: Option<f64>| {
        let mut g = Graph::<f32>::new();
        let p = g.leaf(pred.clone().with_requires_grad(true));
        let t = g.constant(target.clone());
        let loss = match lambda {
            Some(l) => {
                total_loss(
                    &mut g,
                    &[p],
                    &[t],
                    &LossConfig {
                        epsilon: EPS,
                        lambda_gdl: l,
                    },
                    2,
                )
                .unwrap()
                .total
            }
            None => {
                let c = charbonnier_loss(&mut g, p, t, EPS).unwrap();
                g.scale(c, 0.5)
            }
        };
        g.backward(loss).unwrap();
        let grad: Vec<u32> = g.grad(p).unwrap().iter().map(|v| v.to_bits()).collect();
        (g.value(loss).item().to_bits(), grad)
    };
    assert_eq!(run(Some(0.0)), run(None));
    assert_ne!(run(Some(0.1)).0, run(None).0);
}

fn image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn([1, 2, h, w], |_, c, y, x| {
        let v = (seed as f64 * 0.731 + c as f64 * 1.9 + y as f64 * 0.47 + x as f64 * 1.13).sin();
        v * v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_symmetric(a in any::<u64>(), b in any::<u64>(), h in 2usize..7, w in 2usize..7) {
        let (x, y) = (image(a, h, w), image(b, h, w));
        prop_assert_eq!(charb(&x, &y), charb(&y, &x));
        prop_assert!((gdl(&x, &y) - gdl(&y, &x)).abs() <= 1e-12 * gdl(&x, &y));
    }

    #[test]
    fn loss_floor_holds_with_equality_only_at_the_target(a in any::<u64>(), b in any::<u64>(), lambda in 0.0f64..1.0) {
        let cfg = LossConfig { epsilon: EPS, lambda_gdl: lambda };
        let levels = [image(a, 3, 4), image(a ^ 1, 6, 8)];
        let preds = [image(b, 3, 4), image(b ^ 1, 6, 8)];
        let floor: f64 = levels
            .iter()
            .map(|t| (t.numel() as f64 + lambda * gdl_term_count(t.shape()) as f64) * EPS)
            .sum();
        let eval = |p: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let pv: Vec<_> = p.iter().map(|t| g.leaf(t.clone().with_requires_grad(true))).collect();
            let tv: Vec<_> = levels.iter().map(|t| g.constant(t.clone())).collect();
            let loss = total_loss(&mut g, &pv, &tv, &cfg, 1).unwrap().total;
            g.backward(loss).unwrap();
            let finite = pv.iter().all(|&v| g.grad(v).unwrap().iter().all(|x| x.is_finite()));
            (g.value(loss).item(), finite)
        };
        let (at_target, finite_at_target) = eval(&levels);
        prop_assert!((at_target - floor).abs() <= 1e-12 * floor);
        prop_assert!(finite_at_target);
        let (elsewhere, finite) = eval(&preds);
        prop_assert!(finite);
        if a != b {
            prop_assert!(elsewhere > floor);
        }
    }

    #[test]
    fn gdl_ignores_gradient_sign_flips(a in any::<u64>(), b in any::<u64>()) {
        let (x, y) = (image(a, 4, 5), image(b, 4, 5));
        let neg = |t: &Tensor<f64>| Tensor::from_fn(t.shape(), |n, c, i, j| -t.at(n, c, i, j));
        prop_assert!((gdl(&x, &y) - gdl(&neg(&x), &neg(&y))).abs() <= 1e-12 * gdl(&x, &y));
    }
}
