//! Finite-difference verification of every differentiable graph operation,
//! the loss terms and the full network objective.
//!
//! For an operation `y = f(x₁, …, x_k)` and a random cotangent `r`, the
//! reverse pass gives `∇ₓ⟨r, y⟩`. Each input `x_i` is then probed along its
//! own random unit direction `d_i`:
//!
//! ```text
//! analytic  = ⟨∇_{x_i}⟨r, y⟩, d_i⟩
//! φ(t)      = ⟨r, f(…, x_i + t·d_i, …)⟩
//! numeric   = (8·(φ(h) − φ(−h)) − (φ(2h) − φ(−2h))) / 12h
//! rel_error = |analytic − numeric| / max(‖∇_{x_i}‖, |numeric|)
//! ```
//!
//! Normalizing by the gradient norm rather than by `|analytic|` keeps the
//! measure meaningful when a random direction is nearly orthogonal to the
//! gradient (`|analytic| ≤ ‖∇‖` for unit directions).
//!
//! A direction whose stencil moves any leaky-ReLU or `abs` input across
//! zero is replaced by a fresh one, since the function is only piecewise
//! smooth; an instance where no direction stays on one smooth piece is
//! discarded and redrawn.
//!
//! The five-point central stencil keeps the truncation error at `O(h⁴)`,
//! which matters near the Charbonnier minimum where curvature is `1/ε`.
//! The reverse pass runs in the precision under test. The central difference
//! is always evaluated in double precision at exactly the same (rounded)
//! inputs, so in single mode it isolates the error of the `f32` gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::loss::{charbonnier_loss, gdl_loss, total_loss, LossConfig};
use crate::model::{forward_graph, ModelConfig, ModelParams, Scale};
use crate::tensor::{compensated_sum, Graph, Real, Shape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::Single => 1e-3,
            Precision::Double => 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub precision: Precision,
    /// Random instances per operation.
    pub instances: usize,
    pub seed: u64,
    /// Central-difference step along a unit direction.
    pub step: f64,
}

impl GradcheckConfig {
    pub fn new(precision: Precision) -> Self {
        GradcheckConfig {
            precision,
            instances: 20,
            seed: 0,
            step: 1e-6,
        }
    }
}

/// Directions tried per probe before declaring the instance to be on a kink.
const MAX_DIRECTIONS: usize = 8;
const MAX_REJECTED_PER_INSTANCE: usize = 5;

/// Outcome for one operation over all its instances.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    /// Instances drawn but discarded because they sit on a kink.
    pub rejected: usize,
    /// Number of (instance, input) directional checks performed.
    pub probes: usize,
    /// Directions discarded because the stencil crossed a kink.
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub const OPS: [&str; 16] = [
    "conv2d",
    "conv_transpose2d",
    "leaky_relu",
    "add",
    "sub",
    "scale",
    "abs",
    "abs_diff",
    "charbonnier",
    "crop",
    "sum",
    "mean",
    "charbonnier_loss",
    "gdl_loss",
    "total_loss",
    "network_loss",
];

/// Non-tensor parameters of one random instance.
#[derive(Debug, Clone)]
enum Case {
    Conv {
        stride: usize,
        pad: usize,
    },
    ConvT {
        stride: usize,
        pad: usize,
    },
    LeakyRelu(f64),
    Add,
    Sub,
    Scale(f64),
    Abs,
    AbsDiff,
    Charbonnier(f64),
    Crop {
        top: usize,
        left: usize,
        h: usize,
        w: usize,
    },
    Sum,
    Mean,
    CharbonnierLoss(f64),
    /// Inputs: target (constant), prediction.
    GdlLoss(f64),
    /// Inputs: `levels` predictions then `levels` constant targets.
    TotalLoss {
        loss: LossConfig,
        levels: usize,
        batch: usize,
    },
    /// Inputs: parameters, then LR input and targets (constants).
    Network {
        model: ModelConfig,
        loss: LossConfig,
        batch: usize,
    },
}

struct Instance {
    case: Case,
    inputs: Vec<Tensor<f64>>,
    /// Which inputs are probed (the rest are held constant).
    differentiable: Vec<bool>,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| scale * rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn random_shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [
        rng.random_range(1..3),
        rng.random_range(1..4),
        rng.random_range(2..7),
        rng.random_range(2..7),
    ]
}

fn make_instance(op: &str, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let all = |n| vec![true; n];
    let inst = |case, inputs: Vec<Tensor<f64>>| {
        let n = inputs.len();
        Instance {
            case,
            inputs,
            differentiable: all(n),
        }
    };
    let shape = random_shape(rng);
    Ok(match op {
        "conv2d" | "conv_transpose2d" => {
            let (n, cin, cout) = (
                rng.random_range(1..3),
                rng.random_range(1..4),
                rng.random_range(1..4),
            );
            let k = rng.random_range(1..5);
            let stride = rng.random_range(1..3);
            let pad = rng.random_range(0..k.min(2) + 1).min(k - 1);
            let (h, w) = (rng.random_range(k..k + 5), rng.random_range(k..k + 5));
            let x = random_tensor(rng, [n, cin, h, w], 1.0);
            if op == "conv2d" {
                let wt = random_tensor(rng, [cout, cin, k, k], 0.5);
                let b = random_tensor(rng, [1, cout, 1, 1], 0.5);
                inst(Case::Conv { stride, pad }, vec![x, wt, b])
            } else {
                let wt = random_tensor(rng, [cin, cout, k, k], 0.5);
                let b = random_tensor(rng, [1, cout, 1, 1], 0.5);
                inst(Case::ConvT { stride, pad }, vec![x, wt, b])
            }
        }
        "leaky_relu" => inst(
            Case::LeakyRelu(rng.random_range(0.05..0.5)),
            vec![away_from_zero(rng, shape)],
        ),
        "add" | "sub" => {
            let s = random_shape(rng);
            let case = if op == "add" { Case::Add } else { Case::Sub };
            inst(
                case,
                vec![random_tensor(rng, s, 1.0), random_tensor(rng, s, 1.0)],
            )
        }
        "scale" => inst(
            Case::Scale(rng.random_range(-3.0..3.0)),
            vec![random_tensor(rng, shape, 1.0)],
        ),
        "abs" => inst(Case::Abs, vec![away_from_zero(rng, shape)]),
        "abs_diff" => {
            let s = random_shape(rng);
            let a = random_tensor(rng, s, 1.0);
            let gap = away_from_zero(rng, s);
            let b = Tensor::from_fn(s, |n, c, y, x| a.at(n, c, y, x) + gap.at(n, c, y, x));
            inst(Case::AbsDiff, vec![a, b])
        }
        "charbonnier" => inst(
            Case::Charbonnier(10f64.powf(rng.random_range(-3.0..-1.0))),
            vec![random_tensor(rng, shape, 1.0)],
        ),
        "crop" => {
            let s = random_shape(rng);
            let h = rng.random_range(1..=s[2]);
            let w = rng.random_range(1..=s[3]);
            let case = Case::Crop {
                top: rng.random_range(0..=s[2] - h),
                left: rng.random_range(0..=s[3] - w),
                h,
                w,
            };
            inst(case, vec![random_tensor(rng, s, 1.0)])
        }
        "sum" => inst(Case::Sum, vec![random_tensor(rng, shape, 1.0)]),
        "mean" => inst(Case::Mean, vec![random_tensor(rng, shape, 1.0)]),
        "charbonnier_loss" => {
            let s = random_shape(rng);
            let eps = 10f64.powf(rng.random_range(-3.0..-1.0));
            inst(
                Case::CharbonnierLoss(eps),
                vec![random_tensor(rng, s, 1.0), random_tensor(rng, s, 1.0)],
            )
        }
        "gdl_loss" => {
            let s = random_shape(rng);
            let eps = 10f64.powf(rng.random_range(-3.0..-1.0));
            Instance {
                case: Case::GdlLoss(eps),
                inputs: vec![random_tensor(rng, s, 1.0), random_tensor(rng, s, 1.0)],
                differentiable: vec![false, true],
            }
        }
        "total_loss" => {
            let levels = rng.random_range(1..4);
            let batch = rng.random_range(1..3);
            let c = rng.random_range(1..4);
            let side = rng.random_range(2..4);
            let loss = LossConfig {
                epsilon: 1e-3,
                lambda_gdl: [0.0, 0.05, 0.1, 0.5, 1.0][rng.random_range(0..5)],
            };
            let shapes: Vec<[usize; 4]> = (0..levels)
                .map(|l| [batch, c, side << l, side << l])
                .collect();
            let mut inputs: Vec<Tensor<f64>> =
                shapes.iter().map(|&s| random_tensor(rng, s, 1.0)).collect();
            inputs.extend(shapes.iter().map(|&s| random_tensor(rng, s, 1.0)));
            let mut differentiable = vec![true; levels];
            differentiable.extend(vec![false; levels]);
            Instance {
                case: Case::TotalLoss {
                    loss,
                    levels,
                    batch,
                },
                inputs,
                differentiable,
            }
        }
        "network_loss" => {
            let mut model = ModelConfig::new(if rng.random_bool(0.5) {
                Scale::X2
            } else {
                Scale::X4
            });
            model.depth = rng.random_range(1..3);
            model.feature_channels = rng.random_range(2..5);
            let batch = rng.random_range(1..3);
            let side = rng.random_range(3..6);
            let loss = LossConfig {
                epsilon: 1e-3,
                lambda_gdl: [0.0, 0.1, 1.0][rng.random_range(0..3)],
            };
            let params = ModelParams::<f64>::build(model, rng.random())?;
            // Non-zero biases so every parameter sees a generic operating point.
            let mut inputs: Vec<Tensor<f64>> = params
                .iter()
                .map(|(name, t)| {
                    if name.ends_with(".bias") {
                        random_tensor(rng, t.shape(), 0.1)
                    } else {
                        t.clone().with_requires_grad(false)
                    }
                })
                .collect();
            let mut differentiable = vec![true; inputs.len()];
            inputs.push(Tensor::from_fn([batch, 3, side, side], |_, _, _, _| {
                rng.random_range(0.0..1.0)
            }));
            for l in 1..=model.levels() {
                let s = side << l;
                inputs.push(Tensor::from_fn([batch, 3, s, s], |_, _, _, _| {
                    rng.random_range(0.0..1.0)
                }));
            }
            differentiable.resize(inputs.len(), false);
            Instance {
                case: Case::Network { model, loss, batch },
                inputs,
                differentiable,
            }
        }
        other => return Err(Error::invalid(format!("unknown gradcheck op `{other}`"))),
    })
}

/// Records the instance on `graph`; `vars` are the inputs' leaves.
fn build<T: Real>(case: &Case, graph: &mut Graph<T>, vars: &[Var]) -> Result<Var> {
    let x = vars[0];
    Ok(match case {
        Case::Conv { stride, pad } => graph.conv2d(x, vars[1], vars[2], *stride, *pad)?,
        Case::ConvT { stride, pad } => {
            graph.conv_transpose2d(x, vars[1], vars[2], *stride, *pad)?
        }
        Case::LeakyRelu(slope) => graph.leaky_relu(x, T::from_f64(*slope)),
        Case::Add => graph.add(x, vars[1])?,
        Case::Sub => graph.sub(x, vars[1])?,
        Case::Scale(k) => graph.scale(x, T::from_f64(*k)),
        Case::Abs => graph.abs(x),
        Case::AbsDiff => graph.abs_diff(x, vars[1])?,
        Case::Charbonnier(eps) => graph.charbonnier(x, T::from_f64(*eps)),
        Case::Crop { top, left, h, w } => graph.crop(x, *top, *left, *h, *w)?,
        Case::Sum => graph.sum(x),
        Case::Mean => graph.mean(x),
        Case::CharbonnierLoss(eps) => charbonnier_loss(graph, x, vars[1], *eps)?,
        Case::GdlLoss(eps) => gdl_loss(graph, x, vars[1], *eps)?,
        Case::TotalLoss {
            loss,
            levels,
            batch,
        } => total_loss(graph, &vars[..*levels], &vars[*levels..], loss, *batch)?.total,
        Case::Network { model, loss, batch } => {
            let n_params = model.parameter_table().len();
            let bound = crate::model::BoundParams::from_vars(vars[..n_params].to_vec());
            let input = vars[n_params];
            let outputs = forward_graph(model, graph, &bound, input, model.levels())?;
            total_loss(graph, &outputs.images, &vars[n_params + 1..], loss, *batch)?.total
        }
    })
}

/// `⟨r, f(inputs)⟩` in double precision, with the branch signature of the
/// evaluation.
fn project(case: &Case, inputs: &[Tensor<f64>], cotangent: &[f64]) -> Result<(f64, Vec<i8>)> {
    let mut graph = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.constant(t.clone())).collect();
    let out = build(case, &mut graph, &vars)?;
    let value = compensated_sum(
        graph
            .value(out)
            .data()
            .iter()
            .zip(cotangent)
            .map(|(y, r)| y * r),
    );
    Ok((value, graph.branch_signature()))
}

/// Gradients of `⟨r, f⟩` for each probed input, computed in precision `T`.
fn analytic<T: Real>(inst: &Instance, cotangent: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
    let mut graph = Graph::<T>::new();
    let vars: Vec<Var> = inst
        .inputs
        .iter()
        .zip(&inst.differentiable)
        .map(|(t, &d)| graph.leaf(t.cast::<T>().with_requires_grad(d)))
        .collect();
    let out = build(&inst.case, &mut graph, &vars)?;
    let seed: Vec<T> = cotangent.iter().map(|&v| T::from_f64(v)).collect();
    graph.backward_with(out, &seed)?;
    Ok(vars
        .iter()
        .zip(&inst.differentiable)
        .map(|(&v, &d)| {
            if !d {
                return None;
            }
            let n = graph.value(v).numel();
            Some(match graph.grad(v) {
                Some(g) => g.iter().map(|x| x.as_f64()).collect(),
                None => vec![0.0; n],
            })
        })
        .collect())
}

fn unit_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d.into_iter().map(|v| v / norm).collect()
}

struct InstanceResult {
    worst: f64,
    probes: usize,
    redrawn: usize,
}

/// Probes every differentiable input of `inst` once. `None` if some input
/// admits no kink-free stencil, i.e. the instance sits on a kink.
fn probe_instance(
    inst: &Instance,
    precision: Precision,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<InstanceResult>> {
    let (out_len, base_signature) = {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = inst.inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&inst.case, &mut g, &vars)?;
        (g.value(out).numel(), g.branch_signature())
    };
    let cotangent: Vec<f64> = if out_len == 1 {
        vec![1.0]
    } else {
        (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    let grads = match precision {
        Precision::Single => analytic::<f32>(inst, &cotangent)?,
        Precision::Double => analytic::<f64>(inst, &cotangent)?,
    };
    let mut result = InstanceResult {
        worst: 0.0,
        probes: 0,
        redrawn: 0,
    };
    for (i, grad) in grads.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let mut shifted = inst.inputs.clone();
        let base = inst.inputs[i].data();
        let mut accepted = None;
        for _ in 0..MAX_DIRECTIONS {
            let dir = unit_direction(rng, grad.len());
            let mut at = |t: f64| -> Result<(f64, Vec<i8>)> {
                let data: Vec<f64> = base.iter().zip(&dir).map(|(x, d)| x + t * h * d).collect();
                shifted[i] = Tensor::from_vec(inst.inputs[i].shape(), data)?;
                project(&inst.case, &shifted, &cotangent)
            };
            let evals = [at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?];
            if evals.iter().all(|(_, sig)| *sig == base_signature) {
                accepted = Some((dir, evals.map(|e| e.0)));
                break;
            }
            // The stencil straddles a kink, where the difference quotient
            // means nothing; try a fresh direction.
            result.redrawn += 1;
        }
        let Some((dir, [p1, m1, p2, m2])) = accepted else {
            return Ok(None);
        };
        let a: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let n = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = norm.max(n.abs());
        let err = if scale == 0.0 {
            0.0
        } else {
            (a - n).abs() / scale
        };
        result.worst = result.worst.max(err);
        result.probes += 1;
    }
    Ok(Some(result))
}

/// Checks one operation over `config.instances` random instances. Instances
/// lying on a kink (see [`OpCheck::rejected`]) are replaced by new draws.
pub fn check_op(op: &'static str, config: &GradcheckConfig) -> Result<OpCheck> {
    let index = OPS
        .iter()
        .position(|o| *o == op)
        .ok_or_else(|| Error::invalid(format!("unknown gradcheck op `{op}`")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let mut check = OpCheck {
        op,
        instances: 0,
        rejected: 0,
        probes: 0,
        redrawn: 0,
        max_rel_error: 0.0,
        tolerance: config.precision.tolerance(),
    };
    while check.instances < config.instances {
        if check.rejected > MAX_REJECTED_PER_INSTANCE * config.instances.max(1) {
            return Err(Error::invalid(format!(
                "{op}: could not draw instances away from kinks"
            )));
        }
        let mut inst = make_instance(op, &mut rng)?;
        if config.precision == Precision::Single {
            // Probe the exact point the single-precision pass sees.
            inst.inputs = inst
                .inputs
                .iter()
                .map(|t| t.cast::<f32>().cast::<f64>())
                .collect();
        }
        match probe_instance(&inst, config.precision, config.step, &mut rng)? {
            Some(r) => {
                check.instances += 1;
                check.probes += r.probes;
                check.redrawn += r.redrawn;
                check.max_rel_error = check.max_rel_error.max(r.worst);
            }
            None => check.rejected += 1,
        }
    }
    Ok(check)
}

/// Runs [`check_op`] for every entry of [`OPS`].
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<Vec<OpCheck>> {
    OPS.iter().map(|op| check_op(op, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementary_ops_pass_in_double() {
        let cfg = GradcheckConfig {
            instances: 3,
            ..GradcheckConfig::new(Precision::Double)
        };
        for op in ["conv2d", "charbonnier", "crop", "gdl_loss"] {
            let r = check_op(op, &cfg).unwrap();
            assert!(r.passed(), "{r:?}");
            assert!(r.probes >= 3);
        }
    }

    #[test]
    fn abs_kink_uses_the_symmetric_subgradient() {
        let inst = Instance {
            case: Case::Abs,
            inputs: vec![Tensor::from_vec([1, 1, 1, 1], vec![0.0]).unwrap()],
            differentiable: vec![true],
        };
        let g = analytic::<f64>(&inst, &[1.0]).unwrap();
        let n = (project(&inst.case, &[Tensor::scalar(1e-6)], &[1.0])
            .unwrap()
            .0
            - project(&inst.case, &[Tensor::scalar(-1e-6)], &[1.0])
                .unwrap()
                .0)
            / 2e-6;
        assert_eq!(g[0].as_ref().unwrap()[0], 0.0);
        assert_eq!(n, 0.0);
        assert!(check_op("no_such_op", &GradcheckConfig::new(Precision::Double)).is_err());
    }
}
