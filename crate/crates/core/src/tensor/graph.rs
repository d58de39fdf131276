use super::kernels::{self, ConvGrads};
use super::{compensated_sum, Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T: Real> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Abs(Var),
    AbsDiff(Var, Var),
    Charbonnier {
        x: Var,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Sum(Var),
    /// Sum over the elements of both operands, rounded once.
    SumPair(Var, Var),
    Mean(Var),
}

impl<T: Real> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => vec![x, w, b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::AbsDiff(a, b) | Op::SumPair(a, b) => vec![a, b],
            Op::LeakyRelu { x, .. }
            | Op::Scale(x, _)
            | Op::Abs(x)
            | Op::Charbonnier { x, .. }
            | Op::Crop { x, .. }
            | Op::Sum(x)
            | Op::Mean(x) => vec![x],
        }
    }
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recorded forward computation.
///
/// Nodes are appended in execution order, so the node list is always a
/// topological order. [`Graph::backward`] walks it once in reverse and leaves
/// gradients on the leaves that require them.
#[derive(Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf. Its `requires_grad` flag decides whether it receives
    /// a gradient in [`Graph::backward`].
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        tensor.clear_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient left on `v` by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves the gradient of `v` out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_vec(src.shape(), data).expect("same shape");
        let needs = self.any_needs_grad(&[x]);
        self.push(out, op, needs)
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        self.shape(a).expect_eq(&self.shape(b), name)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        let needs = self.any_needs_grad(&[a, b]);
        Ok(self.push(out, op, needs))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let needs = self.any_needs_grad(&[x, w, b]);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            needs,
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let out =
            kernels::conv_transpose2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let needs = self.any_needs_grad(&[x, w, b]);
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            needs,
        ))
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.map(x, Op::LeakyRelu { x, slope }, |v| {
            if v >= T::zero() {
                v
            } else {
                slope * v
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        self.map(x, Op::Scale(x, k), |v| v * k)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, Op::Abs(x), |v| v.abs())
    }

    /// `|a − b|`.
    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::AbsDiff(a, b), "abs_diff", |x, y| (x - y).abs())
    }

    /// Elementwise Charbonnier penalty `sqrt(x² + ε²)`.
    pub fn charbonnier(&mut self, x: Var, eps: T) -> Var {
        let eps2 = eps * eps;
        self.map(x, Op::Charbonnier { x }, |v| (v * v + eps2).sqrt())
    }

    /// Spatial window `[top, top+height) × [left, left+width)` of every plane.
    pub fn crop(
        &mut self,
        x: Var,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let s = self.shape(x);
        if top + height > s.h() || left + width > s.w() {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {s:?}"
            )));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(s.n() * s.c() * height * width);
        for plane in src.data().chunks(s.plane_len()) {
            for y in top..top + height {
                data.extend_from_slice(&plane[y * s.w() + left..y * s.w() + left + width]);
            }
        }
        let out = Tensor::from_vec([s.n(), s.c(), height, width], data)?;
        let needs = self.any_needs_grad(&[x]);
        Ok(self.push(out, Op::Crop { x, top, left }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = compensated_sum(self.value(x).data().iter().copied());
        let needs = self.any_needs_grad(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    /// Sum of every element of `a` and `b` as one reduction, so the result
    /// is rounded once rather than after each partial sum.
    pub fn sum_pair(&mut self, a: Var, b: Var) -> Var {
        let total = compensated_sum(
            self.value(a)
                .data()
                .iter()
                .chain(self.value(b).data())
                .copied(),
        );
        let needs = self.any_needs_grad(&[a, b]);
        self.push(Tensor::scalar(total), Op::SumPair(a, b), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let n = T::from_f64(src.numel() as f64);
        let total = compensated_sum(src.data().iter().copied());
        let needs = self.any_needs_grad(&[x]);
        self.push(Tensor::scalar(total / n), Op::Mean(x), needs)
    }

    /// Reverse-mode sweep from the scalar `loss`.
    ///
    /// Gradients of every leaf that requires one are left on the leaf
    /// (accumulated over all its uses). The graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss);
        if !loss_shape.is_scalar() {
            if self.consumed {
                return Err(Error::GraphConsumed);
            }
            return Err(Error::NotScalar(loss_shape.0));
        }
        self.backward_with(loss, &[T::one()])
    }

    /// Vector-Jacobian product: like [`Graph::backward`] but starting from an
    /// arbitrary upstream gradient `seed` for `output`.
    pub fn backward_with(&mut self, output: Var, seed: &[T]) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let numel = self.shape(output).numel();
        if seed.len() != numel {
            return Err(Error::invalid(format!(
                "backward seed has {} values, output has {numel}",
                seed.len()
            )));
        }
        self.consumed = true;
        let loss = output;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        grads[loss.0] = Some(seed.to_vec());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g)?;
                continue;
            }
            for (input, delta) in self.local_grads(i, &op, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, &d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_grads(&self, i: usize, op: &Op<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let out = &self.nodes[i].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match *op {
            Op::Leaf => vec![],
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            }
            | Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let need = [needs(x), needs(w), needs(b)];
                let backward = if matches!(op, Op::Conv2d { .. }) {
                    kernels::conv2d_backward
                } else {
                    kernels::conv_transpose2d_backward
                };
                let ConvGrads {
                    input,
                    weight,
                    bias,
                } = backward(self.value(x), self.value(w), g, stride, pad, need);
                [(x, input), (w, weight), (b, bias)]
                    .into_iter()
                    .filter_map(|(v, d)| d.map(|d| (v, d)))
                    .collect()
            }
            Op::LeakyRelu { x, slope } => {
                let d = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v >= T::zero() { gi } else { gi * slope })
                    .collect();
                vec![(x, d)]
            }
            Op::Add(a, b) => vec![(a, g.to_vec()), (b, g.to_vec())],
            Op::Sub(a, b) => vec![(a, g.to_vec()), (b, g.iter().map(|&v| -v).collect())],
            Op::Scale(x, k) => vec![(x, g.iter().map(|&v| v * k).collect())],
            Op::Abs(x) => {
                let d = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| gi * sign(v))
                    .collect();
                vec![(x, d)]
            }
            Op::AbsDiff(a, b) => {
                let s: Vec<T> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .zip(g)
                    .map(|((&x, &y), &gi)| gi * sign(x - y))
                    .collect();
                let neg = s.iter().map(|&v| -v).collect();
                vec![(a, s), (b, neg)]
            }
            Op::Charbonnier { x, .. } => {
                // d/dx sqrt(x² + ε²) = x / sqrt(x² + ε²); the output is the denominator.
                let d = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(g)
                    .map(|((&v, &r), &gi)| gi * v / r)
                    .collect();
                vec![(x, d)]
            }
            Op::Crop { x, top, left } => {
                let src = self.shape(x);
                let cs = out.shape();
                let mut d = vec![T::zero(); src.numel()];
                for (dst, gp) in d.chunks_mut(src.plane_len()).zip(g.chunks(cs.plane_len())) {
                    for y in 0..cs.h() {
                        let row = (top + y) * src.w() + left;
                        dst[row..row + cs.w()].copy_from_slice(&gp[y * cs.w()..(y + 1) * cs.w()]);
                    }
                }
                vec![(x, d)]
            }
            Op::Sum(x) => vec![(x, vec![g[0]; self.value(x).numel()])],
            Op::SumPair(a, b) => vec![
                (a, vec![g[0]; self.value(a).numel()]),
                (b, vec![g[0]; self.value(b).numel()]),
            ],
            Op::Mean(x) => {
                let n = self.value(x).numel();
                vec![(x, vec![g[0] / T::from_f64(n as f64); n])]
            }
        }
    }

    /// Which side of its kink every non-smooth element sits on (leaky-ReLU and
    /// `abs` inputs, `abs_diff` differences). Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> Vec<i8> {
        let mut out = Vec::new();
        let as_i8 = |v: T| sign(v).as_f64() as i8;
        for node in &self.nodes {
            match node.op {
                Op::LeakyRelu { x, .. } | Op::Abs(x) => {
                    out.extend(self.value(x).data().iter().map(|&v| as_i8(v)))
                }
                Op::AbsDiff(a, b) => out.extend(
                    self.value(a)
                        .data()
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(&p, &q)| as_i8(p - q)),
                ),
                _ => {}
            }
        }
        out
    }

    /// Debug check that every node's inputs precede it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.op.inputs().iter().all(|v| v.0 < i))
    }
}
