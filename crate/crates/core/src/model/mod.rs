//! The Laplacian-pyramid super-resolution network.
//!
//! Two branches run side by side. The feature branch embeds the LR image,
//! then at every level applies `depth` 3×3 conv + leaky-ReLU layers and a
//! learned ×2 transposed conv. The reconstruction branch upsamples the
//! current image ×2 and adds the residual predicted from the level's
//! upsampled features. Each level's sum is one pyramid output.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::{ByteReader, RecordCodec};

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{init_he_gaussian, Graph, Real, Tensor, Var};

const UPSAMPLE_KERNEL: usize = 4;
const UPSAMPLE_STRIDE: usize = 2;
const UPSAMPLE_PADDING: usize = 1;
const CONV_KERNEL: usize = 3;

/// Upscaling factor, one of 2, 4 or 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scale(u32);

impl Scale {
    pub const X2: Scale = Scale(2);
    pub const X4: Scale = Scale(4);
    pub const X8: Scale = Scale(8);

    pub fn new(factor: u32) -> Result<Self> {
        match factor {
            2 | 4 | 8 => Ok(Scale(factor)),
            other => Err(Error::UnsupportedScale(other)),
        }
    }

    pub fn factor(self) -> u32 {
        self.0
    }

    /// Number of ×2 pyramid levels, `log2(factor)`.
    pub fn levels(self) -> usize {
        self.0.trailing_zeros() as usize
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub scale: Scale,
    /// 3×3 conv layers per level.
    pub depth: usize,
    pub feature_channels: usize,
    pub image_channels: usize,
    pub leaky_slope: f64,
}

impl ModelConfig {
    pub fn new(scale: Scale) -> Self {
        ModelConfig {
            scale,
            depth: 10,
            feature_channels: 64,
            image_channels: 3,
            leaky_slope: 0.2,
        }
    }

    pub fn levels(&self) -> usize {
        self.scale.levels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("model depth must be at least 1"));
        }
        if self.feature_channels == 0 || self.image_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid(format!(
                "leaky slope must be in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn parameter_table(&self) -> Vec<(String, [usize; 4])> {
        let (f, c, k, u) = (
            self.feature_channels,
            self.image_channels,
            CONV_KERNEL,
            UPSAMPLE_KERNEL,
        );
        let mut table = Vec::new();
        let mut push = |name: String, weight: [usize; 4], out: usize| {
            table.push((format!("{name}.weight"), weight));
            table.push((format!("{name}.bias"), [1, out, 1, 1]));
        };
        push("embed".into(), [f, c, k, k], f);
        for level in 1..=self.levels() {
            for i in 1..=self.depth {
                push(format!("level{level}.conv{i}"), [f, f, k, k], f);
            }
            push(format!("level{level}.feature_up"), [f, f, u, u], f);
            push(format!("level{level}.residual"), [c, f, k, k], c);
            push(format!("level{level}.image_up"), [c, c, u, u], c);
        }
        table
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Conv,
    Upsample,
}

fn role_of(name: &str) -> Role {
    if name.contains("_up.") {
        Role::Upsample
    } else {
        Role::Conv
    }
}

/// Learnable tensors of one network, named and in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// He-normal 3×3 convs and bilinear (channel-diagonal) transposed convs,
    /// all biases zero. Each weight draws from its own seed derived from
    /// `seed` and its position.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (i, (name, shape)) in config.parameter_table().into_iter().enumerate() {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                match role_of(&name) {
                    Role::Conv => init_he_gaussian(
                        shape,
                        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64,
                    )?,
                    Role::Upsample => {
                        crate::tensor::init::bilinear_per_channel(shape[0], shape[2])?
                    }
                }
            };
            names.push(name);
            tensors.push(tensor.with_requires_grad(true));
        }
        Ok(ModelParams {
            config,
            names,
            tensors,
        })
    }

    /// Assembles parameters from `(name, tensor)` pairs that must match the
    /// configuration's parameter table exactly.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let table = config.parameter_table();
        if table.len() != named.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                table.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for ((want_name, want_shape), (name, tensor)) in table.into_iter().zip(named) {
            if want_name != name || tensor.shape().0 != want_shape {
                return Err(Error::invalid(format!(
                    "parameter `{name}` {:?} does not match expected `{want_name}` {want_shape:?}",
                    tensor.shape()
                )));
            }
            names.push(name);
            tensors.push(tensor.with_requires_grad(true));
        }
        Ok(ModelParams {
            config,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&mut self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Registers every parameter as a leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph<T>, requires_grad: bool) -> BoundParams {
        BoundParams(
            self.tensors
                .iter()
                .map(|t| graph.leaf(t.clone().with_requires_grad(requires_grad)))
                .collect(),
        )
    }

    /// Moves the gradients computed by `graph.backward` onto the parameters.
    pub fn collect_grads(&mut self, graph: &mut Graph<T>, bound: &BoundParams) -> Result<()> {
        for (tensor, &var) in self.tensors.iter_mut().zip(&bound.0) {
            if let Some(g) = graph.take_grad(var) {
                tensor.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }
}

/// Graph handles of a [`ModelParams`], in parameter order.
#[derive(Debug, Clone)]
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    pub(crate) fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Graph handles of the per-level outputs, finest last.
#[derive(Debug, Clone)]
pub struct PyramidVars {
    pub images: Vec<Var>,
}

/// Materialized pyramid outputs; level `s` (1-based) is `images[s - 1]` at
/// `2^s` times the input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidOutput<T: Real = f32> {
    pub images: Vec<Tensor<T>>,
}

/// Records the network on `graph` up to and including level `levels`.
pub fn forward_graph<T: Real>(
    config: &ModelConfig,
    graph: &mut Graph<T>,
    params: &BoundParams,
    input: Var,
    levels: usize,
) -> Result<PyramidVars> {
    let shape = graph.value(input).shape();
    if shape.c() != config.image_channels {
        return Err(Error::ShapeMismatch {
            op: "forward",
            dim: "image channels",
            expected: config.image_channels,
            found: shape.c(),
        });
    }
    if levels == 0 || levels > config.levels() {
        return Err(Error::invalid(format!(
            "level count {levels} outside 1..={}",
            config.levels()
        )));
    }
    let slope = T::from_f64(config.leaky_slope);
    let mut next = params.0.chunks_exact(2).map(|p| (p[0], p[1]));
    let mut take = || {
        next.next()
            .expect("parameter table matches the configuration")
    };

    let (w, b) = take();
    let embedded = graph.conv2d(input, w, b, 1, 1)?;
    let mut features = graph.leaky_relu(embedded, slope);
    let mut image = input;
    let mut images = Vec::with_capacity(levels);
    for _ in 0..levels {
        for _ in 0..config.depth {
            let (w, b) = take();
            let conv = graph.conv2d(features, w, b, 1, 1)?;
            features = graph.leaky_relu(conv, slope);
        }
        let (w, b) = take();
        let up = graph.conv_transpose2d(features, w, b, UPSAMPLE_STRIDE, UPSAMPLE_PADDING)?;
        features = graph.leaky_relu(up, slope);

        let (w, b) = take();
        let residual = graph.conv2d(features, w, b, 1, 1)?;

        let (w, b) = take();
        let upsampled = graph.conv_transpose2d(image, w, b, UPSAMPLE_STRIDE, UPSAMPLE_PADDING)?;
        image = graph.add(upsampled, residual)?;
        images.push(image);
    }
    Ok(PyramidVars { images })
}

impl<T: Real> ModelParams<T> {
    /// All pyramid levels for `lr_image` (no gradients recorded).
    pub fn forward(&self, lr_image: &Tensor<T>) -> Result<PyramidOutput<T>> {
        self.run(lr_image, self.config.levels())
    }

    /// Output at `requested_scale`; finer levels are not computed.
    pub fn infer_at_scale(&self, lr_image: &Tensor<T>, requested_scale: u32) -> Result<Tensor<T>> {
        let scale = Scale::new(requested_scale)?;
        if scale > self.config.scale {
            return Err(Error::ScaleExceedsModel {
                requested: requested_scale,
                model: self.config.scale.factor(),
            });
        }
        let mut out = self.run(lr_image, scale.levels())?;
        Ok(out.images.pop().expect("at least one level"))
    }

    fn run(&self, lr_image: &Tensor<T>, levels: usize) -> Result<PyramidOutput<T>> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, false);
        let x = graph.constant(lr_image.clone());
        let vars = forward_graph(&self.config, &mut graph, &bound, x, levels)?;
        Ok(PyramidOutput {
            images: vars
                .images
                .iter()
                .map(|&v| graph.value(v).clone())
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scale: Scale) -> ModelConfig {
        ModelConfig {
            scale,
            depth: 2,
            feature_channels: 4,
            image_channels: 3,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn scale_validation() {
        assert_eq!(Scale::new(2).unwrap().levels(), 1);
        assert_eq!(Scale::new(4).unwrap().levels(), 2);
        assert_eq!(Scale::new(8).unwrap().levels(), 3);
        for bad in [0, 1, 3, 6, 16] {
            assert!(matches!(Scale::new(bad), Err(Error::UnsupportedScale(_))));
        }
    }

    #[test]
    fn parameter_count_for_default_x8() {
        let cfg = ModelConfig::new(Scale::X8);
        let table = cfg.parameter_table();
        assert_eq!(table.len(), 2 * 40);
        assert_eq!(table.len(), 2 * (1 + 3 * (10 + 3)));
    }

    #[test]
    fn build_initializes_per_role() {
        let p = ModelParams::<f64>::build(small(Scale::X2), 5).unwrap();
        assert_eq!(p.len(), 2 * (1 + 2 + 3));
        let up = p.get("level1.image_up.weight").unwrap();
        assert_eq!(up.at(0, 0, 1, 1), 0.75 * 0.75);
        assert_eq!(up.at(0, 1, 1, 1), 0.0);
        assert!(p
            .get("level1.residual.bias")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let conv = p.get("level1.conv1.weight").unwrap();
        assert!(conv.data().iter().any(|&v| v != 0.0));
        let names: std::collections::HashSet<_> = p.names().collect();
        assert_eq!(names.len(), p.len());
    }

    #[test]
    fn build_rejects_bad_config() {
        let mut cfg = small(Scale::X2);
        cfg.depth = 0;
        assert!(ModelParams::<f32>::build(cfg, 0).is_err());
        cfg.depth = 1;
        cfg.leaky_slope = 1.5;
        assert!(ModelParams::<f32>::build(cfg, 0).is_err());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let p = ModelParams::<f32>::build(small(Scale::X2), 5).unwrap();
        let x = Tensor::zeros([1, 1, 8, 8]);
        assert!(matches!(p.forward(&x), Err(Error::ShapeMismatch { .. })));
    }
}
