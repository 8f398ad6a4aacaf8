//! Layer-table model descriptions and the convolutional model built from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    None,
}

/// How layer outputs are wired into later layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    FeedForward,
    UNet,
    DenseNet,
    ResNet,
}

/// How a skip source is merged into its destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipKind {
    /// Prepended to the destination layer's input along the channel axis.
    Concat,
    /// Added to the destination layer's activated output.
    Add,
}

/// Output of layer `from` feeds layer `to` (both 1-based, `from < to`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Skip {
    pub from: usize,
    pub to: usize,
    pub kind: SkipKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(kernel: &[usize], in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        Self {
            kernel: kernel.to_vec(),
            in_channels,
            out_channels,
            activation,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.in_channels * self.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend(&self.kernel);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub connectivity: Connectivity,
    pub skips: Vec<Skip>,
}

impl ModelSpec {
    /// Checks kernel ranks, skip indices and channel bookkeeping.
    pub fn validate(&self) -> Result<(), NnError> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| NnError::Spec("model has no layers".into()))?;
        let rank = first.kernel.len();
        if !(1..=3).contains(&rank) {
            return Err(NnError::Spec(format!("unsupported kernel rank {rank}")));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel.len() != rank {
                return Err(NnError::Spec(format!("layer {} has kernel rank {}, expected {rank}", i + 1, l.kernel.len())));
            }
            if l.kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
                return Err(NnError::Spec(format!("layer {} kernel {:?} must be odd", i + 1, l.kernel)));
            }
            if l.in_channels == 0 || l.out_channels == 0 {
                return Err(NnError::Spec(format!("layer {} has zero channels", i + 1)));
            }
        }
        let n = self.layers.len();
        for s in &self.skips {
            if s.from == 0 || s.from >= s.to || s.to > n {
                return Err(NnError::Spec(format!("invalid skip {} -> {}", s.from, s.to)));
            }
        }
        for j in 2..=n {
            let layer = &self.layers[j - 1];
            let mut expected = self.layers[j - 2].out_channels;
            for s in self.skips.iter().filter(|s| s.to == j) {
                match s.kind {
                    SkipKind::Concat => expected += self.layers[s.from - 1].out_channels,
                    SkipKind::Add => {
                        if self.layers[s.from - 1].out_channels != layer.out_channels {
                            return Err(NnError::Spec(format!(
                                "additive skip {} -> {j} joins {} and {} channels",
                                s.from,
                                self.layers[s.from - 1].out_channels,
                                layer.out_channels
                            )));
                        }
                    }
                }
            }
            if expected != layer.in_channels {
                return Err(NnError::Spec(format!(
                    "layer {j} expects {} input channels but receives {expected}",
                    layer.in_channels
                )));
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    /// Number of spatial axes the kernels act on.
    pub fn spatial_rank(&self) -> usize {
        self.layers[0].kernel.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    fn concat_sources(&self, to: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .skips
            .iter()
            .filter(|s| s.to == to && s.kind == SkipKind::Concat)
            .map(|s| s.from)
            .collect();
        v.sort_unstable();
        v
    }
}

/// Multiply-accumulate count of one model invocation over a grid with the
/// given spatial extents ("same" padding keeps every layer at that size).
pub fn count_macs(spec: &ModelSpec, extents: &[usize]) -> u64 {
    let positions: u64 = extents.iter().map(|&e| e as u64).product();
    spec.layers
        .iter()
        .map(|l| l.weight_count() as u64 * positions)
        .sum()
}

/// Seven-layer 2D U-net: frequency × time kernels, concatenating skips
/// 1→7, 2→6 and 3→5.
pub fn build_2du() -> ModelSpec {
    use Activation::*;
    let layers = vec![
        LayerSpec::new(&[7, 5], 2, 10, Gelu),
        LayerSpec::new(&[7, 5], 10, 10, Gelu),
        LayerSpec::new(&[7, 5], 10, 10, Gelu),
        LayerSpec::new(&[7, 5], 10, 10, Gelu),
        LayerSpec::new(&[5, 5], 20, 20, Gelu),
        LayerSpec::new(&[5, 5], 30, 5, Gelu),
        LayerSpec::new(&[3, 3], 15, 2, None),
    ];
    let skips = (1..=3)
        .map(|i| Skip {
            from: i,
            to: 8 - i,
            kind: SkipKind::Concat,
        })
        .collect();
    ModelSpec {
        layers,
        connectivity: Connectivity::UNet,
        skips,
    }
}

/// Seven-layer serial 3D network. Spatial axes are ordered Rx antenna ×
/// frequency × time so the two long axes stay innermost.
pub fn build_3dff() -> ModelSpec {
    use Activation::*;
    let layers = vec![
        LayerSpec::new(&[5, 7, 5], 2, 10, Gelu),
        LayerSpec::new(&[5, 7, 5], 10, 10, Gelu),
        LayerSpec::new(&[5, 7, 5], 10, 10, Gelu),
        LayerSpec::new(&[5, 7, 5], 10, 10, Gelu),
        LayerSpec::new(&[5, 5, 5], 10, 20, Gelu),
        LayerSpec::new(&[5, 5, 5], 20, 5, Gelu),
        LayerSpec::new(&[3, 3, 3], 5, 2, None),
    ];
    ModelSpec {
        layers,
        connectivity: Connectivity::FeedForward,
        skips: Vec::new(),
    }
}

/// Weights and bias of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: LayerSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Graph handles for a model's parameters, in layer order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    layers: Vec<ConvLayer<T>>,
    /// Spatial extents the model was trained on; empty when unconstrained.
    pub trained_extent: Vec<usize>,
}

impl<T: Scalar> Model<T> {
    /// Uniform fan-in initialization, `U(±√(6/fan_in))`, zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let fan_in = l.kernel.iter().product::<usize>() * l.in_channels;
                let bound = (6.0 / fan_in as f64).sqrt();
                let w = (0..l.weight_count())
                    .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                    .collect();
                ConvLayer {
                    spec: l.clone(),
                    weight: Tensor::new(l.weight_shape(), w).expect("weight shape"),
                    bias: Tensor::zeros(vec![l.out_channels]),
                }
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            trained_extent: Vec::new(),
        })
    }

    /// Builds a model from explicit parameters (weights then bias per layer).
    pub fn from_layers(spec: ModelSpec, layers: Vec<ConvLayer<T>>) -> Result<Self, NnError> {
        spec.validate()?;
        if layers.len() != spec.layers.len()
            || layers.iter().zip(&spec.layers).any(|(l, s)| {
                &l.spec != s
                    || l.weight.shape() != s.weight_shape().as_slice()
                    || l.bias.numel() != s.out_channels
            })
        {
            return Err(NnError::Spec("parameters do not match the layer table".into()));
        }
        Ok(Self {
            spec,
            layers,
            trained_extent: Vec::new(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Parameter slices in checkpoint order: per layer, weights then bias.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.data()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()])
            .collect()
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    spec: l.spec.clone(),
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            trained_extent: self.trained_extent.clone(),
        }
    }

    /// Puts the parameters on the tape as leaves.
    pub fn param_vars(&self, g: &mut Graph<T>) -> ParamVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(g.leaf(l.weight.clone()));
            biases.push(g.leaf(l.bias.clone()));
        }
        ParamVars { weights, biases }
    }

    /// Records a forward pass of `input` (`[C, ...spatial]`) on `g`.
    pub fn forward(&self, g: &mut Graph<T>, params: &ParamVars, input: Var) -> Result<Var, NnError> {
        let shape = g.value(input).shape();
        if shape.len() != self.spec.spatial_rank() + 1 {
            return Err(NnError::Shape(format!(
                "model expects {} spatial axes, input shape is {:?}",
                self.spec.spatial_rank(),
                shape
            )));
        }
        let mut outputs: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut prev = input;
        for (idx, layer) in self.layers.iter().enumerate() {
            let j = idx + 1;
            let sources = self.spec.concat_sources(j);
            let x = if sources.is_empty() {
                prev
            } else {
                let mut parts: Vec<Var> = sources.iter().map(|&s| outputs[s - 1]).collect();
                parts.push(prev);
                g.concat(&parts)?
            };
            let mut y = g.conv(x, params.weights[idx], params.biases[idx])?;
            if layer.spec.activation == Activation::Gelu {
                y = g.gelu(y)?;
            }
            for s in self.spec.skips.iter().filter(|s| s.to == j && s.kind == SkipKind::Add) {
                y = g.add(y, outputs[s.from - 1])?;
            }
            outputs.push(y);
            prev = y;
        }
        Ok(prev)
    }

    /// Forward pass without keeping gradients around.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = Graph::new();
        let params = self.param_vars(&mut g);
        let x = g.leaf(input.clone());
        let y = self.forward(&mut g, &params, x)?;
        Ok(g.value(y).clone())
    }
}
