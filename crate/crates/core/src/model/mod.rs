//! Residual network: stem convolution, residual blocks, global average
//! pooling and a two-way dense head.
//!
//! Each residual block runs three serial ELU-activated convolutions next to a
//! single activation-free shortcut convolution; the two paths are added and
//! passed through ReLU. The first serial convolution and the shortcut use
//! stride 2, everything else stride 1, all with "same" padding.

mod summary;

pub use summary::{summarize, LayerRow, LayerSummary};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imageproc::{MultiChannelImage, CHANNELS};
use crate::tensor::kernels::softmax_rows;
use crate::tensor::{Conv2dSpec, Element, Fragment, Tape, Tensor, TensorError, Var};

/// Class index of IDC-negative patches.
pub const CLASS_NORMAL: usize = 0;
/// Class index of IDC-positive patches.
pub const CLASS_AFFECTED: usize = 1;

pub const MIN_BLOCKS: usize = 1;
pub const MAX_BLOCKS: usize = 5;
pub const MIN_KERNEL: usize = 2;
pub const MAX_KERNEL: usize = 7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {field} {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("input has {got} channels, the network expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("expected {expected} parameter tensors, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Kernel size used by the shortcut convolution of each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ShortcutKernel {
    /// Same kernel size as the serial convolutions.
    #[default]
    Same,
    /// 1×1 projection.
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_residual_blocks: usize,
    pub kernel_size: usize,
    pub stage_widths: Vec<usize>,
    pub stem_width: usize,
    pub num_classes: usize,
    pub elu_alpha: f64,
    #[serde(default)]
    pub shortcut_kernel: ShortcutKernel,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_residual_blocks: 4,
            kernel_size: 4,
            stage_widths: default_widths(4),
            stem_width: 32,
            num_classes: 2,
            elu_alpha: 1.0,
            shortcut_kernel: ShortcutKernel::Same,
        }
    }
}

/// `[32, 64, 128, ...]`, one width per block.
pub fn default_widths(blocks: usize) -> Vec<usize> {
    (0..blocks).map(|i| 32 << i).collect()
}

impl ModelConfig {
    /// Copy with a different depth and kernel; widths are truncated, or
    /// extended by doubling the last width.
    pub fn with_shape(&self, blocks: usize, kernel_size: usize) -> Self {
        let mut widths = self.stage_widths.clone();
        widths.truncate(blocks);
        while widths.len() < blocks {
            let next = widths.last().map_or(self.stem_width, |w| w * 2);
            widths.push(next);
        }
        Self {
            num_residual_blocks: blocks,
            kernel_size,
            stage_widths: widths,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |field, reason: String| Err(ModelError::InvalidConfig { field, reason });
        if !(MIN_BLOCKS..=MAX_BLOCKS).contains(&self.num_residual_blocks) {
            return invalid(
                "num_residual_blocks",
                format!(
                    "must lie in [{MIN_BLOCKS}, {MAX_BLOCKS}], got {}",
                    self.num_residual_blocks
                ),
            );
        }
        if !(MIN_KERNEL..=MAX_KERNEL).contains(&self.kernel_size) {
            return invalid(
                "kernel_size",
                format!(
                    "must lie in [{MIN_KERNEL}, {MAX_KERNEL}], got {}",
                    self.kernel_size
                ),
            );
        }
        if self.stage_widths.len() != self.num_residual_blocks {
            return invalid(
                "stage_widths",
                format!(
                    "has {} entries for {} blocks",
                    self.stage_widths.len(),
                    self.num_residual_blocks
                ),
            );
        }
        if self.stage_widths.contains(&0) {
            return invalid("stage_widths", "entries must be positive".into());
        }
        if self.stem_width == 0 {
            return invalid("stem_width", "must be positive".into());
        }
        if self.num_classes != 2 {
            return invalid(
                "num_classes",
                format!("must be 2, got {}", self.num_classes),
            );
        }
        if !(self.elu_alpha > 0.0 && self.elu_alpha.is_finite()) {
            return invalid(
                "elu_alpha",
                format!("must be positive, got {}", self.elu_alpha),
            );
        }
        Ok(())
    }

    pub fn shortcut_kernel_size(&self) -> usize {
        match self.shortcut_kernel {
            ShortcutKernel::Same => self.kernel_size,
            ShortcutKernel::Pointwise => 1,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ModelError::InvalidConfig {
            field: "config",
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Convolution with "same" padding resolved against the input at run time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    fn zeros(name: String, k: usize, cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            name,
            kernel_size: k,
            in_channels: cin,
            out_channels: cout,
            stride,
            weight: Tensor::zeros(&[cout, cin, k, k]),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn spec_for(&self, h: usize, w: usize) -> Conv2dSpec {
        Conv2dSpec::same(
            self.kernel_size,
            self.in_channels,
            self.out_channels,
            self.stride,
            h,
            w,
        )
    }

    fn record<T: Element>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        weight: Var,
        bias: Var,
    ) -> Result<Var, TensorError> {
        let s = tape.value(x).shape();
        let spec = self.spec_for(s[2], s[3]);
        tape.conv2d(x, weight, bias, spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub name: String,
    /// `in_features × out_features`.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub conv3: ConvLayer,
    pub shortcut: ConvLayer,
}

/// Conv-layer outputs captured during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub layer: String,
    pub var: Var,
}

impl ResidualBlock {
    fn new(index: usize, k: usize, shortcut_k: usize, cin: usize, cout: usize) -> Self {
        let name = |part: &str| format!("block{index}.{part}");
        Self {
            conv1: ConvLayer::zeros(name("conv1"), k, cin, cout, 2),
            conv2: ConvLayer::zeros(name("conv2"), k, cout, cout, 1),
            conv3: ConvLayer::zeros(name("conv3"), k, cout, cout, 1),
            shortcut: ConvLayer::zeros(name("shortcut"), shortcut_k, cin, cout, 2),
        }
    }

    pub fn convs(&self) -> [&ConvLayer; 4] {
        [&self.conv1, &self.conv2, &self.conv3, &self.shortcut]
    }

    fn convs_mut(&mut self) -> [&mut ConvLayer; 4] {
        [
            &mut self.conv1,
            &mut self.conv2,
            &mut self.conv3,
            &mut self.shortcut,
        ]
    }

    /// `params` holds weight/bias pairs in `convs()` order.
    pub fn record<T: Element>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        params: &[Var],
        alpha: f64,
        activations: &mut Vec<Activation>,
    ) -> Result<Var, TensorError> {
        let mut serial = x;
        for (i, conv) in [&self.conv1, &self.conv2, &self.conv3]
            .into_iter()
            .enumerate()
        {
            let y = conv.record(tape, serial, params[2 * i], params[2 * i + 1])?;
            serial = tape.elu(y, alpha)?;
            activations.push(Activation {
                layer: conv.name.clone(),
                var: serial,
            });
        }
        let short = self.shortcut.record(tape, x, params[6], params[7])?;
        activations.push(Activation {
            layer: self.shortcut.name.clone(),
            var: short,
        });
        let sum = tape.add(serial, short)?;
        tape.relu(sum)
    }
}

/// Handles produced by recording a forward pass on a tape.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub logits: Var,
    pub params: Vec<Var>,
    pub activations: Vec<Activation>,
}

impl Recorded {
    pub fn activation(&self, layer: &str) -> Option<Var> {
        self.activations
            .iter()
            .find(|a| a.layer == layer)
            .map(|a| a.var)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: ModelConfig,
    pub stem: ConvLayer,
    pub blocks: Vec<ResidualBlock>,
    pub head: DenseLayer,
}

impl Network {
    /// All weights and biases zero.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let k = cfg.kernel_size;
        let stem = ConvLayer::zeros("stem".into(), k, CHANNELS, cfg.stem_width, 1);
        let mut cin = cfg.stem_width;
        let blocks = cfg
            .stage_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let b = ResidualBlock::new(i + 1, k, cfg.shortcut_kernel_size(), cin, w);
                cin = w;
                b
            })
            .collect();
        let head = DenseLayer {
            name: "head".into(),
            weight: Tensor::zeros(&[cin, cfg.num_classes]),
            bias: Tensor::zeros(&[cfg.num_classes]),
        };
        Ok(Self {
            config: cfg.clone(),
            stem,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn conv_layers(&self) -> Vec<&ConvLayer> {
        std::iter::once(&self.stem)
            .chain(self.blocks.iter().flat_map(|b| b.convs()))
            .collect()
    }

    pub fn conv_layer_names(&self) -> Vec<String> {
        self.conv_layers().iter().map(|c| c.name.clone()).collect()
    }

    /// Name of the final serial convolution of the last block.
    pub fn last_conv_name(&self) -> String {
        self.blocks
            .last()
            .map(|b| b.conv3.name.clone())
            .unwrap_or_else(|| self.stem.name.clone())
    }

    /// `(name, tensor)` for every parameter in canonical order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for conv in self.conv_layers() {
            out.push((format!("{}.weight", conv.name), &conv.weight));
            out.push((format!("{}.bias", conv.name), &conv.bias));
        }
        out.push((format!("{}.weight", self.head.name), &self.head.weight));
        out.push((format!("{}.bias", self.head.name), &self.head.bias));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        out.push(&mut self.stem.weight);
        out.push(&mut self.stem.bias);
        for block in &mut self.blocks {
            for conv in block.convs_mut() {
                out.push(&mut conv.weight);
                out.push(&mut conv.bias);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Pushes every parameter onto `tape` as a trainable leaf.
    pub fn bind<T: Element>(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|(_, t)| tape.param(t.cast()))
            .collect()
    }

    /// Records the forward pass of an `N×7×H×W` input with parameters
    /// supplied as tape variables in [`Network::parameters`] order.
    pub fn record_with<T: Element>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        params: &[Var],
    ) -> Result<Recorded, ModelError> {
        let expected = 4 * self.blocks.len() * 2 + 4;
        if params.len() != expected {
            return Err(ModelError::ParamCount {
                expected,
                got: params.len(),
            });
        }
        let shape = tape.value(input).shape();
        if shape.len() != 4 || shape[1] != CHANNELS {
            return Err(ModelError::ChannelMismatch {
                expected: CHANNELS,
                got: shape.get(1).copied().unwrap_or(0),
            });
        }
        let alpha = self.config.elu_alpha;
        let mut activations = Vec::new();
        let stem = self.stem.record(tape, input, params[0], params[1])?;
        let mut x = tape.elu(stem, alpha)?;
        activations.push(Activation {
            layer: self.stem.name.clone(),
            var: x,
        });
        for (i, block) in self.blocks.iter().enumerate() {
            let p = &params[2 + 8 * i..2 + 8 * (i + 1)];
            x = block.record(tape, x, p, alpha, &mut activations)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let n = params.len();
        let logits = tape.dense(pooled, params[n - 2], params[n - 1])?;
        Ok(Recorded {
            logits,
            params: params.to_vec(),
            activations,
        })
    }

    /// Binds parameters and records the forward pass of `batch`.
    pub fn record<T: Element>(
        &self,
        tape: &mut Tape<T>,
        batch: &Tensor,
    ) -> Result<Recorded, ModelError> {
        let params = self.bind(tape);
        let input = tape.constant(batch.cast());
        self.record_with(tape, input, &params)
    }

    /// Inference: `N×2` logits for an `N×7×H×W` batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::<f32>::new();
        let rec = self.record(&mut tape, batch)?;
        Ok(tape.value(rec.logits).clone())
    }

    /// Softmax class probabilities `[normal, affected]` for one image.
    pub fn predict_proba(&self, image: &MultiChannelImage) -> Result<[f64; 2], ModelError> {
        let logits = self.forward(&image.to_tensor())?;
        let p = &softmax_rows(&logits)?[0];
        Ok([p[0], p[1]])
    }
}

/// Index of the larger probability; ties go to class 0 (normal).
pub fn predicted_class(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Builds a network with He-normal weights (`σ = √(2 / fan_in)`) drawn from
/// a ChaCha8 stream seeded with `seed`; biases start at zero.
pub fn build_network(cfg: &ModelConfig, seed: u64) -> Result<Network, ModelError> {
    let mut net = Network::zeros(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in net.parameters_mut() {
        if t.rank() == 1 {
            continue;
        }
        let fan_in: usize = if t.rank() == 4 {
            t.shape()[1..].iter().product()
        } else {
            t.shape()[0]
        };
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        for v in t.data_mut() {
            *v = normal.sample(&mut rng) as f32;
        }
    }
    Ok(net)
}

/// A whole network reduced to the mean cross-entropy against fixed labels.
#[derive(Debug, Clone)]
pub struct NetworkFragment<'a> {
    pub network: &'a Network,
    pub labels: Vec<usize>,
}

impl Fragment for NetworkFragment<'_> {
    fn parameters(&self) -> Vec<Tensor<f64>> {
        self.network
            .parameters()
            .into_iter()
            .map(|(_, t)| t.cast())
            .collect()
    }

    fn loss<T: Element>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        params: &[Var],
    ) -> Result<Var, TensorError> {
        let rec = self
            .network
            .record_with(tape, input, params)
            .map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => TensorError::InvalidArgument {
                    op: "network",
                    reason: other.to_string(),
                },
            })?;
        tape.softmax_cross_entropy(rec.logits, &self.labels)
    }
}

/// One residual block probed by a fixed weighted sum of its output.
#[derive(Debug, Clone)]
pub struct BlockFragment<'a> {
    pub block: &'a ResidualBlock,
    pub alpha: f64,
    pub probe: Tensor<f64>,
}

impl Fragment for BlockFragment<'_> {
    fn parameters(&self) -> Vec<Tensor<f64>> {
        self.block
            .convs()
            .iter()
            .flat_map(|c| [c.weight.cast(), c.bias.cast()])
            .collect()
    }

    fn loss<T: Element>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        params: &[Var],
    ) -> Result<Var, TensorError> {
        let mut acts = Vec::new();
        let out = self
            .block
            .record(tape, input, params, self.alpha, &mut acts)?;
        tape.weighted_sum(out, self.probe.cast())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_residual_blocks: 1,
            kernel_size: 2,
            stage_widths: vec![8],
            stem_width: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_bounds() {
        assert!(ModelConfig::default().validate().is_ok());
        for (blocks, k) in [(0, 4), (6, 4), (4, 1), (4, 8)] {
            let cfg = ModelConfig::default().with_shape(blocks, k);
            assert!(matches!(
                cfg.validate(),
                Err(ModelError::InvalidConfig { .. })
            ));
        }
        let mut cfg = ModelConfig::default();
        cfg.stage_widths.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn with_shape_extends_by_doubling() {
        let cfg = ModelConfig::default().with_shape(5, 3);
        assert_eq!(cfg.stage_widths, vec![32, 64, 128, 256, 512]);
        assert_eq!(
            ModelConfig::default().with_shape(2, 3).stage_widths,
            vec![32, 64]
        );
    }

    #[test]
    fn toml_round_trip() {
        let cfg = tiny();
        assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(ModelConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn minimal_network_shapes() {
        let net = build_network(&tiny(), 1).unwrap();
        let x = Tensor::filled(&[1, 7, 100, 100], 0.5);
        assert_eq!(net.forward(&x).unwrap().shape(), &[1, 2]);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_network(&tiny(), 9).unwrap();
        let b = build_network(&tiny(), 9).unwrap();
        let c = build_network(&tiny(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn dead_network_is_uniform() {
        let net = Network::zeros(&tiny()).unwrap();
        let img = MultiChannelImage::new(100, 100, vec![0.3; 7 * 100 * 100]).unwrap();
        assert_eq!(net.predict_proba(&img).unwrap(), [0.5, 0.5]);
        assert_eq!(predicted_class(&[0.5, 0.5]), CLASS_NORMAL);
        assert_eq!(predicted_class(&[0.4, 0.6]), CLASS_AFFECTED);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let net = build_network(&tiny(), 1).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[1, 3, 10, 10])),
            Err(ModelError::ChannelMismatch {
                expected: 7,
                got: 3
            })
        ));
    }

    #[test]
    fn parameter_names_and_layers() {
        let net = build_network(&ModelConfig::default(), 0).unwrap();
        let names: Vec<String> = net.parameters().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 2 + 4 * 8 + 2);
        assert_eq!(names[0], "stem.weight");
        assert_eq!(names[2], "block1.conv1.weight");
        assert_eq!(names.last().unwrap(), "head.bias");
        assert_eq!(net.last_conv_name(), "block4.conv3");
    }
}
