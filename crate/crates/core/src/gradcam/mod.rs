//! Gradient-weighted class activation maps and heatmap overlays.

mod colormap;

pub use colormap::JET;

use crate::imageproc::{bilinear_sample, corner_aligned, MultiChannelImage, RgbPatch};
use crate::model::{ModelError, Network};
use crate::tensor::{Tape, TensorError};
use crate::Tensor;

/// Selector resolving to the final serial convolution of the last block.
pub const LAST_CONV: &str = "last_conv";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradCamError {
    #[error("unknown layer {name:?}; convolutional layers: {}", available.join(", "))]
    UnknownLayer {
        name: String,
        available: Vec<String>,
    },
    #[error("layer {name:?} is not convolutional; convolutional layers: {}", available.join(", "))]
    NotConvolutional {
        name: String,
        available: Vec<String>,
    },
    #[error("class index {0} out of range for 2 classes")]
    Class(usize),
    #[error("overlay alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("heatmap is {heat_w}x{heat_h} but the source image is {src_w}x{src_h}")]
    SizeMismatch {
        heat_w: usize,
        heat_h: usize,
        src_w: usize,
        src_h: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Row-major single-channel map.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear resize with corner-aligned sampling.
    pub fn upsample(&self, width: usize, height: usize) -> Heatmap {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = corner_aligned(y, self.height, height);
            for x in 0..width {
                let sx = corner_aligned(x, self.width, width);
                values.push(bilinear_sample(
                    |xx, yy| self.get(xx, yy),
                    self.width,
                    self.height,
                    sx,
                    sy,
                ));
            }
        }
        Heatmap {
            width,
            height,
            values,
        }
    }

    /// Min-max scaling to `[0, 1]`. A constant map becomes all zeros.
    pub fn normalized(&self) -> Heatmap {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self
            .values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        let values = if range > 0.0 {
            self.values.iter().map(|v| (v - min) / range).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        Heatmap {
            width: self.width,
            height: self.height,
            values,
        }
    }

    /// 8-bit grayscale, `round(v·255)`.
    pub fn to_gray(&self) -> Vec<u8> {
        self.values.iter().map(|&v| to_level(v)).collect()
    }
}

fn to_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Resolves `selector` (a layer name or [`LAST_CONV`]) to a convolutional
/// layer name.
pub fn select_layer(network: &Network, selector: &str) -> Result<String, GradCamError> {
    let available = network.conv_layer_names();
    if selector == LAST_CONV {
        return Ok(network.last_conv_name());
    }
    if available.iter().any(|n| n == selector) {
        return Ok(selector.to_string());
    }
    if selector == network.head.name {
        return Err(GradCamError::NotConvolutional {
            name: selector.into(),
            available,
        });
    }
    Err(GradCamError::UnknownLayer {
        name: selector.into(),
        available,
    })
}

/// `ReLU(Σ_c w_c·A_c)` at the layer's own resolution, where `A` is the
/// layer's output and `w_c` the spatial mean of the target logit's gradient
/// with respect to channel `c`.
pub fn class_activation(
    network: &Network,
    image: &MultiChannelImage,
    layer: &str,
    target_class: usize,
) -> Result<Heatmap, GradCamError> {
    if target_class > 1 {
        return Err(GradCamError::Class(target_class));
    }
    let layer = select_layer(network, layer)?;
    let mut tape = Tape::<f32>::new();
    let rec = network.record(&mut tape, &image.to_tensor())?;
    let act_var = rec.activation(&layer).expect("selected layer is recorded");
    let mut seed = Tensor::zeros(tape.value(rec.logits).shape());
    seed.data_mut()[target_class] = 1.0;
    let grads = tape.backward_with_seed(rec.logits, seed)?;

    let act = tape.value(act_var);
    let (c, h, w) = (act.shape()[1], act.shape()[2], act.shape()[3]);
    let plane = h * w;
    let mut values = vec![0.0f64; plane];
    if let Some(grad) = grads.get(act_var) {
        for ch in 0..c {
            let g = &grad.data()[ch * plane..(ch + 1) * plane];
            let weight = g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let a = &act.data()[ch * plane..(ch + 1) * plane];
            for (out, &v) in values.iter_mut().zip(a) {
                *out += weight * v as f64;
            }
        }
    }
    for v in &mut values {
        *v = v.max(0.0);
    }
    Ok(Heatmap {
        width: w,
        height: h,
        values,
    })
}

/// Class activation map upsampled to the image size and scaled to `[0, 1]`.
pub fn gradcam(
    network: &Network,
    image: &MultiChannelImage,
    layer: &str,
    target_class: usize,
) -> Result<Heatmap, GradCamError> {
    let coarse = class_activation(network, image, layer, target_class)?;
    Ok(coarse.upsample(image.width(), image.height()).normalized())
}

/// `round((1−alpha)·source + alpha·JET[heat])` per channel.
pub fn overlay(heatmap: &Heatmap, source: &RgbPatch, alpha: f64) -> Result<RgbPatch, GradCamError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GradCamError::Alpha(alpha));
    }
    if heatmap.width != source.width() || heatmap.height != source.height() {
        return Err(GradCamError::SizeMismatch {
            heat_w: heatmap.width,
            heat_h: heatmap.height,
            src_w: source.width(),
            src_h: source.height(),
        });
    }
    let mut pixels = Vec::with_capacity(source.pixels().len());
    for (src, &h) in source.pixels().chunks_exact(3).zip(&heatmap.values) {
        let color = JET[to_level(h) as usize];
        for c in 0..3 {
            let v = (1.0 - alpha) * src[c] as f64 + alpha * color[c] as f64;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RgbPatch::new(source.width(), source.height(), pixels).expect("same dimensions"))
}
