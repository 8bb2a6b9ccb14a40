//! Patch preprocessing: resize, colour-space channel extraction, seven-plane
//! assembly, Gaussian denoising and CLAHE enhancement of the RGB planes.

mod blur;
mod clahe;
mod color;
mod resize;

pub use blur::{blur_plane, gaussian_blur, GaussianKernel};
pub use clahe::{clahe_plane, clahe_rgb, ClaheConfig};
pub use color::{hsv_to_rgb, rgb_to_hsv, rgb_to_hsv_full, rgb_to_lab, srgb_to_lab};
pub use resize::resize_bilinear;
pub(crate) use resize::{bilinear_sample, corner_aligned};

use crate::tensor::Tensor;

/// Side length of the network input.
pub const PATCH_SIDE: usize = 100;
/// Planes in a [`MultiChannelImage`].
pub const CHANNELS: usize = 7;
/// Plane order of a [`MultiChannelImage`].
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["R", "G", "B", "H", "S", "L*", "a*"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    BufferLength { expected: usize, got: usize },
    #[error("expected a {expected_w}x{expected_h} image, got {width}x{height}")]
    WrongSize {
        expected_w: usize,
        expected_h: usize,
        width: usize,
        height: usize,
    },
    #[error("expected {expected} planes, got {got}")]
    PlaneCount { expected: usize, got: usize },
    #[error("gaussian kernel: {0}")]
    Kernel(String),
    #[error("kernel radius {radius} does not fit a {width}x{height} plane")]
    KernelTooLarge {
        radius: usize,
        width: usize,
        height: usize,
    },
    #[error("clahe: {0}")]
    Clahe(String),
}

/// An 8-bit RGB image, pixels row-major as `[r, g, b]` triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbPatch {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbPatch {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if pixels.len() != width * height * 3 {
            return Err(ImageError::BufferLength {
                expected: width * height * 3,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Seven normalized planes `[R, G, B, H, S, L*, a*]`, each `height × width`,
/// stored plane-major. Values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl MultiChannelImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if data.len() != width * height * CHANNELS {
            return Err(ImageError::PlaneCount {
                expected: CHANNELS,
                got: data.len() / (width * height),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `1 × 7 × H × W` network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, CHANNELS, self.height, self.width],
            self.data.clone(),
        )
        .expect("image buffer matches its shape")
    }

    /// Accepts `7 × H × W` or `1 × 7 × H × W`.
    pub fn from_tensor(t: &Tensor) -> Result<Self, ImageError> {
        let s = t.shape();
        let (c, h, w) = match *s {
            [c, h, w] | [1, c, h, w] => (c, h, w),
            _ => {
                return Err(ImageError::PlaneCount {
                    expected: CHANNELS,
                    got: 0,
                })
            }
        };
        if c != CHANNELS {
            return Err(ImageError::PlaneCount {
                expected: CHANNELS,
                got: c,
            });
        }
        Self::new(w, h, t.data().to_vec())
    }

    /// The R, G, B planes re-quantized to 8 bits.
    pub fn rgb_patch(&self) -> RgbPatch {
        let n = self.width * self.height;
        let mut pixels = Vec::with_capacity(n * 3);
        for i in 0..n {
            for c in 0..3 {
                let v = (self.data[c * n + i] as f64 * 255.0).clamp(0.0, 255.0);
                pixels.push(v.round() as u8);
            }
        }
        RgbPatch::new(self.width, self.height, pixels).expect("non-empty image")
    }
}

/// Builds the seven planes from a `100 × 100` patch.
pub fn assemble_seven_channel(patch: &RgbPatch) -> Result<MultiChannelImage, ImageError> {
    if patch.width() != PATCH_SIDE || patch.height() != PATCH_SIDE {
        return Err(ImageError::WrongSize {
            expected_w: PATCH_SIDE,
            expected_h: PATCH_SIDE,
            width: patch.width(),
            height: patch.height(),
        });
    }
    Ok(assemble_any_size(patch))
}

pub(crate) fn assemble_any_size(patch: &RgbPatch) -> MultiChannelImage {
    let n = patch.width() * patch.height();
    let mut data = vec![0.0f32; n * CHANNELS];
    for (i, px) in patch.pixels().chunks_exact(3).enumerate() {
        let rgb = [px[0], px[1], px[2]];
        let (h, s) = rgb_to_hsv(rgb);
        let (l, a) = rgb_to_lab(rgb);
        let values = [
            px[0] as f32 / 255.0,
            px[1] as f32 / 255.0,
            px[2] as f32 / 255.0,
            h,
            s,
            l,
            a,
        ];
        for (c, v) in values.into_iter().enumerate() {
            data[c * n + i] = v;
        }
    }
    MultiChannelImage {
        width: patch.width(),
        height: patch.height(),
        data,
    }
}

/// Full preprocessing of a raw patch: resize to 100×100, assemble seven
/// planes, blur all planes, then CLAHE the RGB planes.
pub fn preprocess_patch(
    patch: &RgbPatch,
    kernel: &GaussianKernel,
    cfg: &ClaheConfig,
) -> Result<MultiChannelImage, ImageError> {
    let resized = resize_bilinear(patch, PATCH_SIDE, PATCH_SIDE)?;
    let assembled = assemble_seven_channel(&resized)?;
    let blurred = gaussian_blur(&assembled, kernel)?;
    clahe_rgb(&blurred, cfg)
}

/// [`preprocess_patch`] over a slice of patches.
pub fn preprocess_all(
    patches: &[RgbPatch],
    kernel: &GaussianKernel,
    cfg: &ClaheConfig,
) -> Result<Vec<MultiChannelImage>, ImageError> {
    patches
        .iter()
        .map(|p| preprocess_patch(p, kernel, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(w: usize, h: usize, seed: u64) -> RgbPatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbPatch::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn gray_patch_planes() {
        let img =
            assemble_seven_channel(&RgbPatch::filled(100, 100, [90, 90, 90]).unwrap()).unwrap();
        assert!(img.plane(3).iter().all(|&v| v == 0.0));
        assert!(img.plane(4).iter().all(|&v| v == 0.0));
        assert!(img
            .plane(6)
            .iter()
            .all(|&v| (v - 128.0 / 255.0).abs() < 1e-3));
    }

    #[test]
    fn assembled_values_in_unit_range() {
        let img = assemble_seven_channel(&random_patch(100, 100, 3)).unwrap();
        assert_eq!(img.data().len(), 7 * 100 * 100);
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn assembly_rejects_wrong_size() {
        assert!(matches!(
            assemble_seven_channel(&random_patch(50, 50, 0)),
            Err(ImageError::WrongSize { .. })
        ));
    }

    #[test]
    fn pipeline_equals_manual_composition() {
        let patch = random_patch(50, 50, 9);
        let kernel = GaussianKernel::new(1.0, 2).unwrap();
        let cfg = ClaheConfig::default();
        let out = preprocess_patch(&patch, &kernel, &cfg).unwrap();
        let manual = clahe_rgb(
            &gaussian_blur(
                &assemble_seven_channel(&resize_bilinear(&patch, 100, 100).unwrap()).unwrap(),
                &kernel,
            )
            .unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.width(), 100);
        assert_eq!(out.height(), 100);
        assert_eq!(
            out.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            manual
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        );
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn constant_gray_stays_constant() {
        let patch = RgbPatch::filled(50, 50, [128, 128, 128]).unwrap();
        let out =
            preprocess_patch(&patch, &GaussianKernel::default(), &ClaheConfig::default()).unwrap();
        for c in 0..CHANNELS {
            let p = out.plane(c);
            assert!(p.iter().all(|&v| v == p[0]), "plane {c} not constant");
        }
        assert!((out.plane(0)[0] - 128.0 / 255.0).abs() <= 1.0 / 255.0);
    }

    #[test]
    fn tensor_round_trip() {
        let img = assemble_seven_channel(&random_patch(100, 100, 5)).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 7, 100, 100]);
        assert_eq!(MultiChannelImage::from_tensor(&t).unwrap(), img);
    }
}
