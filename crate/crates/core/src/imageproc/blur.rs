use super::{ImageError, MultiChannelImage, CHANNELS};

/// Normalized 1-D Gaussian taps; the 2-D kernel is their outer product.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64, radius: usize) -> Result<Self, ImageError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ImageError::Kernel(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if radius < 1 {
            return Err(ImageError::Kernel("radius must be at least 1".into()));
        }
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let x = i as f64 - radius as f64;
                (-x * x / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            sigma,
            radius,
            taps: raw.into_iter().map(|v| v / total).collect(),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

impl Default for GaussianKernel {
    /// σ = 1, 5 taps.
    fn default() -> Self {
        Self::new(1.0, 2).expect("valid default kernel")
    }
}

/// Reflect-101 border: `-1 → 1`, `n → n − 2`. Valid for offsets below `n`.
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Separable blur of one `width × height` plane: horizontal taps, then
/// vertical taps, reflect-101 borders.
pub fn blur_plane(
    plane: &[f32],
    width: usize,
    height: usize,
    kernel: &GaussianKernel,
) -> Result<Vec<f32>, ImageError> {
    let r = kernel.radius();
    if r >= width || r >= height {
        return Err(ImageError::KernelTooLarge {
            radius: r,
            width,
            height,
        });
    }
    let taps = kernel.taps();
    let mut horizontal = vec![0.0f64; width * height];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            horizontal[y * width + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &w)| {
                    w * row[reflect101(x as isize + t as isize - r as isize, width)] as f64
                })
                .sum();
        }
    }
    let mut out = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let v: f64 = taps
                .iter()
                .enumerate()
                .map(|(t, &w)| {
                    w * horizontal
                        [reflect101(y as isize + t as isize - r as isize, height) * width + x]
                })
                .sum();
            out[y * width + x] = v as f32;
        }
    }
    Ok(out)
}

/// Blurs all seven planes independently.
pub fn gaussian_blur(
    image: &MultiChannelImage,
    kernel: &GaussianKernel,
) -> Result<MultiChannelImage, ImageError> {
    let (w, h) = (image.width(), image.height());
    let mut data = Vec::with_capacity(image.data().len());
    for c in 0..CHANNELS {
        data.extend(blur_plane(image.plane(c), w, h, kernel)?);
    }
    MultiChannelImage::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_normalized_and_symmetric() {
        for (sigma, r) in [(0.5, 1), (1.0, 2), (2.5, 6)] {
            let k = GaussianKernel::new(sigma, r).unwrap();
            let t = k.taps();
            assert_eq!(t.len(), 2 * r + 1);
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for i in 0..t.len() {
                assert_eq!(t[i], t[2 * r - i]);
            }
        }
        assert!(GaussianKernel::new(0.0, 2).is_err());
        assert!(GaussianKernel::new(1.0, 0).is_err());
    }

    #[test]
    fn constant_plane_preserved() {
        let plane = vec![0.3f32; 12 * 9];
        let out = blur_plane(&plane, 12, 9, &GaussianKernel::default()).unwrap();
        assert!(out.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn impulse_response_is_outer_product() {
        let (w, h) = (11, 11);
        let mut plane = vec![0.0f32; w * h];
        plane[5 * w + 5] = 1.0;
        let k = GaussianKernel::new(1.2, 3).unwrap();
        let out = blur_plane(&plane, w, h, &k).unwrap();
        let t = k.taps();
        for dy in 0..7 {
            for dx in 0..7 {
                let got = out[(2 + dy) * w + 2 + dx] as f64;
                assert!((got - t[dy] * t[dx]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let plane = vec![0.0f32; 4 * 4];
        assert!(matches!(
            blur_plane(&plane, 4, 4, &GaussianKernel::new(1.0, 4).unwrap()),
            Err(ImageError::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn reflect101_indices() {
        assert_eq!(reflect101(-1, 5), 1);
        assert_eq!(reflect101(-2, 5), 2);
        assert_eq!(reflect101(5, 5), 3);
        assert_eq!(reflect101(6, 5), 2);
        assert_eq!(reflect101(2, 5), 2);
    }
}
