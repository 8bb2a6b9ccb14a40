use super::{ImageError, RgbPatch};

/// Source coordinate for destination index `i` with corner-aligned sampling:
/// the first and last destination pixels land exactly on the first and last
/// source pixels.
pub(crate) fn corner_aligned(i: usize, src: usize, dst: usize) -> f64 {
    if dst <= 1 || src <= 1 {
        0.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    }
}

/// Bilinear sample of a single-channel `width × height` grid at `(x, y)`.
pub(crate) fn bilinear_sample(
    get: impl Fn(usize, usize) -> f64,
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> f64 {
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = get(x0, y0) * (1.0 - fx) + get(x1, y0) * fx;
    let bottom = get(x0, y1) * (1.0 - fx) + get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize with corner-aligned sampling. Results are re-quantized
/// with round-half-away-from-zero.
pub fn resize_bilinear(
    patch: &RgbPatch,
    width: usize,
    height: usize,
) -> Result<RgbPatch, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyImage { width, height });
    }
    let (sw, sh) = (patch.width(), patch.height());
    let px = patch.pixels();
    let mut out = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let sy = corner_aligned(y, sh, height);
        for x in 0..width {
            let sx = corner_aligned(x, sw, width);
            for c in 0..3 {
                let v = bilinear_sample(|xx, yy| px[(yy * sw + xx) * 3 + c] as f64, sw, sh, sx, sy);
                // f64::round rounds half away from zero
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbPatch::new(width, height, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_patch_stays_constant() {
        let p = RgbPatch::filled(7, 5, [10, 200, 33]).unwrap();
        for (w, h) in [(1, 1), (3, 9), (100, 100)] {
            let r = resize_bilinear(&p, w, h).unwrap();
            assert!(r.pixels().chunks(3).all(|c| c == [10, 200, 33]));
        }
    }

    #[test]
    fn checkerboard_center_rounds_up() {
        let mut px = Vec::new();
        for v in [0u8, 255, 255, 0] {
            px.extend([v, v, v]);
        }
        let p = RgbPatch::new(2, 2, px).unwrap();
        let r = resize_bilinear(&p, 3, 3).unwrap();
        assert_eq!(r.pixel(1, 1), [128, 128, 128]);
        // corners are exact
        assert_eq!(r.pixel(0, 0)[0], 0);
        assert_eq!(r.pixel(2, 0)[0], 255);
    }

    #[test]
    fn doubles_dimensions() {
        let p = RgbPatch::filled(50, 50, [1, 2, 3]).unwrap();
        let r = resize_bilinear(&p, 100, 100).unwrap();
        assert_eq!((r.width(), r.height()), (100, 100));
    }

    #[test]
    fn zero_target_rejected() {
        let p = RgbPatch::filled(2, 2, [0, 0, 0]).unwrap();
        assert!(resize_bilinear(&p, 0, 4).is_err());
    }
}
