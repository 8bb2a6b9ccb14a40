//! sRGB → HSV and sRGB → CIELAB (D65) conversions.

/// Hue in turns (degrees / 360) and saturation, both in `[0, 1]`.
/// Achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f32, f32) {
    let (h, s, _) = rgb_to_hsv_full(rgb);
    (h as f32, s as f32)
}

/// Hexcone HSV with all three components in `[0, 1]`.
pub fn rgb_to_hsv_full(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, max);
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    ((sector / 6.0).rem_euclid(1.0), s, max)
}

/// Inverse of [`rgb_to_hsv_full`], rounded to 8 bits.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

const D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

fn linearize(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Unscaled CIELAB `(L*, a*, b*)` of an sRGB colour under D65.
pub fn srgb_to_lab(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(linearize);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (lab_f(x / D65[0]), lab_f(y / D65[1]), lab_f(z / D65[2]));
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// `L*/100` and `(a* + 128)/255`, clamped to `[0, 1]`.
pub fn rgb_to_lab(rgb: [u8; 3]) -> (f32, f32) {
    let (l, a, _) = srgb_to_lab(rgb);
    (
        (l / 100.0).clamp(0.0, 1.0) as f32,
        ((a + 128.0) / 255.0).clamp(0.0, 1.0) as f32,
    )
}
