//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use hres::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0))
}

/// Direct-loop cross-correlation with explicit `[top, bottom, left, right]`
/// zero padding.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: [usize; 4]) -> Tensor {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let [top, bottom, left, right] = pad;
    let oh = (h + top + bottom - k) / stride + 1;
    let ow = (wd + left + right - k) / stride + 1;
    let mut out = vec![0.0f32; n * cout * oh * ow];
    for s in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.data()[o] as f64;
                    for c in 0..cin {
                        for i in 0..k {
                            for j in 0..k {
                                let iy = (y * stride + i) as isize - top as isize;
                                let ix = (xo * stride + j) as isize - left as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv =
                                    x.data()[((s * cin + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((o * cin + c) * k + i) * k + j];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((s * cout + o) * oh + y) * ow + xo] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

/// TF-style "same" padding, extra pixel on the bottom/right.
pub fn same_padding(h: usize, w: usize, k: usize, stride: usize) -> [usize; 4] {
    let total = |d: usize| ((d.div_ceil(stride) - 1) * stride + k).saturating_sub(d);
    let (ph, pw) = (total(h), total(w));
    [ph / 2, ph - ph / 2, pw / 2, pw - pw / 2]
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn pair_count_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Corner-aligned bilinear resize of a row-major grid.
pub fn bilinear_resize(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dw * dh];
    for y in 0..dh {
        let fy = y as f64 * (sh - 1) as f64 / (dh - 1) as f64;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for x in 0..dw {
            let fx = x as f64 * (sw - 1) as f64 / (dw - 1) as f64;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            out[y * dw + x] = src[y0 * sw + x0] * (1.0 - tx) * (1.0 - ty)
                + src[y0 * sw + x1] * tx * (1.0 - ty)
                + src[y1 * sw + x0] * (1.0 - tx) * ty
                + src[y1 * sw + x1] * tx * ty;
        }
    }
    out
}
