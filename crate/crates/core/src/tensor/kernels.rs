//! Forward and backward kernels. Every kernel is a pure function over
//! tensors; [`super::Tape`] strings them together for reverse mode.
//!
//! Reductions accumulate in `f64` regardless of the element type.

use super::gemm::{gemm, MatRef};
use super::{Element, Tensor, TensorError};

/// Explicit per-side zero padding in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

/// Geometry of a 2-D cross-correlation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2dSpec {
    pub fn valid(kernel_size: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel_size,
            in_channels,
            out_channels,
            stride: 1,
            padding: Padding::default(),
        }
    }

    /// "Same" padding for an `h × w` input: output is `ceil(h / stride)` by
    /// `ceil(w / stride)`. Odd totals put the extra pixel on the bottom/right.
    pub fn same(
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        h: usize,
        w: usize,
    ) -> Self {
        let pad = |d: usize| {
            let out = d.div_ceil(stride);
            ((out - 1) * stride + kernel_size).saturating_sub(d)
        };
        let (ph, pw) = (pad(h), pad(w));
        Self {
            kernel_size,
            in_channels,
            out_channels,
            stride,
            padding: Padding {
                top: ph / 2,
                bottom: ph - ph / 2,
                left: pw / 2,
                right: pw - pw / 2,
            },
        }
    }

    /// Weight elements, `k·k·f_in·f_out`.
    pub fn parameter_count(&self) -> usize {
        self.kernel_size * self.kernel_size * self.in_channels * self.out_channels
    }

    pub fn bias_count(&self) -> usize {
        self.out_channels
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                reason: "kernel_size and stride must be at least 1".into(),
            });
        }
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < self.kernel_size {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "padded height".into(),
                expected: self.kernel_size,
                got: ph,
            });
        }
        if pw < self.kernel_size {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "padded width".into(),
                expected: self.kernel_size,
                got: pw,
            });
        }
        Ok((
            (ph - self.kernel_size) / self.stride + 1,
            (pw - self.kernel_size) / self.stride + 1,
        ))
    }
}

fn expect_rank<T: Element>(
    op: &'static str,
    t: &Tensor<T>,
    rank: usize,
) -> Result<(), TensorError> {
    if t.rank() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn expect_dim(op: &'static str, dim: &str, expected: usize, got: usize) -> Result<(), TensorError> {
    if expected != got {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: dim.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}

struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    top: usize,
    left: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `[lo, hi)` whose input column for tap `kw` is in bounds.
    fn col_range(&self, kw: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.left > kw {
            (self.left - kw).div_ceil(s)
        } else {
            0
        };
        let hi = if self.w + self.left > kw {
            ((self.w - 1 + self.left - kw) / s + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn input_row(&self, oy: usize, kh: usize) -> Option<usize> {
        let iy = oy * self.stride + kh;
        (iy >= self.top && iy - self.top < self.h).then(|| iy - self.top)
    }

    /// Output rows per band so that one unrolled band stays cache-sized.
    fn band_rows(&self) -> usize {
        const BAND_ELEMENTS: usize = 1 << 15;
        (BAND_ELEMENTS / (self.rows() * self.ow).max(1)).clamp(1, self.oh)
    }

    /// Unrolls output rows `[oy0, oy1)` of one sample (`cin × h × w`) into a
    /// `(cin·k·k) × ((oy1 − oy0)·ow)` matrix.
    fn im2col<T: Element>(&self, item: &[T], oy0: usize, oy1: usize, col: &mut [f64]) {
        let p = (oy1 - oy0) * self.ow;
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &item[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for kh in 0..self.k {
                for kw in 0..self.k {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let (lo, hi) = self.col_range(kw);
                    for oy in oy0..oy1 {
                        let at = (oy - oy0) * self.ow;
                        let out_row = &mut dst[at..at + self.ow];
                        match self.input_row(oy, kh) {
                            Some(iy) => {
                                out_row[..lo].fill(0.0);
                                out_row[hi..].fill(0.0);
                                let src = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in out_row[lo..hi].iter_mut().enumerate() {
                                    let ix = (ox + lo) * self.stride + kw - self.left;
                                    *v = src[ix].to_f64();
                                }
                            }
                            None => out_row.fill(0.0),
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-adds an unrolled band back onto a `cin × h × w` buffer.
    fn col2im(&self, col: &[f64], oy0: usize, oy1: usize, item: &mut [f64]) {
        let p = (oy1 - oy0) * self.ow;
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &mut item[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for kh in 0..self.k {
                for kw in 0..self.k {
                    let src = &col[row * p..(row + 1) * p];
                    let (lo, hi) = self.col_range(kw);
                    for oy in oy0..oy1 {
                        if let Some(iy) = self.input_row(oy, kh) {
                            let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                            let at = (oy - oy0) * self.ow;
                            let s_row = &src[at..at + self.ow];
                            for ox in lo..hi {
                                dst[ox * self.stride + kw - self.left] += s_row[ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn conv_geometry<T: Element>(
    input: &Tensor<T>,
    spec: &Conv2dSpec,
    weight: &Tensor<T>,
) -> Result<ConvGeometry, TensorError> {
    const OP: &str = "conv2d";
    expect_rank(OP, input, 4)?;
    expect_rank(OP, weight, 4)?;
    let s = input.shape();
    expect_dim(OP, "input channels", spec.in_channels, s[1])?;
    let ws = weight.shape();
    expect_dim(OP, "weight out_channels", spec.out_channels, ws[0])?;
    expect_dim(OP, "weight in_channels", spec.in_channels, ws[1])?;
    expect_dim(OP, "weight kernel height", spec.kernel_size, ws[2])?;
    expect_dim(OP, "weight kernel width", spec.kernel_size, ws[3])?;
    let (oh, ow) = spec.output_size(s[2], s[3])?;
    Ok(ConvGeometry {
        n: s[0],
        h: s[2],
        w: s[3],
        oh,
        ow,
        k: spec.kernel_size,
        cin: spec.in_channels,
        cout: spec.out_channels,
        stride: spec.stride,
        top: spec.padding.top,
        left: spec.padding.left,
    })
}

fn widen<T: Element>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64()).collect()
}

/// Direct 2-D cross-correlation (no kernel flip) of an `N×C×H×W` batch.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    spec: &Conv2dSpec,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let g = conv_geometry(input, spec, weight)?;
    expect_rank("conv2d", bias, 1)?;
    expect_dim("conv2d", "bias length", spec.out_channels, bias.len())?;

    let (rows, cols) = (g.rows(), g.cols());
    let band = g.band_rows();
    let w = widen(weight);
    let mut col = vec![0.0; rows * band * g.ow];
    let mut acc = vec![0.0; g.cout * band * g.ow];
    let item_len = g.cin * g.h * g.w;
    let mut out = vec![T::ZERO; g.n * g.cout * cols];
    for (item, dst) in input
        .data()
        .chunks_exact(item_len)
        .zip(out.chunks_exact_mut(g.cout * cols))
    {
        for oy0 in (0..g.oh).step_by(band) {
            let oy1 = (oy0 + band).min(g.oh);
            let p = (oy1 - oy0) * g.ow;
            let (col, acc) = (&mut col[..rows * p], &mut acc[..g.cout * p]);
            g.im2col(item, oy0, oy1, col);
            gemm(
                MatRef::new(&w, g.cout, rows),
                MatRef::new(col, rows, p),
                0.0,
                acc,
            );
            for (co, band_out) in acc.chunks_exact(p).enumerate() {
                let b = bias.data()[co].to_f64();
                let at = co * cols + oy0 * g.ow;
                for (o, &v) in dst[at..at + p].iter_mut().zip(band_out) {
                    *o = T::from_f64(v + b);
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] with respect to its inputs.
#[derive(Debug, Clone)]
pub struct Conv2dGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    spec: &Conv2dSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<Conv2dGrads<T>, TensorError> {
    let g = conv_geometry(input, spec, weight)?;
    let expected = [g.n, g.cout, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(TensorError::InvalidArgument {
            op: "conv2d_backward",
            reason: format!(
                "upstream gradient shape {:?} != output shape {:?}",
                grad_out.shape(),
                expected
            ),
        });
    }
    let (rows, cols) = (g.rows(), g.cols());
    let band = g.band_rows();
    let w = widen(weight);
    let mut col = vec![0.0; rows * band * g.ow];
    let mut gcol = vec![0.0; rows * band * g.ow];
    let mut gout_band = vec![0.0; g.cout * band * g.ow];
    let mut gw = vec![0.0; g.cout * rows];
    let mut gb = vec![0.0; g.cout];
    let mut gin_item = vec![0.0; g.cin * g.h * g.w];
    let mut grad_input = Vec::with_capacity(if need_input { input.len() } else { 0 });
    let item_len = g.cin * g.h * g.w;
    let out_len = g.cout * cols;

    for (item, gout) in input
        .data()
        .chunks_exact(item_len)
        .zip(grad_out.data().chunks_exact(out_len))
    {
        for (co, plane) in gout.chunks_exact(cols).enumerate() {
            gb[co] += plane.iter().map(|v| v.to_f64()).sum::<f64>();
        }
        gin_item.fill(0.0);
        for oy0 in (0..g.oh).step_by(band) {
            let oy1 = (oy0 + band).min(g.oh);
            let p = (oy1 - oy0) * g.ow;
            let (col, gcol, dy) = (
                &mut col[..rows * p],
                &mut gcol[..rows * p],
                &mut gout_band[..g.cout * p],
            );
            for (co, dst) in dy.chunks_exact_mut(p).enumerate() {
                let at = co * cols + oy0 * g.ow;
                for (d, v) in dst.iter_mut().zip(&gout[at..at + p]) {
                    *d = v.to_f64();
                }
            }
            g.im2col(item, oy0, oy1, col);
            // dW += dY · colᵀ
            gemm(
                MatRef::new(dy, g.cout, p),
                MatRef::new(col, rows, p).t(),
                1.0,
                &mut gw,
            );
            if need_input {
                // dcol = Wᵀ · dY
                gemm(
                    MatRef::new(&w, g.cout, rows).t(),
                    MatRef::new(dy, g.cout, p),
                    0.0,
                    gcol,
                );
                g.col2im(gcol, oy0, oy1, &mut gin_item);
            }
        }
        if need_input {
            grad_input.extend(gin_item.iter().map(|&v| T::from_f64(v)));
        }
    }

    Ok(Conv2dGrads {
        input: if need_input {
            Some(Tensor::new(input.shape().to_vec(), grad_input)?)
        } else {
            None
        },
        weight: Tensor::new(
            weight.shape().to_vec(),
            gw.into_iter().map(T::from_f64).collect(),
        )?,
        bias: Tensor::new(vec![g.cout], gb.into_iter().map(T::from_f64).collect())?,
    })
}

/// Exponential linear unit: `x` for `x > 0`, else `alpha·(eˣ − 1)`.
pub fn elu<T: Element>(input: &Tensor<T>, alpha: f64) -> Result<Tensor<T>, TensorError> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "elu",
            reason: format!("alpha must be positive, got {alpha}"),
        });
    }
    Ok(input.map(|v| {
        let x = v.to_f64();
        if x > 0.0 {
            v
        } else {
            T::from_f64(alpha * x.exp_m1())
        }
    }))
}

/// Uses the forward output: the derivative for `x ≤ 0` is `y + alpha`.
pub fn elu_backward<T: Element>(
    input: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
    alpha: f64,
) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| {
            if x.to_f64() > 0.0 {
                g
            } else {
                T::from_f64(g.to_f64() * (y.to_f64() + alpha))
            }
        })
        .collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v.to_f64() > 0.0 { v } else { T::ZERO })
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x.to_f64() > 0.0 { g } else { T::ZERO })
        .collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::InvalidArgument {
            op: "add",
            reason: format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        });
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Spatial mean per channel: `N×C×H×W → N×C`.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    expect_rank("global_avg_pool", input, 4)?;
    let s = input.shape();
    let hw = s[2] * s[3];
    let data = input
        .data()
        .chunks_exact(hw)
        .map(|plane| T::from_f64(plane.iter().map(|v| v.to_f64()).sum::<f64>() / hw as f64))
        .collect();
    Tensor::new(vec![s[0], s[1]], data)
}

pub fn global_avg_pool_backward<T: Element>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let scale = 1.0 / hw as f64;
    let mut data = Vec::with_capacity(grad_out.len() * hw);
    for &g in grad_out.data() {
        let v = T::from_f64(g.to_f64() * scale);
        data.extend(std::iter::repeat_n(v, hw));
    }
    Tensor {
        shape: input_shape.to_vec(),
        data,
    }
}

/// Affine map `input · weight + bias` with `input: N×D`, `weight: D×K`.
pub fn dense<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    const OP: &str = "dense";
    expect_rank(OP, input, 2)?;
    expect_rank(OP, weight, 2)?;
    expect_rank(OP, bias, 1)?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    expect_dim(OP, "weight rows (input features)", d, weight.shape()[0])?;
    let k = weight.shape()[1];
    expect_dim(OP, "bias length", k, bias.len())?;
    let (x, w) = (input.data(), weight.data());
    let mut out = Vec::with_capacity(n * k);
    for row in x.chunks_exact(d) {
        for j in 0..k {
            let mut acc = bias.data()[j].to_f64();
            for (i, &xi) in row.iter().enumerate() {
                acc += xi.to_f64() * w[i * k + j].to_f64();
            }
            out.push(T::from_f64(acc));
        }
    }
    Tensor::new(vec![n, k], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> DenseGrads<T> {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let k = weight.shape()[1];
    let (x, w, g) = (input.data(), weight.data(), grad_out.data());
    let mut gi = vec![0.0f64; n * d];
    let mut gw = vec![0.0f64; d * k];
    let mut gb = vec![0.0f64; k];
    for r in 0..n {
        for j in 0..k {
            let gj = g[r * k + j].to_f64();
            gb[j] += gj;
            for i in 0..d {
                gi[r * d + i] += gj * w[i * k + j].to_f64();
                gw[i * k + j] += x[r * d + i].to_f64() * gj;
            }
        }
    }
    let narrow = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect::<Vec<_>>();
    DenseGrads {
        input: Tensor {
            shape: vec![n, d],
            data: narrow(gi),
        },
        weight: Tensor {
            shape: vec![d, k],
            data: narrow(gw),
        },
        bias: Tensor {
            shape: vec![k],
            data: narrow(gb),
        },
    }
}

/// Row-wise softmax of an `N×K` logit matrix, computed in `f64`.
pub fn softmax_rows<T: Element>(logits: &Tensor<T>) -> Result<Vec<Vec<f64>>, TensorError> {
    expect_rank("softmax", logits, 2)?;
    let k = logits.shape()[1];
    Ok(logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let m = row
                .iter()
                .map(|v| v.to_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v.to_f64() - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect())
}

/// Mean negative log-likelihood of `labels` under the row softmax.
/// Returns the loss and the softmax probabilities (needed for backward).
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>), TensorError> {
    const OP: &str = "softmax_cross_entropy";
    expect_rank(OP, logits, 2)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    expect_dim(OP, "label count", n, labels.len())?;
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::LabelOutOfRange {
            op: OP,
            label,
            classes: k,
        });
    }
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let x: Vec<f64> = row.iter().map(|v| v.to_f64()).collect();
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = x.iter().map(|&v| (v - m).exp()).sum();
        let log_z = m + z.ln();
        loss += log_z - x[label];
        probs.extend(x.iter().map(|&v| T::from_f64((v - log_z).exp())));
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], probs)?))
}

pub fn softmax_cross_entropy_backward<T: Element>(
    probs: &Tensor<T>,
    labels: &[usize],
    upstream: f64,
) -> Tensor<T> {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    let scale = upstream / n as f64;
    let mut data: Vec<T> = Vec::with_capacity(n * k);
    for (row, &label) in probs.data().chunks_exact(k).zip(labels) {
        for (j, &p) in row.iter().enumerate() {
            let target = if j == label { 1.0 } else { 0.0 };
            data.push(T::from_f64((p.to_f64() - target) * scale));
        }
    }
    Tensor {
        shape: vec![n, k],
        data,
    }
}

/// `Σ input ⊙ coeffs`, a scalar probe used to reduce fragment outputs.
pub fn weighted_sum<T: Element>(input: &Tensor<T>, coeffs: &Tensor<T>) -> Result<f64, TensorError> {
    if input.shape() != coeffs.shape() {
        return Err(TensorError::InvalidArgument {
            op: "weighted_sum",
            reason: format!("shapes {:?} and {:?} differ", input.shape(), coeffs.shape()),
        });
    }
    Ok(input
        .data()
        .iter()
        .zip(coeffs.data())
        .map(|(a, b)| a.to_f64() * b.to_f64())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let spec = Conv2dSpec::valid(1, 1, 1);
        let y = conv2d(&x, &spec, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn diagonal_kernel_sums_diagonal() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let spec = Conv2dSpec::valid(2, 1, 1);
        let w = t(&[1, 1, 2, 2], &[1., 0., 0., 1.]);
        let y = conv2d(&x, &spec, &w, &t(&[1], &[0.0])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn parameter_count_matches_formula() {
        let spec = Conv2dSpec::valid(4, 7, 32);
        assert_eq!(spec.parameter_count(), 3584);
        assert_eq!(spec.bias_count(), 32);
    }

    #[test]
    fn same_padding_keeps_or_halves_size() {
        for k in 1..=7 {
            for d in [5usize, 12, 100] {
                let s1 = Conv2dSpec::same(k, 1, 1, 1, d, d);
                assert_eq!(s1.output_size(d, d).unwrap(), (d, d), "k={k} d={d}");
                let s2 = Conv2dSpec::same(k, 1, 1, 2, d, d);
                let half = d.div_ceil(2);
                assert_eq!(s2.output_size(d, d).unwrap(), (half, half));
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let spec = Conv2dSpec::valid(2, 2, 1);
        let err = conv2d(
            &x,
            &spec,
            &Tensor::zeros(&[1, 2, 2, 2]),
            &Tensor::zeros(&[1]),
        )
        .unwrap_err();
        match err {
            TensorError::ShapeMismatch {
                dim, expected, got, ..
            } => {
                assert_eq!(dim, "input channels");
                assert_eq!((expected, got), (2, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn conv_rejects_kernel_larger_than_padded_input() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let spec = Conv2dSpec::valid(3, 1, 1);
        assert!(matches!(
            conv2d(
                &x,
                &spec,
                &Tensor::zeros(&[1, 1, 3, 3]),
                &Tensor::zeros(&[1])
            ),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn elu_values() {
        let x = t(&[3], &[0.0, 1.0, -1.0]);
        let y = elu(&x, 1.0).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 1.0);
        assert_abs_diff_eq!(y.data()[2] as f64, (-1.0f64).exp() - 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(y.data()[2] as f64, -0.6321, epsilon = 1e-4);
        assert!(elu(&x, 0.0).is_err());
    }

    #[test]
    fn relu_values_and_subgradient() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert!(relu(&t(&[4], &[-1., -2., -0.5, -3.]))
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let g = relu_backward(&x, &Tensor::ones(&[3]));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn add_and_pool() {
        let a = t(&[2], &[1., 2.]);
        assert_eq!(add(&a, &t(&[2], &[3., 4.])).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(add(&a, &Tensor::zeros(&[2])).unwrap(), a);
        assert!(add(&a, &Tensor::zeros(&[3])).is_err());

        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let g = global_avg_pool_backward(x.shape(), &Tensor::<f32>::ones(&[1, 1]));
        assert_eq!(g.data(), &[0.25; 4]);
    }

    #[test]
    fn dense_hand_arithmetic() {
        let y = dense(
            &t(&[1, 2], &[1., 2.]),
            &t(&[2, 1], &[1., 1.]),
            &t(&[1], &[0.5]),
        )
        .unwrap();
        assert_eq!(y.data(), &[3.5]);

        let x = t(&[2, 2], &[1., -2., 0.5, 3.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        assert!(dense(&x, &t(&[3, 1], &[1., 1., 1.]), &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn cross_entropy_limits() {
        let (loss, _) = softmax_cross_entropy(&t(&[1, 2], &[0.3, 0.3]), &[1]).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
        let (loss, _) = softmax_cross_entropy(&t(&[1, 2], &[50.0, 0.0]), &[0]).unwrap();
        assert!(loss < 1e-8);
        assert!(matches!(
            softmax_cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &[2]),
            Err(TensorError::LabelOutOfRange { label: 2, .. })
        ));
    }
}
