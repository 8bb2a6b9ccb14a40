//! Thin safe wrapper over `matrixmultiply::dgemm` for row-major operands.

/// A borrowed `rows × cols` matrix view over a row-major buffer, optionally
/// read transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    /// Rows and columns of the stored (untransposed) matrix.
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize, isize, isize) {
        let (rs, cs) = (self.cols as isize, 1isize);
        if self.transposed {
            (self.cols, self.rows, cs, rs)
        } else {
            (self.rows, self.cols, rs, cs)
        }
    }
}

/// `out = a · b + beta · out`, where `out` is row-major `m × n`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut [f64]) {
    let (m, k, rsa, csa) = a.logical();
    let (kb, n, rsb, csb) = b.logical();
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output buffer length");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe in-bounds views: `a` spans m×k over a
    // buffer of exactly rows*cols = m*k elements (likewise `b`), and `out` was
    // checked to hold m×n row-major elements. The output does not alias the
    // inputs since it is a distinct &mut borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_with_transposes() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        let expected = naive(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        gemm(MatRef::new(&a, m, k), MatRef::new(&b, k, n), 0.0, &mut out);
        for (x, y) in out.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ stored as k×m, read transposed
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut out2 = vec![1.0; m * n];
        gemm(
            MatRef::new(&at, k, m).t(),
            MatRef::new(&b, k, n),
            1.0,
            &mut out2,
        );
        for (x, y) in out2.iter().zip(&expected) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }
}
