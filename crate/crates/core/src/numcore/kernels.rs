//! Raw dense kernels shared by the tape and the inference paths.

/// Strided view description of a row-major matrix operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows × cols` buffer, seen as `cols × rows`.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self {
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `c = beta * c + a · b` where `c` is row-major `a.rows × b.cols`.
pub(crate) fn gemm(a: &[f64], la: Layout, b: &[f64], lb: Layout, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(la.cols, lb.rows);
    let (m, k, n) = (la.rows, la.cols, lb.cols);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the layouts describe in-bounds views of `a` and `b`, and `c`
    // holds exactly m*n contiguous values.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.row_stride,
            la.col_stride,
            b.as_ptr(),
            lb.row_stride,
            lb.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major product of `a (m×k)` and `b (k×n)`, or `a · bᵀ` when `b` is
/// stored as `n×k` and `transpose_b` is set.
pub(crate) fn matmul(
    a: &[f64],
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    transpose_b: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let lb = if transpose_b {
        Layout::transposed(n, k)
    } else {
        Layout::row_major(k, n)
    };
    gemm(a, Layout::row_major(m, k), b, lb, 0.0, &mut out);
    out
}
