//! Thin safe wrapper over the `matrixmultiply` double precision kernel.

/// A strided read-only view of a row-major or transposed matrix.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: cols, col_stride: 1 }
    }

    /// Views a row-major `rows × cols` buffer as its `cols × rows` transpose.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `c ← a·b + beta·c` where `a` is `m×k`, `b` is `k×n` and `c` is row-major `m×n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert_eq!(c.len(), m * n, "gemm output buffer");
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    assert!(a.max_index(m, k) < a.data.len(), "gemm lhs view out of bounds");
    assert!(b.max_index(k, n) < b.data.len(), "gemm rhs view out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches, and `c`
    // is an exclusive borrow of exactly m×n elements with unit column stride.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
