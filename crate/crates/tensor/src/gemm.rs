use crate::Float;

/// Row/column strides of a matrix operand stored in a flat slice.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Layout { rows, cols, rs: cols as isize, cs: 1 }
    }

    /// Transposed view of a row-major `rows × cols` buffer.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Layout { rows: cols, cols: rows, rs: 1, cs: cols as isize }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        (self.rows - 1) * self.rs as usize + (self.cols - 1) * self.cs as usize
    }
}

/// `c ← alpha·a·b + beta·c` with `c` row-major.
pub(crate) fn gemm(
    alpha: Float,
    a: &[Float],
    la: Layout,
    b: &[Float],
    lb: Layout,
    beta: Float,
    c: &mut [Float],
) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimensions");
    let (m, k, n) = (la.rows, la.cols, lb.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > la.max_offset());
    assert!(b.len() > lb.max_offset());
    // SAFETY: bounds of every strided access were checked above.
    unsafe { raw_gemm(m, k, n, alpha, a.as_ptr(), la, b.as_ptr(), lb, beta, c.as_mut_ptr(), n) }
}

#[cfg(not(feature = "f32"))]
#[allow(clippy::too_many_arguments)]
unsafe fn raw_gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Float,
    a: *const Float,
    la: Layout,
    b: *const Float,
    lb: Layout,
    beta: Float,
    c: *mut Float,
    ldc: usize,
) {
    matrixmultiply::dgemm(m, k, n, alpha, a, la.rs, la.cs, b, lb.rs, lb.cs, beta, c, ldc as isize, 1);
}

#[cfg(feature = "f32")]
#[allow(clippy::too_many_arguments)]
unsafe fn raw_gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Float,
    a: *const Float,
    la: Layout,
    b: *const Float,
    lb: Layout,
    beta: Float,
    c: *mut Float,
    ldc: usize,
) {
    matrixmultiply::sgemm(m, k, n, alpha, a, la.rs, la.cs, b, lb.rs, lb.cs, beta, c, ldc as isize, 1);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product_with_transposes() {
        let a: Vec<Float> = (0..6).map(|v| v as Float).collect(); // 2x3
        let b: Vec<Float> = (0..12).map(|v| (v as Float) * 0.5).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(1.0, &a, Layout::row_major(2, 3), &b, Layout::row_major(3, 4), 0.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let expect: Float = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], expect);
            }
        }
        // aᵀ·a is 3x3
        let mut d = vec![0.0; 9];
        gemm(1.0, &a, Layout::transposed(2, 3), &a, Layout::row_major(2, 3), 0.0, &mut d);
        for i in 0..3 {
            for j in 0..3 {
                let expect: Float = (0..2).map(|p| a[p * 3 + i] * a[p * 3 + j]).sum();
                assert_eq!(d[i * 3 + j], expect);
            }
        }
    }
}
