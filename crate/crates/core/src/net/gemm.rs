//! Safe wrapper over the strided matrixmultiply kernels.
#![allow(unsafe_code)]

use super::Scalar;

/// Strides of a logical `rows x cols` matrix view.
#[derive(Clone, Copy)]
pub(crate) struct View {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn rm(rows: usize, cols: usize) -> Self {
        Self { rows, cols, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major `cols x rows` buffer.
    pub fn rm_t(rows: usize, cols: usize) -> Self {
        Self { rows, cols, rs: 1, cs: rows }
    }

    fn fits(&self, len: usize) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < len
    }
}

/// `c = a * b + beta * c` with `c` row-major.
pub(crate) fn gemm(a: &[Scalar], av: View, b: &[Scalar], bv: View, beta: Scalar, c: &mut [Scalar]) {
    let (m, k, n) = (av.rows, av.cols, bv.cols);
    assert_eq!(bv.rows, k, "inner dimensions differ");
    assert!(av.fits(a.len()) && bv.fits(b.len()) && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the asserts above bound every strided access inside the three
    // slices, and `c` is uniquely borrowed.
    unsafe {
        kernel(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(not(feature = "f64"))]
use matrixmultiply::sgemm as kernel;
#[cfg(feature = "f64")]
use matrixmultiply::dgemm as kernel;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product_with_transposes() {
        let a: [Scalar; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b: [Scalar; 6] = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [1.0; 4];
        gemm(&a, View::rm(2, 3), &b, View::rm(3, 2), 1.0, &mut c);
        assert_eq!(c, [59.0, 65.0, 140.0, 155.0]);
        // a^T (3x2) times a (2x3).
        let mut d = [0.0; 9];
        gemm(&a, View::rm_t(3, 2), &a, View::rm(2, 3), 0.0, &mut d);
        assert_eq!(d, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
