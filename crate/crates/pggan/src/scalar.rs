//! Element type abstraction: networks train in `f32`, the gradient-check
//! suites run the same code in `f64`.

use std::fmt::{Debug, Display};

/// Floating-point element of a tensor.
pub trait Scalar:
    num_traits::Float + std::iter::Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// C = alpha * A * B + beta * C with explicit row/column strides.
    ///
    /// `a` is m x k, `b` is k x n, `c` is m x n. Strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        check_gemm_bounds(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len());
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        check_gemm_bounds(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len());
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    rsa: isize,
    csa: isize,
    b_len: usize,
    rsb: isize,
    csb: isize,
    c_len: usize,
) {
    let max_index = |rows: usize, cols: usize, rs: isize, cs: isize| -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
        assert!(last >= 0, "negative stride index in gemm");
        last as usize + 1
    };
    assert!(max_index(m, k, rsa, csa) <= a_len, "gemm: A out of bounds");
    assert!(max_index(k, n, rsb, csb) <= b_len, "gemm: B out of bounds");
    assert!(m * n <= c_len, "gemm: C out of bounds");
}

/// Plain m x k by k x n row-major product into a fresh buffer.
pub fn matmul<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S]) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    S::gemm_strided(
        m,
        k,
        n,
        S::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        S::zero(),
        &mut c,
    );
    c
}
