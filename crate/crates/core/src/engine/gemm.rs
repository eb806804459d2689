//! Thin safe wrapper over `matrixmultiply::sgemm` for row-major operands.

/// Operand layout: `false` means the slice holds the matrix row-major,
/// `true` means it holds the transpose row-major.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f32],
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn n(data: &'a [f32]) -> Self {
        Self {
            data,
            transposed: false,
        }
    }

    pub fn t(data: &'a [f32]) -> Self {
        Self {
            data,
            transposed: true,
        }
    }
}

/// `c = beta * c + a · b` where `a` is `m×k`, `b` is `k×n`, `c` is `m×n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32]) {
    assert!(a.data.len() >= m * k, "gemm: lhs too short");
    assert!(b.data.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a.transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b.transposed { (1, k) } else { (n, 1) };
    // SAFETY: bounds checked above; strides describe dense row-major storage
    // of the (possibly transposed) operands, and `c` does not alias them.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
