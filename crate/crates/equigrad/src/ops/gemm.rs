//! Row-major dgemm wrapper. The only unsafe in the crate lives here.

/// C = alpha * A * B + beta * C over row-major slices.
///
/// Logical dims: A is m x k, B is k x n, C is m x n. With `a_trans` the slice
/// `a` holds the k x m row-major transpose of A (likewise `b_trans` holds the
/// n x k transpose of B); the multiplication itself is unchanged.
#[allow(clippy::too_many_arguments)] // mirrors the conventional gemm signature
pub(crate) fn dgemm_rowmajor(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "lhs length");
    assert_eq!(b.len(), k * n, "rhs length");
    assert_eq!(c.len(), m * n, "out length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths cover every index reachable through the strides,
    // checked by the asserts above; the buffers cannot alias because `c` is
    // the only mutable borrow.
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
