/// Row-major matrix product `c (+)= op(a) * op(b)`.
///
/// `a` is `m x k` after the optional transpose, `b` is `k x n`. The
/// transposes are expressed through strides so no copies are made.
#[allow(clippy::too_many_arguments)]
pub fn matmul_into(
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "lhs buffer length");
    assert_eq!(b.len(), k * n, "rhs buffer length");
    assert_eq!(c.len(), m * n, "output buffer length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    // Stored a is (m x k) or, when transposed, (k x m).
    let (rsa, csa) = if a_transposed {
        (1isize, m as isize)
    } else {
        (k as isize, 1isize)
    };
    let (rsb, csb) = if b_transposed {
        (1isize, k as isize)
    } else {
        (n as isize, 1isize)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every index reachable through
    // (m, k, n) and the strides lies inside the three slices, and `c` does
    // not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
