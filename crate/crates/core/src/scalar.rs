//! Scalar abstraction for the numeric core.
//!
//! Tensor math, the policy networks and the probe linear algebra are generic
//! over [`Scalar`] so the same code runs in `f32` (training speed) and `f64`
//! (verification mode: gradient checks, statistics). Concrete aliases for the
//! common instantiations live at the crate root.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable by the tensor engine and the linear algebra
/// helpers. The `gemm` hook lets each concrete type supply a fast dense
/// matrix kernel while generic code stays kernel-agnostic.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Dense matrix product `C <- alpha * A x B + beta * C` with explicit row
    /// and column strides, row-major friendly. Shapes: `A` is m x k, `B` is
    /// k x n, `C` is m x n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
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
        rsc: isize,
        csc: isize,
    );

    fn of_f64(x: f64) -> Self {
        FromPrimitive::from_f64(x).expect("value representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }
}

fn check_strides(len: usize, rows: usize, cols: usize, rs: isize, cs: isize, what: &str) {
    assert!(rs >= 0 && cs >= 0, "negative strides unsupported for {what}");
    if rows == 0 || cols == 0 {
        return;
    }
    let max = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(max < len, "{what} buffer too small: len {len}, max index {max}");
}

impl Scalar for f32 {
    fn gemm(
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
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        check_strides(a.len(), m, k, rsa, csa, "gemm A");
        check_strides(b.len(), k, n, rsb, csb, "gemm B");
        check_strides(c.len(), m, n, rsc, csc, "gemm C");
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
                rsc,
                csc,
            );
        }
    }
}

impl Scalar for f64 {
    fn gemm(
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
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        check_strides(a.len(), m, k, rsa, csa, "gemm A");
        check_strides(b.len(), k, n, rsb, csb, "gemm B");
        check_strides(c.len(), m, n, rsc, csc, "gemm C");
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
                rsc,
                csc,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_f64() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, 3, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_transposed_a_via_strides() {
        // A stored 3x2 row-major, used as its 2x3 transpose by swapping strides.
        let a_t = [1.0f32, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [7.0f32, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f32; 4];
        f32::gemm(2, 3, 2, 1.0, &a_t, 1, 2, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }
}
