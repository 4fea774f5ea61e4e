use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::OnceLock;

use cblas_sys::{CBLAS_LAYOUT, CBLAS_TRANSPOSE};

/// Scalar type a [`Tensor`](crate::Tensor) can hold.
///
/// Storage precision is the element type itself; reductions accumulate in
/// `f64` regardless.
pub trait Element:
    Copy
    + Default
    + Debug
    + Display
    + PartialOrd
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;

    /// `c ← a·b + beta·c` for strided row/column-major operands.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

fn extent(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

/// A strided operand as CBLAS sees it: transpose flag plus leading dimension,
/// or `None` when neither stride is unit.
fn blas_layout(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> Option<(CBLAS_TRANSPOSE, i32)> {
    if cs == 1 && rs as usize >= cols.max(1) {
        Some((CBLAS_TRANSPOSE::CblasNoTrans, rs as i32))
    } else if rs == 1 && cs as usize >= rows.max(1) {
        Some((CBLAS_TRANSPOSE::CblasTrans, cs as i32))
    } else if rows == 1 && cs == 1 {
        Some((CBLAS_TRANSPOSE::CblasNoTrans, cols.max(1) as i32))
    } else if cols == 1 && rs == 1 {
        Some((CBLAS_TRANSPOSE::CblasTrans, rows.max(1) as i32))
    } else {
        None
    }
}

macro_rules! impl_element {
    ($t:ty, $name:literal, $blas:path, $fallback:path, $tol:expr) => {
        impl Element for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const NAME: &'static str = $name;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(a.len() >= extent(m, k, a_strides), "gemm: lhs buffer too short");
                assert!(b.len() >= extent(k, n, b_strides), "gemm: rhs buffer too short");
                assert!(c.len() >= extent(m, n, c_strides), "gemm: output buffer too short");
                if m == 0 || n == 0 {
                    return;
                }
                static TRUSTED: OnceLock<bool> = OnceLock::new();
                let trusted = *TRUSTED.get_or_init(|| blas_agrees(blas, fallback, $tol));
                if !(trusted && blas(m, k, n, a, a_strides, b, b_strides, beta, c, c_strides)) {
                    fallback(m, k, n, a, a_strides, b, b_strides, beta, c, c_strides);
                }

                /// Runs CBLAS if the operand layouts allow it.
                #[allow(clippy::too_many_arguments)]
                fn blas(
                    m: usize,
                    k: usize,
                    n: usize,
                    a: &[$t],
                    a_strides: (isize, isize),
                    b: &[$t],
                    b_strides: (isize, isize),
                    beta: $t,
                    c: &mut [$t],
                    c_strides: (isize, isize),
                ) -> bool {
                    // A column-major output is the row-major transpose: Cᵀ = Bᵀ·Aᵀ.
                    let swap = !(c_strides.1 == 1 && c_strides.0 as usize >= n) && c_strides.0 == 1;
                    let (m2, n2, a2, as2, b2, bs2, cs2) = if swap {
                        let t = |(r, c): (isize, isize)| (c, r);
                        (n, m, b, t(b_strides), a, t(a_strides), t(c_strides))
                    } else {
                        (m, n, a, a_strides, b, b_strides, c_strides)
                    };
                    let ldc_ok = cs2.1 == 1 && cs2.0 as usize >= n2.max(1);
                    match (blas_layout(m2, k, as2), blas_layout(k, n2, bs2)) {
                        (Some((ta, lda)), Some((tb, ldb))) if ldc_ok && k > 0 => {
                            // SAFETY: the caller bounds-checked the extents and
                            // the layouts describe exactly those strided views.
                            unsafe {
                                $blas(
                                    CBLAS_LAYOUT::CblasRowMajor,
                                    ta,
                                    tb,
                                    m2 as i32,
                                    n2 as i32,
                                    k as i32,
                                    1.0,
                                    a2.as_ptr(),
                                    lda,
                                    b2.as_ptr(),
                                    ldb,
                                    beta,
                                    c.as_mut_ptr(),
                                    cs2.0 as i32,
                                );
                            }
                            true
                        }
                        _ => false,
                    }
                }

                #[allow(clippy::too_many_arguments)]
                fn fallback(
                    m: usize,
                    k: usize,
                    n: usize,
                    a: &[$t],
                    a_strides: (isize, isize),
                    b: &[$t],
                    b_strides: (isize, isize),
                    beta: $t,
                    c: &mut [$t],
                    c_strides: (isize, isize),
                ) {
                    // SAFETY: extents were bounds-checked by the caller; this
                    // kernel accepts arbitrary strides.
                    unsafe {
                        $fallback(
                            m,
                            k,
                            n,
                            1.0,
                            a.as_ptr(),
                            a_strides.0,
                            a_strides.1,
                            b.as_ptr(),
                            b_strides.0,
                            b_strides.1,
                            beta,
                            c.as_mut_ptr(),
                            c_strides.0,
                            c_strides.1,
                        );
                    }
                }
            }
        }
    };
}

type GemmFn<T> = fn(usize, usize, usize, &[T], (isize, isize), &[T], (isize, isize), T, &mut [T], (isize, isize));
type BlasFn<T> = fn(usize, usize, usize, &[T], (isize, isize), &[T], (isize, isize), T, &mut [T], (isize, isize)) -> bool;

/// Some OpenBLAS builds pick a broken kernel for particular shapes and
/// transpositions on some CPUs. Compares the library against the portable
/// kernel once over every layout and a few awkward sizes.
fn blas_agrees<T: Element>(blas: BlasFn<T>, fallback: GemmFn<T>, tol: f64) -> bool {
    let shapes = [(121, 8, 288), (25, 64, 288), (33, 17, 65), (7, 300, 5), (64, 64, 64)];
    for (m, k, n) in shapes {
        let a: Vec<T> = (0..m * k).map(|i| T::from_f64(((i * 7919) % 211) as f64 / 105.0 - 1.0)).collect();
        let b: Vec<T> = (0..k * n).map(|i| T::from_f64(((i * 104_729) % 199) as f64 / 99.0 - 1.0)).collect();
        for sa in [(k as isize, 1), (1, m as isize)] {
            for sb in [(n as isize, 1), (1, k as isize)] {
                for sc in [(n as isize, 1), (1, m as isize)] {
                    let mut want = vec![T::ZERO; m * n];
                    fallback(m, k, n, &a, sa, &b, sb, T::ZERO, &mut want, sc);
                    let mut got = vec![T::ZERO; m * n];
                    if !blas(m, k, n, &a, sa, &b, sb, T::ZERO, &mut got, sc) {
                        continue;
                    }
                    let scale = (k as f64).sqrt();
                    if got.iter().zip(&want).any(|(g, w)| (g.to_f64() - w.to_f64()).abs() > tol * scale) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

impl_element!(f32, "f32", cblas_sys::cblas_sgemm, matrixmultiply::sgemm, 1e-4);
impl_element!(f64, "f64", cblas_sys::cblas_dgemm, matrixmultiply::dgemm, 1e-10);
