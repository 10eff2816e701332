//! Scalar abstraction for the numeric core.
//!
//! Every network, schedule and metric in this crate is generic over
//! [`Scalar`]. Training runs in `f32`; gradient checks and oracles run in
//! `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type usable by tensors and layers.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; used for constants and hyperparameters.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Little-endian bytes of the value, for checksums.
    fn le_bytes(self) -> Vec<u8>;

    /// `C[m×n] += A[m×k] · B[k×n]` for a dense row-major `C`. Element
    /// `(i, p)` of `A` lives at `a[i * a_strides.0 + p * a_strides.1]`, and
    /// likewise for `B`.
    ///
    /// Panics if any addressed element is out of bounds.
    fn gemm_acc(m: usize, k: usize, n: usize, a: &[Self], a_strides: (usize, usize), b: &[Self], b_strides: (usize, usize), c: &mut [Self]);
}

fn check_extent(rows: usize, cols: usize, strides: (usize, usize), len: usize, what: &str) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) * strides.0 + (cols - 1) * strides.1;
        assert!(last < len, "gemm: {what} extent {last} out of bounds for length {len}");
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn le_bytes(self) -> Vec<u8> {
                self.to_le_bytes().to_vec()
            }

            fn gemm_acc(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                c: &mut [Self],
            ) {
                check_extent(m, k, a_strides, a.len(), "A");
                check_extent(k, n, b_strides, b.len(), "B");
                assert_eq!(c.len(), m * n, "gemm: C must be m×n");
                if m == 0 || n == 0 || k == 0 {
                    return;
                }
                // SAFETY: every element addressed through the strides was
                // bounds-checked above, and C is exactly m×n row-major.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        1.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
