//! Dense N×C×H×W tensors over a selectable float precision.
//!
//! The network trains in `f32` and verifies gradients in `f64`; every kernel
//! is generic over [`Element`] so both precisions share one code path.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Scalar element of a [`Tensor`]: `f32` for training, `f64` for
/// verification.
pub trait Element:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const ZERO: Self;
    const ONE: Self;
    /// Distance kept between sigmoid outputs and the interval ends so the
    /// (0, 1) range stays open even when the exponential saturates.
    const SIGMOID_MARGIN: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    /// C := alpha * A(m×k) * B(k×n) + beta * C(m×n), arbitrary strides.
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
}

macro_rules! impl_element {
    ($t:ty, $margin:expr, $gemm:path) => {
        impl Element for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const SIGMOID_MARGIN: Self = $margin;

            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }

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
                // SAFETY: callers size the slices to cover the strided
                // m×k / k×n / m×n index ranges; debug_asserts below check the
                // maximal reachable offsets.
                debug_assert!(max_offset(m, k, rsa, csa) < a.len());
                debug_assert!(max_offset(k, n, rsb, csb) < b.len());
                debug_assert!(max_offset(m, n, rsc, csc) < c.len());
                unsafe {
                    $gemm(
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
    };
}

impl_element!(f32, 1e-6, matrixmultiply::sgemm);
impl_element!(f64, 1e-12, matrixmultiply::dgemm);

fn max_offset(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows as isize - 1) * rs + (cols as isize - 1) * cs) as usize
}

/// Dense batch×channel×height×width array in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![E::ZERO; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<E>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::contract(format!(
                "tensor data length {} does not match dims {}x{}x{}x{}",
                data.len(),
                n,
                c,
                h,
                w
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }
    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    /// Flat offset of (n, c, y, x).
    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> E {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut E {
        let i = self.offset(n, c, y, x);
        &mut self.data[i]
    }

    /// The h×w plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[E] {
        let start = (n * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    pub fn same_dims(&self, other: &Tensor<E>) -> bool {
        self.dims() == other.dims()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts between precisions through f64.
    pub fn convert<T: Element>(&self) -> Tensor<T> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}
