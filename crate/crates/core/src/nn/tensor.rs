use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point element type of the layer engine: `f32` for training and
/// inference, `f64` for gradient checks.
pub trait Scalar:
    Float + Debug + Default + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// `a` (`m x k`), `b` (`k x n`) and `c` (`m x n`) must be valid for every
    /// element their strides address, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        f64::from(self)
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row/column strides of a matrix view.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strides(pub usize, pub usize);

fn extent(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * s.0 + (cols - 1) * s.1 + 1
    }
}

/// Bounds-checked `c = a * b + beta * c`, `a` is `m x k`, `b` is `k x n`.
///
/// `c` must not alias itself through its strides (distinct rows/columns map to
/// distinct elements); `a` and `b` may overlap freely.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    sa: Strides,
    b: &[F],
    sb: Strides,
    beta: F,
    c: &mut [F],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(extent(m, k, sa) <= a.len(), "gemm: lhs out of bounds");
    assert!(extent(k, n, sb) <= b.len(), "gemm: rhs out of bounds");
    assert!(extent(m, n, sc) <= c.len(), "gemm: output out of bounds");
    // SAFETY: all accessed offsets were bounds-checked above; `c` is uniquely borrowed.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        )
    }
}

/// Dense rank-3 tensor laid out as `[batch][time][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: [usize; 3],
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(n: usize, len: usize, ch: usize) -> Self {
        Self { shape: [n, len, ch], data: vec![F::zero(); n * len * ch] }
    }

    pub fn from_vec(n: usize, len: usize, ch: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), n * len * ch, "tensor data does not match shape");
        Self { shape: [n, len, ch], data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn len(&self) -> usize {
        self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.shape[2]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn reshape(self, n: usize, len: usize, ch: usize) -> Self {
        Self::from_vec(n, len, ch, self.data)
    }

    /// One batch element as a `len * ch` slice.
    pub fn item(&self, i: usize) -> &[F] {
        let stride = self.shape[1] * self.shape[2];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn at(&self, n: usize, t: usize, c: usize) -> F {
        self.data[(n * self.shape[1] + t) * self.shape[2] + c]
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&x| G::of(x.f64())).collect() }
    }
}
