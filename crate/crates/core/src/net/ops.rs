//! Dense kernels shared by the forward and backward passes.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type of the network. `f32` for training, `f64`
/// for gradient verification.
pub trait Scalar: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a·b + beta * c` on raw strided storage.
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

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `c (m×n) = op(a) · op(b) + beta · c`.
///
/// `a` holds `m×k` (or `k×m` when `trans_a`), `b` holds `k×n` (or `n×k`
/// when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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
        )
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: T = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .fold(T::zero(), |s, (x, y)| s + *x * *y);
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            acc[i] = acc[i] + ca[i] * cb[i];
        }
    }
    let mut s = T::zero();
    for v in acc {
        s = s + v;
    }
    s + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// `out = W x + bias`, `W` row-major `rows × x.len()`.
pub fn affine<T: Scalar>(w: &[T], bias: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for ((o, row), b) in out.iter_mut().zip(w.chunks_exact(cols)).zip(bias) {
        *o = dot(row, x) + *b;
    }
}

/// `dx += Wᵀ dy`
pub fn affine_backward_input<T: Scalar>(w: &[T], dy: &[T], dx: &mut [T]) {
    let cols = dx.len();
    for (row, g) in w.chunks_exact(cols).zip(dy) {
        if *g != T::zero() {
            axpy(*g, row, dx);
        }
    }
}

/// `dW += dy ⊗ x`, `db += dy`
pub fn affine_backward_params<T: Scalar>(dy: &[T], x: &[T], dw: &mut [T], db: &mut [T]) {
    let cols = x.len();
    for ((row, g), b) in dw.chunks_exact_mut(cols).zip(dy).zip(db.iter_mut()) {
        if *g != T::zero() {
            axpy(*g, x, row);
        }
        *b = *b + *g;
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Numerically stable log-softmax.
pub fn log_softmax<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = logits
        .iter()
        .fold(T::zero(), |s, z| s + (*z - max).exp());
    let log_z = max + sum.ln();
    for (o, z) in out.iter_mut().zip(logits) {
        *o = *z - log_z;
    }
}

/// Unfolds a `channels × size × size` image into a `(channels·k·k) ×
/// (out·out)` matrix for a valid convolution with the given stride.
pub fn im2col<T: Scalar>(
    input: &[T],
    channels: usize,
    size: usize,
    kernel: usize,
    stride: usize,
    out: usize,
    col: &mut [T],
) {
    let npos = out * out;
    debug_assert_eq!(col.len(), channels * kernel * kernel * npos);
    for c in 0..channels {
        let plane = &input[c * size * size..(c + 1) * size * size];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut col[row * npos..(row + 1) * npos];
                for oy in 0..out {
                    let src = &plane[(oy * stride + ky) * size..];
                    for ox in 0..out {
                        dst[oy * out + ox] = src[ox * stride + kx];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image.
pub fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    size: usize,
    kernel: usize,
    stride: usize,
    out: usize,
    image: &mut [T],
) {
    let npos = out * out;
    for c in 0..channels {
        let plane = &mut image[c * size * size..(c + 1) * size * size];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &col[row * npos..(row + 1) * npos];
                for oy in 0..out {
                    for ox in 0..out {
                        let i = (oy * stride + ky) * size + ox * stride + kx;
                        plane[i] = plane[i] + src[oy * out + ox];
                    }
                }
            }
        }
    }
}
