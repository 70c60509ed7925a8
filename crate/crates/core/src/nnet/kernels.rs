//! Dense kernels on row-major slices. Every routine accumulates into its output.

use super::tensor::Scalar;

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `C[m x n] += A[m x k] * B[k x n]`.
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], ci);
            }
        }
    }
}

/// `C[m x n] += A[m x k] * B[n x k]^T`.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(ai, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `C[m x n] += A[k x m]^T * B[k x n]`.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let bp = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api != T::zero() {
                axpy(api, bp, &mut c[i * n..(i + 1) * n]);
            }
        }
    }
}

/// Geometry of one convolution applied to a single `c x h x w` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let hp = h + 2 * pad;
        let wp = w + 2 * pad;
        if stride == 0 || kernel == 0 || hp < kernel || wp < kernel {
            return None;
        }
        Some(ConvGeom {
            c,
            h,
            w,
            kernel,
            stride,
            pad,
            ho: (hp - kernel) / stride + 1,
            wo: (wp - kernel) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.c * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate for output `(oy, ox)` and kernel tap `(ky, kx)`, if inside.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

/// Unfolds `x` (`c x h x w`) into `col` (`c*k*k x ho*wo`), zero padded.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let k = g.kernel;
    let n = g.cols();
    for ch in 0..g.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        dst[oy * g.wo + ox] = match g.src(oy, ox, ky, kx) {
                            Some((y, xx)) => x[(ch * g.h + y) * g.w + xx],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back onto `dx`.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let k = g.kernel;
    let n = g.cols();
    for ch in 0..g.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((y, xx)) = g.src(oy, ox, ky, kx) {
                            dx[(ch * g.h + y) * g.w + xx] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}
