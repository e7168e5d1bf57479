//! Raw numeric kernels shared by the tape operations.

use super::Scalar;

/// Unfolds a `[c, h, w]` image into a `[c * kh * kw, h * w]` column matrix
/// for a same-padded, stride-1 convolution. Out-of-bounds taps read zero.
pub fn im2col_same<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    let mut cols = vec![T::zero(); c * kh * kw * hw];
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    let shift = kx as isize - pw as isize;
                    let x0 = (-shift).max(0) as usize;
                    let x1 = (w as isize - shift).min(w as isize).max(0) as usize;
                    for x in x0..x1 {
                        dst_row[x] = src_row[(x as isize + shift) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_same`]: scatters column gradients back onto the image.
pub(crate) fn col2im_same<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    out: &mut [T],
) {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let shift = kx as isize - pw as isize;
                    let x0 = (-shift).max(0) as usize;
                    let x1 = (w as isize - shift).min(w as isize).max(0) as usize;
                    let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src_row = &src[y * w..(y + 1) * w];
                    for x in x0..x1 {
                        let d = &mut dst_row[(x as isize + shift) as usize];
                        *d = *d + src_row[x];
                    }
                }
            }
        }
    }
}

/// `c[m,n] (+)= a[m,k] * b[k,n]`, all row-major and contiguous.
pub(crate) fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths checked above; strides describe contiguous row-major storage.
    unsafe {
        T::gemm(
            m, k, n, T::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        )
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`.
pub(crate) fn matmul_bt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: b is read as its transpose via swapped strides.
    unsafe {
        T::gemm(
            m, k, n, T::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            T::one(),
            c.as_mut_ptr(), n as isize, 1,
        )
    }
}

/// `c[m,n] = a[k,m]^T * b[k,n]`.
pub(crate) fn matmul_at<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: a is read as its transpose via swapped strides.
    unsafe {
        T::gemm(
            m, k, n, T::one(),
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            T::zero(),
            c.as_mut_ptr(), n as isize, 1,
        )
    }
}

/// Same-padded stride-1 convolution without gradient tracking.
///
/// `input` is `[c_in, h, w]`, `filters` is `[c_out, c_in, kh, kw]`; returns
/// `[c_out, h, w]`.
pub fn conv2d_same<T: Scalar>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    filters: &[T],
    c_out: usize,
    kh: usize,
    kw: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let hw = h * w;
    let cols = im2col_same(input, c_in, h, w, kh, kw);
    let mut out = vec![T::zero(); c_out * hw];
    if let Some(b) = bias {
        for (o, row) in out.chunks_exact_mut(hw).enumerate() {
            row.fill(b[o]);
        }
    }
    matmul(c_out, c_in * kh * kw, hw, filters, &cols, &mut out, bias.is_some());
    out
}
