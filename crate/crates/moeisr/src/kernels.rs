//! Forward and backward compute kernels over flat row-major buffers.
//!
//! Both the autodiff graph ops and the pure inference path call into these
//! functions, so the two paths agree bit-for-bit on identical inputs. All
//! loops are sequential with a fixed accumulation order; outputs depend only
//! on the inputs.

use crate::tensor::Scalar;

/// C[m,n] += A[m,k] * B[k,n]
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v = *c_v + a_ip * b_v;
            }
        }
    }
}

pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// C[m,n] = A[m,k] * B[n,k]^T  (used by backward: dA = dC * B^T)
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T * B[m,n]  (used by backward: dB = A^T * dC)
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut c = vec![T::zero(); k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v = *c_v + a_ip * b_v;
            }
        }
    }
    c
}

/// 2D cross-correlation, stride 1, zero padding. Input `[cin,h,w]`, kernel
/// `[cout,cin,kh,kw]` with odd kh/kw. Output `[cout,oh,ow]` where
/// `oh = h + 2*pad - kh + 1`.
pub fn conv2d<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kernel: &[T],
    cout: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Vec<T> {
    let oh = h + 2 * pad + 1 - kh;
    let ow = w + 2 * pad + 1 - kw;
    let mut out = vec![T::zero(); cout * oh * ow];
    for co in 0..cout {
        for ci in 0..cin {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            let k_base = ((co * cin) + ci) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let weight = kernel[k_base + ky * kw + kx];
                    // Output rows where the tap lands inside the input.
                    for oy in 0..oh {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut out[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                        // Valid ox range: 0 <= ox+kx-pad < w
                        let lo = pad.saturating_sub(kx);
                        let hi = (w + pad - kx).min(ow);
                        for ox in lo..hi {
                            let ix = ox + kx - pad;
                            out_row[ox] = out_row[ox] + weight * in_row[ix];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of [`conv2d`] w.r.t. its input.
pub fn conv2d_grad_input<T: Scalar>(
    grad_out: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kernel: &[T],
    cout: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Vec<T> {
    let oh = h + 2 * pad + 1 - kh;
    let ow = w + 2 * pad + 1 - kw;
    let mut grad_in = vec![T::zero(); cin * h * w];
    for co in 0..cout {
        for ci in 0..cin {
            let gi_plane = &mut grad_in[ci * h * w..(ci + 1) * h * w];
            let k_base = ((co * cin) + ci) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let weight = kernel[k_base + ky * kw + kx];
                    for oy in 0..oh {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let go_row = &grad_out[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                        let gi_row = &mut gi_plane[iy as usize * w..(iy as usize + 1) * w];
                        let lo = pad.saturating_sub(kx);
                        let hi = (w + pad - kx).min(ow);
                        for ox in lo..hi {
                            let ix = ox + kx - pad;
                            gi_row[ix] = gi_row[ix] + weight * go_row[ox];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Gradient of [`conv2d`] w.r.t. its kernel.
pub fn conv2d_grad_kernel<T: Scalar>(
    grad_out: &[T],
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Vec<T> {
    let oh = h + 2 * pad + 1 - kh;
    let ow = w + 2 * pad + 1 - kw;
    let mut grad_k = vec![T::zero(); cout * cin * kh * kw];
    for co in 0..cout {
        for ci in 0..cin {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            let k_base = ((co * cin) + ci) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = T::zero();
                    for oy in 0..oh {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let go_row = &grad_out[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let lo = pad.saturating_sub(kx);
                        let hi = (w + pad - kx).min(ow);
                        for ox in lo..hi {
                            acc = acc + go_row[ox] * in_row[ox + kx - pad];
                        }
                    }
                    grad_k[k_base + ky * kw + kx] = grad_k[k_base + ky * kw + kx] + acc;
                }
            }
        }
    }
    grad_k
}

/// Numerically stable softmax over each row of an `[rows, cols]` matrix.
pub fn softmax_rows<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let o_row = &mut out[r * cols..(r + 1) * cols];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for (o, &v) in o_row.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum = sum + e;
        }
        let inv = T::one() / sum;
        for o in o_row.iter_mut() {
            *o = *o * inv;
        }
    }
    out
}

/// Backward of row softmax: `dx_i = y_i * (g_i - sum_j g_j y_j)` per row.
pub fn softmax_rows_grad<T: Scalar>(y: &[T], grad: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let y_row = &y[r * cols..(r + 1) * cols];
        let g_row = &grad[r * cols..(r + 1) * cols];
        let mut dot = T::zero();
        for (&yv, &gv) in y_row.iter().zip(g_row) {
            dot = dot + yv * gv;
        }
        let d_row = &mut dx[r * cols..(r + 1) * cols];
        for ((d, &yv), &gv) in d_row.iter_mut().zip(y_row).zip(g_row) {
            *d = yv * (gv - dot);
        }
    }
    dx
}

/// `[c,h,w]` -> `[9c,h,w]`: each site's channel vector becomes the
/// concatenation of its 3x3 neighborhood, row-major neighbor order,
/// zero-padded at the borders.
pub fn unfold3x3<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); 9 * c * h * w];
    for (slot, (dy, dx)) in neighbor_offsets().into_iter().enumerate() {
        for ci in 0..c {
            let in_plane = &input[ci * h * w..(ci + 1) * h * w];
            let out_plane =
                &mut out[(slot * c + ci) * h * w..(slot * c + ci + 1) * h * w];
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let src_row = &in_plane[sy as usize * w..(sy as usize + 1) * w];
                let dst_row = &mut out_plane[y * w..(y + 1) * w];
                for x in 0..w {
                    let sx = x as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    dst_row[x] = src_row[sx as usize];
                }
            }
        }
    }
    out
}

/// Scatter-add counterpart of [`unfold3x3`].
pub fn unfold3x3_grad<T: Scalar>(grad_out: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut grad_in = vec![T::zero(); c * h * w];
    for (slot, (dy, dx)) in neighbor_offsets().into_iter().enumerate() {
        for ci in 0..c {
            let go_plane = &grad_out[(slot * c + ci) * h * w..(slot * c + ci + 1) * h * w];
            let gi_plane = &mut grad_in[ci * h * w..(ci + 1) * h * w];
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let gi = sy as usize * w + sx as usize;
                    gi_plane[gi] = gi_plane[gi] + go_plane[y * w + x];
                }
            }
        }
    }
    grad_in
}

fn neighbor_offsets() -> [(isize, isize); 9] {
    [
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, -1),
        (0, 0),
        (0, 1),
        (1, -1),
        (1, 0),
        (1, 1),
    ]
}

/// `[c,h,w]` -> `[h*w, c]`: one row per spatial site.
pub fn chw_to_rows<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let sites = h * w;
    let mut out = vec![T::zero(); sites * c];
    for ci in 0..c {
        let plane = &input[ci * sites..(ci + 1) * sites];
        for (s, &v) in plane.iter().enumerate() {
            out[s * c + ci] = v;
        }
    }
    out
}

/// Inverse permutation of [`chw_to_rows`] (used for its gradient).
pub fn rows_to_chw<T: Scalar>(rows: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let sites = h * w;
    let mut out = vec![T::zero(); c * sites];
    for s in 0..sites {
        let row = &rows[s * c..(s + 1) * c];
        for (ci, &v) in row.iter().enumerate() {
            out[ci * sites + s] = v;
        }
    }
    out
}
