//! Dense f64 compute kernels behind the tape ops.
//!
//! All kernels write each output element from exactly one task with a fixed
//! inner summation order, so results are bit-identical regardless of the
//! rayon thread count.

use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 1 << 16;

/// C += A (m×k) · B (k×n)
pub fn matmul_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, c_row: &mut [f64]| {
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..kk * n + n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, c_row)| row(i, c_row));
    } else {
        for (i, c_row) in c.chunks_mut(n).enumerate() {
            row(i, c_row);
        }
    }
}

/// C += A (m×k) · Bᵀ where B is stored n×k.
pub fn matmul_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, c_row: &mut [f64]| {
        let a_row = &a[i * k..i * k + k];
        for (j, cj) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..j * k + k];
            let mut acc = 0.0;
            for (av, bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cj += acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, c_row)| row(i, c_row));
    } else {
        for (i, c_row) in c.chunks_mut(n).enumerate() {
            row(i, c_row);
        }
    }
}

/// C += Aᵀ · B where A is stored m×k (so C is k×n).
pub fn matmul_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    let row = |kk: usize, c_row: &mut [f64]| {
        for i in 0..m {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[i * n..i * n + n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && k > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(kk, c_row)| row(kk, c_row));
    } else {
        for (kk, c_row) in c.chunks_mut(n).enumerate() {
            row(kk, c_row);
        }
    }
}

/// Strided valid-mode 1-D convolution with a shared filterbank.
///
/// x: ch×n, w: f×width, out: ch×f×t with t = (n − width)/stride + 1.
pub fn conv1d(x: &[f64], w: &[f64], out: &mut [f64], ch: usize, n: usize, f: usize, width: usize, stride: usize) {
    let t = (n - width) / stride + 1;
    debug_assert_eq!(x.len(), ch * n);
    debug_assert_eq!(w.len(), f * width);
    debug_assert_eq!(out.len(), ch * f * t);
    let one = |cf: usize, o_row: &mut [f64]| {
        let (c, fi) = (cf / f, cf % f);
        let x_row = &x[c * n..c * n + n];
        let w_row = &w[fi * width..fi * width + width];
        for (ti, ov) in o_row.iter_mut().enumerate() {
            let seg = &x_row[ti * stride..ti * stride + width];
            let mut acc = 0.0;
            for (sv, wv) in seg.iter().zip(w_row) {
                acc += sv * wv;
            }
            *ov = acc;
        }
    };
    if ch * f * t * width >= PAR_THRESHOLD {
        out.par_chunks_mut(t).enumerate().for_each(|(cf, o_row)| one(cf, o_row));
    } else {
        for (cf, o_row) in out.chunks_mut(t).enumerate() {
            one(cf, o_row);
        }
    }
}

/// Gradient of [`conv1d`] w.r.t. its input: dx[c, ts+u] += Σ_f dout[c,f,t]·w[f,u].
pub fn conv1d_grad_input(dout: &[f64], w: &[f64], dx: &mut [f64], ch: usize, n: usize, f: usize, width: usize, stride: usize) {
    let t = (n - width) / stride + 1;
    let one = |c: usize, dx_row: &mut [f64]| {
        for fi in 0..f {
            let w_row = &w[fi * width..fi * width + width];
            let d_row = &dout[(c * f + fi) * t..(c * f + fi) * t + t];
            for (ti, dv) in d_row.iter().enumerate() {
                if *dv == 0.0 {
                    continue;
                }
                let seg = &mut dx_row[ti * stride..ti * stride + width];
                for (sv, wv) in seg.iter_mut().zip(w_row) {
                    *sv += dv * wv;
                }
            }
        }
    };
    if ch > 1 && ch * f * t * width >= PAR_THRESHOLD {
        dx.par_chunks_mut(n).enumerate().for_each(|(c, dx_row)| one(c, dx_row));
    } else {
        for (c, dx_row) in dx.chunks_mut(n).enumerate() {
            one(c, dx_row);
        }
    }
}

/// Gradient of [`conv1d`] w.r.t. the filterbank: dw[f,u] += Σ_{c,t} dout[c,f,t]·x[c, ts+u].
pub fn conv1d_grad_weight(dout: &[f64], x: &[f64], dw: &mut [f64], ch: usize, n: usize, f: usize, width: usize, stride: usize) {
    let t = (n - width) / stride + 1;
    let one = |fi: usize, dw_row: &mut [f64]| {
        for c in 0..ch {
            let x_row = &x[c * n..c * n + n];
            let d_row = &dout[(c * f + fi) * t..(c * f + fi) * t + t];
            for (ti, dv) in d_row.iter().enumerate() {
                if *dv == 0.0 {
                    continue;
                }
                let seg = &x_row[ti * stride..ti * stride + width];
                for (wv, sv) in dw_row.iter_mut().zip(seg) {
                    *wv += dv * sv;
                }
            }
        }
    };
    if f > 1 && ch * f * t * width >= PAR_THRESHOLD {
        dw.par_chunks_mut(width).enumerate().for_each(|(fi, dw_row)| one(fi, dw_row));
    } else {
        for (fi, dw_row) in dw.chunks_mut(width).enumerate() {
            one(fi, dw_row);
        }
    }
}

/// Transposed 1-D convolution (the adjoint of [`conv1d`] in its input).
///
/// x: ch×f×t, w: f×width, out: ch×n_out where the natural length is
/// (t−1)·stride + width; `n_out` may be shorter (truncate) or longer (zero pad).
pub fn conv1d_transpose(x: &[f64], w: &[f64], out: &mut [f64], ch: usize, f: usize, t: usize, width: usize, stride: usize, n_out: usize) {
    debug_assert_eq!(x.len(), ch * f * t);
    debug_assert_eq!(out.len(), ch * n_out);
    let one = |c: usize, o_row: &mut [f64]| {
        for fi in 0..f {
            let w_row = &w[fi * width..fi * width + width];
            let x_row = &x[(c * f + fi) * t..(c * f + fi) * t + t];
            for (ti, xv) in x_row.iter().enumerate() {
                if *xv == 0.0 {
                    continue;
                }
                let start = ti * stride;
                if start >= n_out {
                    break;
                }
                let len = width.min(n_out - start);
                let seg = &mut o_row[start..start + len];
                for (sv, wv) in seg.iter_mut().zip(&w_row[..len]) {
                    *sv += xv * wv;
                }
            }
        }
    };
    if ch > 1 && ch * f * t * width >= PAR_THRESHOLD {
        out.par_chunks_mut(n_out).enumerate().for_each(|(c, o_row)| one(c, o_row));
    } else {
        for (c, o_row) in out.chunks_mut(n_out).enumerate() {
            one(c, o_row);
        }
    }
}

/// Gradient of [`conv1d_transpose`] w.r.t. its input: a strided gather,
/// dx[c,f,t] = Σ_u w[f,u]·dout[c, ts+u] (zero outside n_out).
pub fn conv1d_transpose_grad_input(dout: &[f64], w: &[f64], dx: &mut [f64], ch: usize, f: usize, t: usize, width: usize, stride: usize, n_out: usize) {
    let one = |cf: usize, dx_row: &mut [f64]| {
        let (c, fi) = (cf / f, cf % f);
        let w_row = &w[fi * width..fi * width + width];
        let d_row = &dout[c * n_out..c * n_out + n_out];
        for (ti, dv) in dx_row.iter_mut().enumerate() {
            let start = ti * stride;
            if start >= n_out {
                break;
            }
            let len = width.min(n_out - start);
            let seg = &d_row[start..start + len];
            let mut acc = 0.0;
            for (sv, wv) in seg.iter().zip(&w_row[..len]) {
                acc += sv * wv;
            }
            *dv += acc;
        }
    };
    if ch * f * t * width >= PAR_THRESHOLD {
        dx.par_chunks_mut(t).enumerate().for_each(|(cf, dx_row)| one(cf, dx_row));
    } else {
        for (cf, dx_row) in dx.chunks_mut(t).enumerate() {
            one(cf, dx_row);
        }
    }
}

/// Gradient of [`conv1d_transpose`] w.r.t. the filterbank.
pub fn conv1d_transpose_grad_weight(dout: &[f64], x: &[f64], dw: &mut [f64], ch: usize, f: usize, t: usize, width: usize, stride: usize, n_out: usize) {
    let one = |fi: usize, dw_row: &mut [f64]| {
        for c in 0..ch {
            let x_row = &x[(c * f + fi) * t..(c * f + fi) * t + t];
            let d_row = &dout[c * n_out..c * n_out + n_out];
            for (ti, xv) in x_row.iter().enumerate() {
                if *xv == 0.0 {
                    continue;
                }
                let start = ti * stride;
                if start >= n_out {
                    break;
                }
                let len = width.min(n_out - start);
                let seg = &d_row[start..start + len];
                for (wv, sv) in dw_row.iter_mut().zip(seg) {
                    *wv += xv * sv;
                }
            }
        }
    };
    if f > 1 && ch * f * t * width >= PAR_THRESHOLD {
        dw.par_chunks_mut(width).enumerate().for_each(|(fi, dw_row)| one(fi, dw_row));
    } else {
        for (fi, dw_row) in dw.chunks_mut(width).enumerate() {
            one(fi, dw_row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        // A: 2×3, B: 3×2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = vec![0.0; 4];
        matmul_nn(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);

        // Same product via nt with B stored transposed (2×3).
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c2 = vec![0.0; 4];
        matmul_nt(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c2, c);

        // Aᵀ·A via tn.
        let mut g = vec![0.0; 9];
        matmul_tn(&a, &a, &mut g, 2, 3, 3);
        assert_eq!(g[0], 1.0 + 16.0); // column 0 · column 0
        assert_eq!(g[4], 4.0 + 25.0);
    }

    #[test]
    fn conv1d_frame_count_and_values() {
        // Single channel, one filter of ones: moving sums.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w = [1.0, 1.0, 1.0];
        let mut out = vec![0.0; 2];
        conv1d(&x, &w, &mut out, 1, 6, 1, 3, 3);
        assert_eq!(out, vec![6.0, 15.0]);
    }

    #[test]
    fn conv1d_transpose_places_filter_copies() {
        // One-hot feature at frame 1 reproduces the shifted filter.
        let x = [0.0, 1.0]; // ch=1, f=1, t=2
        let w = [0.5, -0.25, 0.125];
        let mut out = vec![0.0; 5]; // (2-1)*2+3 = 5
        conv1d_transpose(&x, &w, &mut out, 1, 1, 2, 3, 2, 5);
        assert_eq!(out, vec![0.0, 0.0, 0.5, -0.25, 0.125]);
    }
}
