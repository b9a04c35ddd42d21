//! Inner loops. Reductions keep eight independent accumulators so the
//! compiler can vectorize them while the summation order stays fixed.
//! The convolution kernels also get an AVX build selected at run time;
//! it widens the vectors but never fuses multiply-add, so results are
//! bit-identical to the baseline.

#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let ra = ca.remainder();
    for x in ca {
        for l in 0..8 {
            acc[l] += x[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for x in ra {
        s += x;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const OB: usize = 4;
const TB: usize = 8;

/// Valid cross-correlation for one batch item:
/// `y[o][t] = b[o] + sum_i sum_j w[o][i][j] * x[i][t + j]`, accumulated in
/// `(i, j)` order. Four output channels by eight time steps are held in
/// registers at a time.
pub(crate) fn conv_forward(x: &[f64], w: &[f64], b: &[f64], y: &mut [f64], c_in: usize, len: usize, k: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX.
        unsafe { conv_forward_avx(x, w, b, y, c_in, len, k) };
        return;
    }
    conv_forward_impl(x, w, b, y, c_in, len, k);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn conv_forward_avx(x: &[f64], w: &[f64], b: &[f64], y: &mut [f64], c_in: usize, len: usize, k: usize) {
    conv_forward_impl(x, w, b, y, c_in, len, k);
}

#[inline(always)]
fn conv_forward_impl(x: &[f64], w: &[f64], b: &[f64], y: &mut [f64], c_in: usize, len: usize, k: usize) {
    let c_out = b.len();
    let lo = len - k + 1;
    for o0 in (0..c_out).step_by(OB) {
        let nb = OB.min(c_out - o0);
        let mut t0 = 0;
        while t0 < lo {
            let nt = TB.min(lo - t0);
            let mut acc = [[0.0f64; TB]; OB];
            for q in 0..nb {
                acc[q] = [b[o0 + q]; TB];
            }
            if nb == OB && nt == TB {
                for i in 0..c_in {
                    let xr = &x[i * len..(i + 1) * len];
                    for j in 0..k {
                        let xs: &[f64; TB] = xr[t0 + j..t0 + j + TB].try_into().unwrap();
                        for (q, a) in acc.iter_mut().enumerate() {
                            let wq = w[((o0 + q) * c_in + i) * k + j];
                            for l in 0..TB {
                                a[l] += wq * xs[l];
                            }
                        }
                    }
                }
            } else {
                for i in 0..c_in {
                    let xr = &x[i * len..(i + 1) * len];
                    for j in 0..k {
                        for (q, a) in acc.iter_mut().enumerate().take(nb) {
                            let wq = w[((o0 + q) * c_in + i) * k + j];
                            for l in 0..nt {
                                a[l] += wq * xr[t0 + j + l];
                            }
                        }
                    }
                }
            }
            for (q, a) in acc.iter().enumerate().take(nb) {
                y[(o0 + q) * lo + t0..(o0 + q) * lo + t0 + nt].copy_from_slice(&a[..nt]);
            }
            t0 += nt;
        }
    }
}

/// Input gradient of [`conv_forward`] for one batch item:
/// `gx[i][s] += sum_o sum_j w[o][i][j] * g[o][s - j]`, accumulated in
/// `(o, j)` order over the valid terms.
pub(crate) fn conv_input_grad(g: &[f64], w: &[f64], gx: &mut [f64], c_in: usize, c_out: usize, len: usize, k: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX.
        unsafe { conv_input_grad_avx(g, w, gx, c_in, c_out, len, k) };
        return;
    }
    conv_input_grad_impl(g, w, gx, c_in, c_out, len, k);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn conv_input_grad_avx(g: &[f64], w: &[f64], gx: &mut [f64], c_in: usize, c_out: usize, len: usize, k: usize) {
    conv_input_grad_impl(g, w, gx, c_in, c_out, len, k);
}

#[inline(always)]
fn conv_input_grad_impl(g: &[f64], w: &[f64], gx: &mut [f64], c_in: usize, c_out: usize, len: usize, k: usize) {
    let lo = len - k + 1;
    for i0 in (0..c_in).step_by(OB) {
        let nb = OB.min(c_in - i0);
        let mut s0 = 0;
        while s0 < len {
            let nt = TB.min(len - s0);
            let mut acc = [[0.0f64; TB]; OB];
            for (q, a) in acc.iter_mut().enumerate().take(nb) {
                a[..nt].copy_from_slice(&gx[(i0 + q) * len + s0..(i0 + q) * len + s0 + nt]);
            }
            if nb == OB && nt == TB && s0 + 1 >= k && s0 + TB <= lo {
                for o in 0..c_out {
                    let go = &g[o * lo..(o + 1) * lo];
                    for j in 0..k {
                        let gs: &[f64; TB] = go[s0 - j..s0 - j + TB].try_into().unwrap();
                        for (q, a) in acc.iter_mut().enumerate() {
                            let wq = w[(o * c_in + i0 + q) * k + j];
                            for l in 0..TB {
                                a[l] += wq * gs[l];
                            }
                        }
                    }
                }
            } else {
                for o in 0..c_out {
                    let go = &g[o * lo..(o + 1) * lo];
                    for j in 0..k {
                        for (q, a) in acc.iter_mut().enumerate().take(nb) {
                            let wq = w[(o * c_in + i0 + q) * k + j];
                            for l in 0..nt {
                                let s = s0 + l;
                                if s >= j && s - j < lo {
                                    a[l] += wq * go[s - j];
                                }
                            }
                        }
                    }
                }
            }
            for (q, a) in acc.iter().enumerate().take(nb) {
                gx[(i0 + q) * len + s0..(i0 + q) * len + s0 + nt].copy_from_slice(&a[..nt]);
            }
            s0 += nt;
        }
    }
}

/// Kernel gradient for one batch item:
/// `gw[o][i][j] += dot(g[o], x[i][j..j + lo])`.
pub(crate) fn conv_weight_grad(g: &[f64], x: &[f64], gw: &mut [f64], c_in: usize, c_out: usize, len: usize, k: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX.
        unsafe { conv_weight_grad_avx(g, x, gw, c_in, c_out, len, k) };
        return;
    }
    conv_weight_grad_impl(g, x, gw, c_in, c_out, len, k);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn conv_weight_grad_avx(g: &[f64], x: &[f64], gw: &mut [f64], c_in: usize, c_out: usize, len: usize, k: usize) {
    conv_weight_grad_impl(g, x, gw, c_in, c_out, len, k);
}

#[inline(always)]
fn conv_weight_grad_impl(g: &[f64], x: &[f64], gw: &mut [f64], c_in: usize, c_out: usize, len: usize, k: usize) {
    let lo = len - k + 1;
    for o in 0..c_out {
        let go = &g[o * lo..(o + 1) * lo];
        for i in 0..c_in {
            let xr = &x[i * len..(i + 1) * len];
            for j in 0..k {
                gw[(o * c_in + i) * k + j] += dot(go, &xr[j..j + lo]);
            }
        }
    }
}
