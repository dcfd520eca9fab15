//! Raw numeric kernels shared by tape forward and backward passes.
//!
//! All matrix kernels accumulate into their output so backward passes can
//! reuse them on gradient buffers that already hold partial sums.

use super::PadMode;

/// c[m,n] += a[m,k] * b[k,n]
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
}

/// c[m,k] += a[m,n] * b[k,n]^T
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for p in 0..n {
                acc += a_row[p] * b_row[p];
            }
            c[i * k + j] += acc;
        }
    }
}

/// c[k,n] += a[m,k]^T * b[m,n]
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
}

/// Resolve an input coordinate for a convolution tap. Returns `None` when a
/// zero-padded tap falls outside the image.
#[inline]
fn tap(coord: i64, extent: usize, mode: PadMode) -> Option<usize> {
    if (0..extent as i64).contains(&coord) {
        return Some(coord as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Periodic => Some(coord.rem_euclid(extent as i64) as usize),
    }
}

/// Output extent of a strided convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

pub struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

/// out[n,f,oh,ow] = bias[f] + sum_{c,ky,kx} x[n,c,oh*s-p+ky,ow*s-p+kx] * k[f,c,ky,kx]
pub fn conv2d_fwd(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    d: &ConvDims,
    mode: PadMode,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), d.n * d.f * d.oh * d.ow);
    for n in 0..d.n {
        for f in 0..d.f {
            for oh in 0..d.oh {
                for ow in 0..d.ow {
                    let mut acc = bias[f];
                    for c in 0..d.c {
                        let x_plane = &x[(n * d.c + c) * d.h * d.w..];
                        let k_plane = &k[((f * d.c + c) * d.kh) * d.kw..];
                        for ky in 0..d.kh {
                            let iy = oh as i64 * d.stride as i64 - d.pad as i64 + ky as i64;
                            let Some(iy) = tap(iy, d.h, mode) else {
                                continue;
                            };
                            for kx in 0..d.kw {
                                let ix = ow as i64 * d.stride as i64 - d.pad as i64 + kx as i64;
                                let Some(ix) = tap(ix, d.w, mode) else {
                                    continue;
                                };
                                acc += x_plane[iy * d.w + ix] * k_plane[ky * d.kw + kx];
                            }
                        }
                    }
                    out[((n * d.f + f) * d.oh + oh) * d.ow + ow] = acc;
                }
            }
        }
    }
}

/// Accumulates input, kernel, and bias gradients in one sweep over the output.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd(
    x: &[f64],
    k: &[f64],
    g_out: &[f64],
    d: &ConvDims,
    mode: PadMode,
    g_x: Option<&mut [f64]>,
    g_k: Option<&mut [f64]>,
    g_bias: Option<&mut [f64]>,
) {
    let mut g_x = g_x;
    let mut g_k = g_k;
    let mut g_bias = g_bias;
    for n in 0..d.n {
        for f in 0..d.f {
            for oh in 0..d.oh {
                for ow in 0..d.ow {
                    let g = g_out[((n * d.f + f) * d.oh + oh) * d.ow + ow];
                    if let Some(gb) = g_bias.as_deref_mut() {
                        gb[f] += g;
                    }
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..d.c {
                        let x_base = (n * d.c + c) * d.h * d.w;
                        let k_base = (f * d.c + c) * d.kh * d.kw;
                        for ky in 0..d.kh {
                            let iy = oh as i64 * d.stride as i64 - d.pad as i64 + ky as i64;
                            let Some(iy) = tap(iy, d.h, mode) else {
                                continue;
                            };
                            for kx in 0..d.kw {
                                let ix = ow as i64 * d.stride as i64 - d.pad as i64 + kx as i64;
                                let Some(ix) = tap(ix, d.w, mode) else {
                                    continue;
                                };
                                let xi = x_base + iy * d.w + ix;
                                let ki = k_base + ky * d.kw + kx;
                                if let Some(gx) = g_x.as_deref_mut() {
                                    gx[xi] += g * k[ki];
                                }
                                if let Some(gk) = g_k.as_deref_mut() {
                                    gk[ki] += g * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub struct ConvTDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub stride: usize,
}

/// Transposed conv restricted to kernel extent == stride, so every output
/// pixel receives exactly one tap: out[n,f,ih*s+dy,iw*s+dx] =
/// sum_c x[n,c,ih,iw] * k[c,f,dy,dx].
pub fn conv_transpose2d_fwd(x: &[f64], k: &[f64], d: &ConvTDims, out: &mut [f64]) {
    let s = d.stride;
    let (oh, ow) = (d.h * s, d.w * s);
    debug_assert_eq!(out.len(), d.n * d.f * oh * ow);
    out.iter_mut().for_each(|v| *v = 0.0);
    for n in 0..d.n {
        for c in 0..d.c {
            let x_plane = &x[(n * d.c + c) * d.h * d.w..];
            for f in 0..d.f {
                let k_plane = &k[(c * d.f + f) * s * s..];
                let out_plane = &mut out[(n * d.f + f) * oh * ow..(n * d.f + f + 1) * oh * ow];
                for ih in 0..d.h {
                    for iw in 0..d.w {
                        let xv = x_plane[ih * d.w + iw];
                        if xv == 0.0 {
                            continue;
                        }
                        for dy in 0..s {
                            for dx in 0..s {
                                out_plane[(ih * s + dy) * ow + iw * s + dx] +=
                                    xv * k_plane[dy * s + dx];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_transpose2d_bwd(
    x: &[f64],
    k: &[f64],
    g_out: &[f64],
    d: &ConvTDims,
    g_x: Option<&mut [f64]>,
    g_k: Option<&mut [f64]>,
) {
    let s = d.stride;
    let (oh, ow) = (d.h * s, d.w * s);
    let mut g_x = g_x;
    let mut g_k = g_k;
    for n in 0..d.n {
        for c in 0..d.c {
            let x_base = (n * d.c + c) * d.h * d.w;
            for f in 0..d.f {
                let k_base = (c * d.f + f) * s * s;
                let g_plane = &g_out[(n * d.f + f) * oh * ow..];
                for ih in 0..d.h {
                    for iw in 0..d.w {
                        let mut acc = 0.0;
                        for dy in 0..s {
                            for dx in 0..s {
                                let g = g_plane[(ih * s + dy) * ow + iw * s + dx];
                                acc += g * k[k_base + dy * s + dx];
                                if let Some(gk) = g_k.as_deref_mut() {
                                    gk[k_base + dy * s + dx] += g * x[x_base + ih * d.w + iw];
                                }
                            }
                        }
                        if let Some(gx) = g_x.as_deref_mut() {
                            gx[x_base + ih * d.w + iw] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pool, stride 2. Returns flat input indices of each window's
/// maximum; ties go to the first maximal element in row-major window order.
pub fn maxpool2d_fwd(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
    argmax: &mut Vec<usize>,
) {
    let (oh, ow) = (h / 2, w / 2);
    argmax.clear();
    argmax.reserve(n * c * oh * ow);
    for nc in 0..n * c {
        let plane = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = plane + (oy * 2) * w + ox * 2;
                let mut best = x[best_idx];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = plane + (oy * 2 + dy) * w + ox * 2 + dx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[nc * oh * ow + oy * ow + ox] = best;
                argmax.push(best_idx);
            }
        }
    }
}
