//! Convolution and pooling kernels (stride 1, same padding unless noted).

use crate::scalar::{gemm, Scalar};

/// Convolution flavours available to SNAP layer symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvMode {
    Standard,
    /// One 3x3 filter per input channel, no channel mixing.
    Depthwise,
    /// Depthwise 3x3 followed directly by a pointwise 1x1 convolution.
    DepthwiseSeparable,
}

/// Output positions `o` in `0..len` whose source `o + d` lies in `0..len`.
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Fills `cols` (`[c*k*k, h*w]`) with zero-padded patches of `x` (`[c, h, w]`).
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (ylo, yhi) = valid_range(h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (xlo, xhi) = valid_range(w, dx);
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                dst[..ylo * w].fill(T::zero());
                dst[yhi * w..].fill(T::zero());
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    out_row[..xlo].fill(T::zero());
                    out_row[xhi..].fill(T::zero());
                    let s0 = (xlo as isize + dx) as usize;
                    out_row[xlo..xhi].copy_from_slice(&plane[sy * w + s0..sy * w + s0 + (xhi - xlo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back into `dx`.
fn col2im_add<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (ylo, yhi) = valid_range(h, dy);
            for kx in 0..k {
                let dxo = kx as isize - pad;
                let (xlo, xhi) = valid_range(w, dxo);
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let s0 = (xlo as isize + dxo) as usize;
                    let dst_row = &mut plane[sy * w + s0..sy * w + s0 + (xhi - xlo)];
                    for (d, g) in dst_row.iter_mut().zip(&src[y * w + xlo..y * w + xhi]) {
                        *d += *g;
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

/// Standard convolution forward: `x [n,c_in,h,w]`, `kernel [c_out,c_in,k,k]`.
pub(crate) fn conv_forward<T: Scalar>(x: &[T], kernel: &[T], bias: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let hw = d.h * d.w;
    let kk = d.c_in * d.k * d.k;
    let mut out = vec![T::zero(); d.n * d.c_out * hw];
    let mut cols = if d.k == 1 { Vec::new() } else { vec![T::zero(); kk * hw] };
    for s in 0..d.n {
        let xs = &x[s * d.c_in * hw..(s + 1) * d.c_in * hw];
        let os = &mut out[s * d.c_out * hw..(s + 1) * d.c_out * hw];
        let rhs: &[T] = if d.k == 1 {
            xs
        } else {
            im2col(xs, d.c_in, d.h, d.w, d.k, &mut cols);
            &cols
        };
        gemm(d.c_out, kk, hw, kernel, false, rhs, false, os, false);
        if let Some(b) = bias {
            for (co, bv) in b.iter().enumerate() {
                os[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += *bv);
            }
        }
    }
    out
}

/// Standard convolution backward. Returns `(dx, dkernel, dbias)`; `dx` only when requested.
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dout: &[T],
    d: &ConvDims,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw = d.h * d.w;
    let kk = d.c_in * d.k * d.k;
    let mut dk = vec![T::zero(); d.c_out * kk];
    let mut db = vec![T::zero(); d.c_out];
    let mut dx = if need_dx {
        Some(vec![T::zero(); d.n * d.c_in * hw])
    } else {
        None
    };
    let mut cols = if d.k == 1 { Vec::new() } else { vec![T::zero(); kk * hw] };
    let mut dcols = if need_dx && d.k != 1 {
        vec![T::zero(); kk * hw]
    } else {
        Vec::new()
    };
    for s in 0..d.n {
        let xs = &x[s * d.c_in * hw..(s + 1) * d.c_in * hw];
        let gs = &dout[s * d.c_out * hw..(s + 1) * d.c_out * hw];
        for co in 0..d.c_out {
            db[co] += gs[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
        }
        let rhs: &[T] = if d.k == 1 {
            xs
        } else {
            im2col(xs, d.c_in, d.h, d.w, d.k, &mut cols);
            &cols
        };
        gemm(d.c_out, hw, kk, gs, false, rhs, true, &mut dk, true);
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * d.c_in * hw..(s + 1) * d.c_in * hw];
            if d.k == 1 {
                gemm(kk, d.c_out, hw, kernel, true, gs, false, dxs, true);
            } else {
                gemm(kk, d.c_out, hw, kernel, true, gs, false, &mut dcols, false);
                col2im_add(&dcols, d.c_in, d.h, d.w, d.k, dxs);
            }
        }
    }
    (dx, dk, db)
}

/// Depthwise 3x3 forward: `kernel [c,1,3,3]`.
pub(crate) fn depthwise_forward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); n * c * hw];
    for s in 0..n {
        for ch in 0..c {
            let plane = &x[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            let o = &mut out[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            if let Some(b) = bias {
                o.fill(b[ch]);
            }
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (ylo, yhi) = valid_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (xlo, xhi) = valid_range(w, dx);
                    let kv = kernel[ch * 9 + ky * 3 + kx];
                    let s0 = (xlo as isize + dx) as usize;
                    for y in ylo..yhi {
                        let sy = (y as isize + dy) as usize;
                        let src = &plane[sy * w + s0..sy * w + s0 + (xhi - xlo)];
                        for (ov, xv) in o[y * w + xlo..y * w + xhi].iter_mut().zip(src) {
                            *ov += kv * *xv;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dout: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw = h * w;
    let mut dk = vec![T::zero(); c * 9];
    let mut db = vec![T::zero(); c];
    let mut dx = if need_dx {
        Some(vec![T::zero(); n * c * hw])
    } else {
        None
    };
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let plane = &x[base..base + hw];
            let g = &dout[base..base + hw];
            db[ch] += g.iter().copied().sum::<T>();
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (ylo, yhi) = valid_range(h, dy);
                for kx in 0..3 {
                    let dxo = kx as isize - 1;
                    let (xlo, xhi) = valid_range(w, dxo);
                    let s0 = (xlo as isize + dxo) as usize;
                    let kv = kernel[ch * 9 + ky * 3 + kx];
                    let mut acc = T::zero();
                    for y in ylo..yhi {
                        let sy = (y as isize + dy) as usize;
                        let g_row = &g[y * w + xlo..y * w + xhi];
                        let src = sy * w + s0..sy * w + s0 + (xhi - xlo);
                        for (gv, xv) in g_row.iter().zip(&plane[src.clone()]) {
                            acc += *gv * *xv;
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dst = &mut dx[base + src.start..base + src.end];
                            for (d, gv) in dst.iter_mut().zip(g_row) {
                                *d += kv * *gv;
                            }
                        }
                    }
                    dk[ch * 9 + ky * 3 + kx] += acc;
                }
            }
        }
    }
    (dx, dk, db)
}

pub(crate) fn pool_out_dim(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// 3x3 max pooling with padding 1. Returns output and the flat input index
/// of each window's maximum (lowest index wins ties).
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (pool_out_dim(h, stride), pool_out_dim(w, stride));
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    // Separable: max over each row's 3 columns, then over 3 rows. Strict
    // comparisons in scan order keep the lowest flat index on ties, since
    // every element of an upper row precedes those of lower rows.
    let mut hmax = vec![T::zero(); h * wo];
    let mut hidx = vec![0usize; h * wo];
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        let plane = &x[base..base + h * w];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for ox in 0..wo {
                let cx = ox * stride;
                let (x0, x1) = (cx.saturating_sub(1), (cx + 1).min(w - 1));
                let mut bi = x0;
                for xx in x0 + 1..=x1 {
                    if row[xx] > row[bi] {
                        bi = xx;
                    }
                }
                hmax[y * wo + ox] = row[bi];
                hidx[y * wo + ox] = y * w + bi;
            }
        }
        for oy in 0..ho {
            let cy = oy * stride;
            let (y0, y1) = (cy.saturating_sub(1), (cy + 1).min(h - 1));
            for ox in 0..wo {
                let mut by = y0;
                for yy in y0 + 1..=y1 {
                    if hmax[yy * wo + ox] > hmax[by * wo + ox] {
                        by = yy;
                    }
                }
                out.push(hmax[by * wo + ox]);
                arg.push(base + hidx[by * wo + ox]);
            }
        }
    }
    (out, arg)
}
