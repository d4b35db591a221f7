//! Shared numeric kernels.
//!
//! Loop orders keep the innermost dimension contiguous and free of reduction
//! dependencies so the compiler can vectorize without reassociating floats;
//! that keeps results bit-identical between debug and release builds of the
//! same source.

use crate::real::Real;

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        let e = (-x).exp();
        T::one() / (T::one() + e)
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// ln(1 + e^x), computed as max(x, 0) + ln(1 + e^{-|x|}).
pub fn softplus<T: Real>(x: T) -> T {
    let m = if x > T::zero() { x } else { T::zero() };
    m + (-x.abs()).exp().ln_1p()
}

/// out[m,n] = a[m,k] · b[k,n]
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o = *o + a_ik * bv;
            }
        }
    }
    out
}

/// out[m,n] = aᵀ[m,k] · b[k,n] for a stored as [k,m].
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &a_ki) in a_row.iter().enumerate() {
            let o_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o = *o + a_ki * bv;
            }
        }
    }
    out
}

pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// out[n,m] = x[n,k] · w[k,m] + b[m]
pub fn affine_fwd<T: Real>(x: &[T], w: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    debug_assert_eq!(b.len(), m);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let o_row = &mut out[i * m..(i + 1) * m];
        o_row.copy_from_slice(b);
        let x_row = &x[i * k..(i + 1) * k];
        for (kk, &x_ik) in x_row.iter().enumerate() {
            let w_row = &w[kk * m..(kk + 1) * m];
            for (o, &wv) in o_row.iter_mut().zip(w_row) {
                *o = *o + x_ik * wv;
            }
        }
    }
    out
}

pub fn conv2d_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// x: [ci,h,w], w: [co,ci,kh,kw], b: [co] -> [co,oh,ow]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let oh = conv2d_out_dim(h, kh, stride, pad);
    let ow = conv2d_out_dim(wd, kw, stride, pad);
    let mut out = vec![T::zero(); co * oh * ow];
    for oc in 0..co {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        for v in plane.iter_mut() {
            *v = b[oc];
        }
        for ic in 0..ci {
            let x_plane = &x[ic * h * wd..(ic + 1) * h * wd];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = w[((oc * ci + ic) * kh + ky) * kw + kx];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let x_row = &x_plane[iy as usize * wd..(iy as usize + 1) * wd];
                        let o_row = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= wd {
                                continue;
                            }
                            o_row[ox] = o_row[ox] + wv * x_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward of conv2d. Accumulates into the provided gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd<T: Real>(
    d_out: &[T],
    x: &[T],
    w: &[T],
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    d_x: &mut [T],
    d_w: &mut [T],
    d_b: &mut [T],
) {
    let oh = conv2d_out_dim(h, kh, stride, pad);
    let ow = conv2d_out_dim(wd, kw, stride, pad);
    for oc in 0..co {
        let d_plane = &d_out[oc * oh * ow..(oc + 1) * oh * ow];
        let mut acc = T::zero();
        for &g in d_plane {
            acc += g;
        }
        d_b[oc] += acc;
        for ic in 0..ci {
            let x_plane = &x[ic * h * wd..(ic + 1) * h * wd];
            let dx_plane = &mut d_x[ic * h * wd..(ic + 1) * h * wd];
            for ky in 0..kh {
                for kx in 0..kw {
                    let w_idx = ((oc * ci + ic) * kh + ky) * kw + kx;
                    let wv = w[w_idx];
                    let mut w_acc = T::zero();
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let base = iy as usize * wd;
                        let d_row = &d_plane[oy * ow..(oy + 1) * ow];
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= wd {
                                continue;
                            }
                            let g = d_row[ox];
                            w_acc += g * x_plane[base + ix as usize];
                            dx_plane[base + ix as usize] = dx_plane[base + ix as usize] + g * wv;
                        }
                    }
                    d_w[w_idx] += w_acc;
                }
            }
        }
    }
}

/// x: [c,h,w] -> ([c,oh,ow], argmax indices into each input plane)
pub fn maxpool2d_fwd<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
) -> (Vec<T>, Vec<u32>) {
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = vec![T::zero(); c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = (oy * stride + ky) * w + ox * stride + kx;
                        let v = plane[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
                arg[(ch * oh + oy) * ow + ox] = best_idx as u32;
            }
        }
    }
    (out, arg)
}

/// Clamp-to-edge bilinear lookup of a [r,r,c] plane at normalized coords.
///
/// Coordinates live in [-1,1]^2 and map to the grid with align-corners
/// convention: u = -1 hits texel 0, u = +1 hits texel r-1.
pub fn bilinear_fwd<T: Real>(plane: &[T], r: usize, c: usize, coords: &[[T; 2]]) -> Vec<T> {
    let mut out = vec![T::zero(); coords.len() * c];
    let half = T::from_f64(0.5);
    let scl = T::from_usize(r - 1) * half;
    for (n, uv) in coords.iter().enumerate() {
        let (x0, x1, fx) = locate(uv[0], scl, r);
        let (y0, y1, fy) = locate(uv[1], scl, r);
        let w00 = (T::one() - fx) * (T::one() - fy);
        let w10 = fx * (T::one() - fy);
        let w01 = (T::one() - fx) * fy;
        let w11 = fx * fy;
        let p00 = &plane[(y0 * r + x0) * c..(y0 * r + x0) * c + c];
        let p10 = &plane[(y0 * r + x1) * c..(y0 * r + x1) * c + c];
        let p01 = &plane[(y1 * r + x0) * c..(y1 * r + x0) * c + c];
        let p11 = &plane[(y1 * r + x1) * c..(y1 * r + x1) * c + c];
        let o = &mut out[n * c..(n + 1) * c];
        for j in 0..c {
            o[j] = w00 * p00[j] + w10 * p10[j] + w01 * p01[j] + w11 * p11[j];
        }
    }
    out
}

pub fn bilinear_bwd<T: Real>(
    d_out: &[T],
    r: usize,
    c: usize,
    coords: &[[T; 2]],
    d_plane: &mut [T],
) {
    let half = T::from_f64(0.5);
    let scl = T::from_usize(r - 1) * half;
    for (n, uv) in coords.iter().enumerate() {
        let (x0, x1, fx) = locate(uv[0], scl, r);
        let (y0, y1, fy) = locate(uv[1], scl, r);
        let w00 = (T::one() - fx) * (T::one() - fy);
        let w10 = fx * (T::one() - fy);
        let w01 = (T::one() - fx) * fy;
        let w11 = fx * fy;
        let g = &d_out[n * c..(n + 1) * c];
        for j in 0..c {
            d_plane[(y0 * r + x0) * c + j] += w00 * g[j];
            d_plane[(y0 * r + x1) * c + j] += w10 * g[j];
            d_plane[(y1 * r + x0) * c + j] += w01 * g[j];
            d_plane[(y1 * r + x1) * c + j] += w11 * g[j];
        }
    }
}

fn locate<T: Real>(u: T, scl: T, r: usize) -> (usize, usize, T) {
    // Map [-1,1] to [0, r-1], clamping overshoot to the edge.
    let g = (u + T::one()) * scl;
    let max = T::from_usize(r - 1);
    let g = if g < T::zero() {
        T::zero()
    } else if g > max {
        max
    } else {
        g
    };
    let f = g.floor();
    let i0 = f.as_f64() as usize;
    let i1 = (i0 + 1).min(r - 1);
    (i0, i1, g - f)
}
