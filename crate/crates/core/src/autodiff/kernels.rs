//! Direct stride-1 convolution with register tiling. For the narrow layers
//! used here this beats im2col + GEMM, whose operand packing costs about as
//! much as the multiply itself.
//!
//! Inputs are copied into zero-padded rows so the inner loops never branch
//! on borders. Accumulators are small fixed-size arrays that the compiler
//! keeps in vector registers. The input gradient is itself a convolution of
//! the padded output gradient with the transposed, flipped kernel.
//!
//! Each entry point runs the same scalar body compiled for several
//! instruction sets, picked at runtime. Fused multiply-add changes rounding,
//! so results depend on whether the CPU has FMA; the AVX2+FMA and AVX-512
//! copies accumulate in the same order and agree bit for bit.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Direct {
    pub cin: usize,
    pub cout: usize,
    pub len: usize,
    pub k: usize,
    pub padding: usize,
    pub lout: usize,
}

/// Output channels per register tile.
const CO_TILE: usize = 4;

/// Widest time tile of any instruction set.
const MAX_TILE: usize = 32;

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Row stride of a padded copy whose data starts at `offset`, wide enough
/// for full tiles past the end of the output and for the weight-gradient
/// window.
fn padded_stride(offset: usize, len: usize, lout: usize, k: usize) -> usize {
    (offset + len).max(round_up(lout, MAX_TILE) + round_up(k, MAX_TILE)) + MAX_TILE
}

fn pad_rows<T: Scalar>(src: &[T], rows: usize, len: usize, offset: usize, stride: usize, dst: &mut Vec<T>) {
    // Only the data region is ever written, so the padding of a buffer of
    // the same shape is still zero.
    if dst.len() != rows * stride {
        dst.clear();
        dst.resize(rows * stride, T::zero());
    }
    for (r, s) in src.chunks_exact(len).take(rows).enumerate() {
        dst[r * stride + offset..r * stride + offset + len].copy_from_slice(s);
    }
}

#[inline(always)]
fn madd<T: Scalar, const F: bool, const N: usize>(acc: &mut [T; N], a: T, x: &[T; N]) {
    for (y, &v) in acc.iter_mut().zip(x) {
        *y = if F { a.mul_add(v, *y) } else { *y + a * v };
    }
}

/// Accumulators are copied into a local that is only indexed by constants,
/// which lets them live in registers.
#[inline(always)]
fn tile_sum<T: Scalar, const F: bool, const C: usize, const TW: usize>(
    xp: &[T],
    stride: usize,
    w: &[T],
    co0: usize,
    cin: usize,
    k: usize,
    acc: &mut [[T; TW]; C],
) {
    let mut a = *acc;
    for ci in 0..cin {
        let xr = &xp[ci * stride..ci * stride + k - 1 + TW];
        let taps: [&[T]; C] = std::array::from_fn(|c| &w[((co0 + c) * cin + ci) * k..][..k]);
        for kk in 0..k {
            let xs: &[T; TW] = xr[kk..kk + TW].try_into().expect("tile width");
            for c in 0..C {
                madd::<T, F, _>(&mut a[c], taps[c][kk], xs);
            }
        }
    }
    *acc = a;
}

/// `out[c][t] += sum_ci sum_kk w[c][ci][kk] * xp[ci][t + kk]` for `C`
/// output channels starting at `co0`.
#[inline(always)]
fn conv_tile<T: Scalar, const F: bool, const C: usize, const TW: usize>(
    xp: &[T],
    stride: usize,
    w: &[T],
    co0: usize,
    cin: usize,
    k: usize,
    lout: usize,
    out: &mut [T],
) {
    for t0 in (0..lout).step_by(TW) {
        let n = TW.min(lout - t0);
        let mut acc = [[T::zero(); TW]; C];
        for (c, a) in acc.iter_mut().enumerate() {
            let row = &out[(co0 + c) * lout + t0..(co0 + c) * lout + t0 + n];
            a[..n].copy_from_slice(row);
        }
        tile_sum::<T, F, C, TW>(&xp[t0..], stride, w, co0, cin, k, &mut acc);
        for (c, a) in acc.iter().enumerate() {
            out[(co0 + c) * lout + t0..(co0 + c) * lout + t0 + n].copy_from_slice(&a[..n]);
        }
    }
}

#[inline(always)]
fn conv_rows<T: Scalar, const F: bool, const TW: usize>(
    xp: &[T],
    stride: usize,
    w: &[T],
    cin: usize,
    cout: usize,
    k: usize,
    lout: usize,
    out: &mut [T],
) {
    let full = cout / CO_TILE * CO_TILE;
    for co0 in (0..full).step_by(CO_TILE) {
        conv_tile::<T, F, CO_TILE, TW>(xp, stride, w, co0, cin, k, lout, out);
    }
    for co0 in full..cout {
        conv_tile::<T, F, 1, TW>(xp, stride, w, co0, cin, k, lout, out);
    }
}

#[inline(always)]
fn window_sum<T: Scalar, const F: bool, const C: usize, const KW: usize>(
    xr: &[T],
    grows: &[&[T]; C],
    lout: usize,
    acc: &mut [[T; KW]; C],
) {
    let mut a = *acc;
    for t in 0..lout {
        let xs: &[T; KW] = xr[t..t + KW].try_into().expect("tile width");
        for c in 0..C {
            madd::<T, F, _>(&mut a[c], grows[c][t], xs);
        }
    }
    *acc = a;
}

/// `gw[c][ci][kb + j] += sum_t g[c][t] * xp[ci][t + kb + j]`.
#[inline(always)]
fn weight_grad_tile<T: Scalar, const F: bool, const C: usize, const KW: usize>(
    xp: &[T],
    stride: usize,
    g: &[T],
    co0: usize,
    cin: usize,
    k: usize,
    lout: usize,
    gw: &mut [T],
) {
    let grows: [&[T]; C] = std::array::from_fn(|c| &g[(co0 + c) * lout..][..lout]);
    for ci in 0..cin {
        for kb in (0..k).step_by(KW) {
            let m = KW.min(k - kb);
            let xr = &xp[ci * stride + kb..ci * stride + kb + lout - 1 + KW];
            let mut acc = [[T::zero(); KW]; C];
            window_sum::<T, F, C, KW>(xr, &grows, lout, &mut acc);
            for (c, a) in acc.iter().enumerate() {
                let dst = &mut gw[((co0 + c) * cin + ci) * k + kb..][..m];
                for (d, v) in dst.iter_mut().zip(a) {
                    *d += *v;
                }
            }
        }
    }
}

#[inline(always)]
fn weight_grad_rows<T: Scalar, const F: bool, const KW: usize>(
    xp: &[T],
    stride: usize,
    g: &[T],
    cin: usize,
    cout: usize,
    k: usize,
    lout: usize,
    gw: &mut [T],
) {
    let full = cout / CO_TILE * CO_TILE;
    for co0 in (0..full).step_by(CO_TILE) {
        weight_grad_tile::<T, F, CO_TILE, KW>(xp, stride, g, co0, cin, k, lout, gw);
    }
    for co0 in full..cout {
        weight_grad_tile::<T, F, 1, KW>(xp, stride, g, co0, cin, k, lout, gw);
    }
}

fn is_f32<T>() -> bool {
    std::mem::size_of::<T>() <= 4
}

#[inline(always)]
fn forward_body<T: Scalar, const F: bool, const TW32: usize, const TW64: usize>(
    d: &Direct,
    batch: usize,
    x: &[T],
    w: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let stride = padded_stride(d.padding, d.len, d.lout, d.k);
    let mut xp = Vec::new();
    for bi in 0..batch {
        pad_rows(&x[bi * d.cin * d.len..], d.cin, d.len, d.padding, stride, &mut xp);
        let ob = &mut out[bi * d.cout * d.lout..(bi + 1) * d.cout * d.lout];
        for (row, &b) in ob.chunks_exact_mut(d.lout).zip(bias) {
            row.fill(b);
        }
        if is_f32::<T>() {
            conv_rows::<T, F, TW32>(&xp, stride, w, d.cin, d.cout, d.k, d.lout, ob);
        } else {
            conv_rows::<T, F, TW64>(&xp, stride, w, d.cin, d.cout, d.k, d.lout, ob);
        }
    }
}

#[inline(always)]
fn backward_body<T: Scalar, const F: bool, const TW32: usize, const TW64: usize>(
    d: &Direct,
    batch: usize,
    x: &[T],
    w: &[T],
    g: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    let (cin, cout, k, len, lout) = (d.cin, d.cout, d.k, d.len, d.lout);
    // Transposed, flipped kernel: wt[ci][co][k - 1 - kk] = w[co][ci][kk].
    let mut wt = vec![T::zero(); w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for kk in 0..k {
                wt[(ci * cout + co) * k + (k - 1 - kk)] = w[(co * cin + ci) * k + kk];
            }
        }
    }
    let gpad = k - 1 - d.padding;
    let gstride = padded_stride(gpad, lout, len, k);
    let xstride = padded_stride(d.padding, len, lout, k);
    let (mut gp, mut xp) = (Vec::new(), Vec::new());
    for bi in 0..batch {
        let gb = &g[bi * cout * lout..(bi + 1) * cout * lout];
        if let Some(gx) = gx.as_deref_mut() {
            pad_rows(gb, cout, lout, gpad, gstride, &mut gp);
            let gxb = &mut gx[bi * cin * len..(bi + 1) * cin * len];
            if is_f32::<T>() {
                conv_rows::<T, F, TW32>(&gp, gstride, &wt, cout, cin, k, len, gxb);
            } else {
                conv_rows::<T, F, TW64>(&gp, gstride, &wt, cout, cin, k, len, gxb);
            }
        }
        if let Some(gw) = gw.as_deref_mut() {
            pad_rows(&x[bi * cin * len..], cin, len, d.padding, xstride, &mut xp);
            if is_f32::<T>() {
                weight_grad_rows::<T, F, 16>(&xp, xstride, gb, cin, cout, k, lout, gw);
            } else {
                weight_grad_rows::<T, F, 8>(&xp, xstride, gb, cin, cout, k, lout, gw);
            }
        }
    }
}

macro_rules! isa_variant {
    ($fwd:ident, $bwd:ident, $features:literal, $fma:literal, $tw32:literal, $tw64:literal) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = $features)]
        fn $fwd<T: Scalar>(d: &Direct, batch: usize, x: &[T], w: &[T], bias: &[T], out: &mut [T]) {
            forward_body::<T, $fma, $tw32, $tw64>(d, batch, x, w, bias, out)
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = $features)]
        fn $bwd<T: Scalar>(
            d: &Direct,
            batch: usize,
            x: &[T],
            w: &[T],
            g: &[T],
            gx: Option<&mut [T]>,
            gw: Option<&mut [T]>,
        ) {
            backward_body::<T, $fma, $tw32, $tw64>(d, batch, x, w, g, gx, gw)
        }
    };
}

isa_variant!(forward_avx2, backward_avx2, "avx2", false, 16, 8);
isa_variant!(forward_fma, backward_fma, "avx2,fma", true, 16, 8);
isa_variant!(forward_avx512, backward_avx512, "avx512f,avx2,fma", true, 32, 16);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Isa {
    Baseline,
    Avx2,
    Avx2Fma,
    Avx512,
}

fn isa() -> Isa {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::is_x86_feature_detected as has;
        if has!("avx512f") && has!("avx2") && has!("fma") {
            return Isa::Avx512;
        }
        if has!("avx2") && has!("fma") {
            return Isa::Avx2Fma;
        }
        if has!("avx2") {
            return Isa::Avx2;
        }
    }
    Isa::Baseline
}

/// `x: [batch, cin, len]`, `w: [cout, cin, k]`, `out: [batch, cout, lout]`.
/// Requires `padding < k`.
pub(crate) fn forward<T: Scalar>(d: &Direct, batch: usize, x: &[T], w: &[T], bias: &[T], out: &mut [T]) {
    // SAFETY: each variant runs only when `isa` found its features.
    #[cfg(target_arch = "x86_64")]
    unsafe {
        match isa() {
            Isa::Avx512 => return forward_avx512(d, batch, x, w, bias, out),
            Isa::Avx2Fma => return forward_fma(d, batch, x, w, bias, out),
            Isa::Avx2 => return forward_avx2(d, batch, x, w, bias, out),
            Isa::Baseline => {}
        }
    }
    forward_body::<T, false, 16, 8>(d, batch, x, w, bias, out)
}

/// Accumulates into `gx: [batch, cin, len]` and `gw: [cout, cin, k]`.
pub(crate) fn backward<T: Scalar>(
    d: &Direct,
    batch: usize,
    x: &[T],
    w: &[T],
    g: &[T],
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
) {
    // SAFETY: each variant runs only when `isa` found its features.
    #[cfg(target_arch = "x86_64")]
    unsafe {
        match isa() {
            Isa::Avx512 => return backward_avx512(d, batch, x, w, g, gx, gw),
            Isa::Avx2Fma => return backward_fma(d, batch, x, w, g, gx, gw),
            Isa::Avx2 => return backward_avx2(d, batch, x, w, g, gx, gw),
            Isa::Baseline => {}
        }
    }
    backward_body::<T, false, 16, 8>(d, batch, x, w, g, gx, gw)
}
