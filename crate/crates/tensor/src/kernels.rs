//! Raw NHWC kernels shared by forward and backward passes.

use crate::element::Element;

/// Geometry of a 2-D convolution or pooling window over an NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.n * self.out_h * self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    /// A 1×1 window with unit stride and no padding reads the input as-is.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Stride-1 windows other than pointwise ones go through [`conv_taps`].
    pub fn uses_taps(&self) -> bool {
        self.stride == 1 && !self.is_pointwise()
    }

    /// Valid kernel columns `lo..hi` for output column `ox`, and the first
    /// input column they read (the rest follow contiguously).
    fn kx_range(&self, ox: usize) -> (usize, usize, usize) {
        let x0 = (ox * self.stride) as isize - self.pad_left as isize;
        let lo = (-x0).max(0) as usize;
        let hi = (self.w as isize - x0).clamp(0, self.kw as isize) as usize;
        let lo = lo.min(hi);
        (lo, hi, (x0 + lo as isize).max(0) as usize)
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
        (iy >= 0 && iy < self.h as isize).then_some(iy as usize)
    }
}

/// Unrolls every receptive field into one row of `[rows, kh*kw*c]`.
pub(crate) fn im2col<E: Element>(x: &[E], g: &Window) -> Vec<E> {
    let c = g.c;
    let mut cols = Vec::with_capacity(g.rows() * g.patch_len());
    let zeros = vec![E::ZERO; g.kw * c];
    for n in 0..g.n {
        let img = &x[n * g.h * g.w * c..(n + 1) * g.h * g.w * c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let (lo, hi, ix) = g.kx_range(ox);
                for ky in 0..g.kh {
                    match g.input_row(oy, ky) {
                        None => cols.extend_from_slice(&zeros),
                        Some(iy) => {
                            let src = (iy * g.w + ix) * c;
                            cols.extend_from_slice(&zeros[..lo * c]);
                            cols.extend_from_slice(&img[src..src + (hi - lo) * c]);
                            cols.extend_from_slice(&zeros[..(g.kw - hi) * c]);
                        }
                    }
                }
            }
        }
    }
    debug_assert_eq!(cols.len(), g.rows() * g.patch_len());
    cols
}

/// Scatter-adds unrolled rows back onto an NHWC buffer (adjoint of [`im2col`]).
pub(crate) fn col2im_add<E: Element>(cols: &[E], g: &Window, dx: &mut [E]) {
    let (c, plen) = (g.c, g.patch_len());
    let mut rows = cols.chunks_exact(plen);
    for n in 0..g.n {
        let img = &mut dx[n * g.h * g.w * c..(n + 1) * g.h * g.w * c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = rows.next().expect("one row per output pixel");
                let (lo, hi, ix) = g.kx_range(ox);
                for ky in 0..g.kh {
                    if let Some(iy) = g.input_row(oy, ky) {
                        let dst = (iy * g.w + ix) * c;
                        let off = (ky * g.kw + lo) * c;
                        let len = (hi - lo) * c;
                        for (d, &s) in img[dst..dst + len].iter_mut().zip(&src[off..off + len]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 convolution as one GEMM per kernel tap over a zero-padded copy of
/// the input.
///
/// Each image is laid out on a padded `hp × wp` grid. Output pixel `(y, x)`
/// lives at grid row `y·wp + x` and reads grid row `y·wp + x + ky·wp + kx`
/// for tap `(ky, kx)`, so every tap is a plain row-shifted `[m, c] × [c, f]`
/// product. Rows that fall on padding are computed and then dropped.
pub(crate) struct TapGrid {
    pub wp: usize,
    /// Grid rows per image.
    pub per_image: usize,
    /// GEMM rows: every grid row of every image.
    pub m: usize,
    /// Padded buffer length in rows, including the overhang read by the
    /// last taps of the last image.
    pub len: usize,
}

impl TapGrid {
    pub fn new(g: &Window) -> Self {
        debug_assert_eq!(g.stride, 1);
        let hp = g.out_h + g.kh - 1;
        let wp = g.out_w + g.kw - 1;
        let per_image = hp * wp;
        let m = g.n * per_image;
        TapGrid {
            wp,
            per_image,
            m,
            len: m + (g.kh - 1) * wp + (g.kw - 1),
        }
    }

    fn tap_offset(&self, ky: usize, kx: usize) -> usize {
        ky * self.wp + kx
    }

    fn out_row(&self, n: usize, y: usize, x: usize) -> usize {
        n * self.per_image + y * self.wp + x
    }
}

/// Zero-padded copy of `x` on the tap grid, `[len, c]`.
pub(crate) fn pad_input<E: Element>(x: &[E], g: &Window, t: &TapGrid) -> Vec<E> {
    let c = g.c;
    let mut p = vec![E::ZERO; t.len * c];
    for n in 0..g.n {
        for y in 0..g.h {
            let src = (n * g.h + y) * g.w * c;
            let dst = t.out_row(n, y + g.pad_top, g.pad_left) * c;
            p[dst..dst + g.w * c].copy_from_slice(&x[src..src + g.w * c]);
        }
    }
    p
}

pub(crate) fn conv_taps<E: Element>(p: &[E], k: &[E], f: usize, g: &Window, t: &TapGrid) -> Vec<E> {
    let c = g.c;
    let mut wide = vec![E::ZERO; t.m * f];
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let off = t.tap_offset(ky, kx) * c;
            let tap = (ky * g.kw + kx) * c * f;
            E::gemm(
                t.m,
                c,
                f,
                &p[off..off + t.m * c],
                (c as isize, 1),
                &k[tap..tap + c * f],
                (f as isize, 1),
                E::ONE,
                &mut wide,
                (f as isize, 1),
            );
        }
    }
    let mut out = Vec::with_capacity(g.rows() * f);
    for n in 0..g.n {
        for y in 0..g.out_h {
            let r = t.out_row(n, y, 0) * f;
            out.extend_from_slice(&wide[r..r + g.out_w * f]);
        }
    }
    out
}

/// Output gradient spread onto the tap grid, zero on padding rows.
pub(crate) fn widen_output<E: Element>(dy: &[E], f: usize, g: &Window, t: &TapGrid) -> Vec<E> {
    let mut wide = vec![E::ZERO; t.m * f];
    for n in 0..g.n {
        for y in 0..g.out_h {
            let src = (n * g.out_h + y) * g.out_w * f;
            let dst = t.out_row(n, y, 0) * f;
            wide[dst..dst + g.out_w * f].copy_from_slice(&dy[src..src + g.out_w * f]);
        }
    }
    wide
}

/// `dk += Σ_rows p_shiftedᵀ · dy_wide`, one tap at a time.
pub(crate) fn conv_taps_kernel_grad<E: Element>(p: &[E], dy_wide: &[E], f: usize, g: &Window, t: &TapGrid, dk: &mut [E]) {
    let c = g.c;
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let off = t.tap_offset(ky, kx) * c;
            let tap = (ky * g.kw + kx) * c * f;
            E::gemm(
                c,
                t.m,
                f,
                &p[off..off + t.m * c],
                (1, c as isize),
                dy_wide,
                (f as isize, 1),
                E::ONE,
                &mut dk[tap..tap + c * f],
                (f as isize, 1),
            );
        }
    }
}

/// `dx += crop(Σ_taps shift(dy_wide · k_tapᵀ))`.
pub(crate) fn conv_taps_input_grad<E: Element>(dy_wide: &[E], k: &[E], f: usize, g: &Window, t: &TapGrid, dx: &mut [E]) {
    let c = g.c;
    let mut dp = vec![E::ZERO; t.len * c];
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let off = t.tap_offset(ky, kx) * c;
            let tap = (ky * g.kw + kx) * c * f;
            E::gemm(
                t.m,
                f,
                c,
                dy_wide,
                (f as isize, 1),
                &k[tap..tap + c * f],
                (1, f as isize),
                E::ONE,
                &mut dp[off..off + t.m * c],
                (c as isize, 1),
            );
        }
    }
    for n in 0..g.n {
        for y in 0..g.h {
            let dst = (n * g.h + y) * g.w * c;
            let src = t.out_row(n, y + g.pad_top, g.pad_left) * c;
            for (d, &s) in dx[dst..dst + g.w * c].iter_mut().zip(&dp[src..src + g.w * c]) {
                *d += s;
            }
        }
    }
}

/// Max pooling over valid windows; returns values and the flat input index of
/// each winner. Ties go to the first element in scan order.
pub(crate) fn max_pool<E: Element>(x: &[E], g: &Window) -> (Vec<E>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.rows() * g.c);
    let mut arg = Vec::with_capacity(g.rows() * g.c);
    for n in 0..g.n {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for ch in 0..g.c {
                    let mut best = usize::MAX;
                    let mut best_v = E::ZERO;
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let iy = oy * g.stride + ky;
                            let ix = ox * g.stride + kx;
                            let idx = ((n * g.h + iy) * g.w + ix) * g.c + ch;
                            if best == usize::MAX || x[idx] > best_v {
                                best = idx;
                                best_v = x[idx];
                            }
                        }
                    }
                    out.push(best_v);
                    arg.push(best);
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

pub(crate) fn valid_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel > input || kernel == 0 {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}
