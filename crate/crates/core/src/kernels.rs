//! CPU kernels behind the differentiable operations.
//!
//! Convolutions are lowered to im2col + GEMM. Every kernel that performs
//! multiply-accumulates returns the exact number it executed so the tape
//! can tally them (padded taps included, since the GEMM multiplies them).

use crate::tensor::Element;

/// Output extent of a strided, zero-padded cross-correlation.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output extent of a transposed convolution.
pub fn conv_transpose_out_extent(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (input - 1) * stride + k + output_padding;
    full.checked_sub(2 * pad).filter(|&v| v > 0)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.in_channels * self.k * self.k
    }

    fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn macs(&self) -> u64 {
        (self.batch * self.out_channels * self.patch_len() * self.out_area()) as u64
    }
}

fn im2col<E: Element>(x: &[E], g: &ConvGeom, cols: &mut [E]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let area = g.out_area();
    for c in 0..g.in_channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * area..(row + 1) * area];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(E::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            E::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<E: Element>(cols: &[E], g: &ConvGeom, x: &mut [E]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let area = g.out_area();
    for c in 0..g.in_channels {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * area..(row + 1) * area];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation `y = W * x` without bias. `w` is `[Cout, Cin, k, k]`.
pub fn conv_forward<E: Element>(x: &[E], w: &[E], g: &ConvGeom) -> (Vec<E>, u64) {
    let in_plane = g.in_channels * g.in_h * g.in_w;
    let out_plane = g.out_channels * g.out_area();
    let mut y = vec![E::zero(); g.batch * out_plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![E::zero(); g.patch_len() * g.out_area()]
    };
    let (m, kk, n) = (g.out_channels, g.patch_len(), g.out_area());
    for b in 0..g.batch {
        let xb = &x[b * in_plane..(b + 1) * in_plane];
        let rhs: &[E] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let yb = &mut y[b * out_plane..(b + 1) * out_plane];
        E::gemm(m, kk, n, w, (kk as isize, 1), rhs, (n as isize, 1), E::zero(), yb);
    }
    (y, g.macs())
}

/// Adjoint of [`conv_forward`] with respect to its input: maps an
/// output-shaped tensor back onto the input grid. This is also the forward
/// pass of a transposed convolution.
pub fn conv_adjoint<E: Element>(gy: &[E], w: &[E], g: &ConvGeom) -> (Vec<E>, u64) {
    let in_plane = g.in_channels * g.in_h * g.in_w;
    let out_plane = g.out_channels * g.out_area();
    let mut gx = vec![E::zero(); g.batch * in_plane];
    let mut cols = vec![E::zero(); g.patch_len() * g.out_area()];
    let (m, kk, n) = (g.patch_len(), g.out_channels, g.out_area());
    for b in 0..g.batch {
        let gyb = &gy[b * out_plane..(b + 1) * out_plane];
        let gxb = &mut gx[b * in_plane..(b + 1) * in_plane];
        if g.is_pointwise() {
            E::gemm(m, kk, n, w, (1, m as isize), gyb, (n as isize, 1), E::zero(), gxb);
        } else {
            E::gemm(m, kk, n, w, (1, m as isize), gyb, (n as isize, 1), E::zero(), &mut cols);
            col2im(&cols, g, gxb);
        }
    }
    (gx, g.macs())
}

/// Gradient of [`conv_forward`] with respect to its weight.
pub fn conv_weight_grad<E: Element>(x: &[E], gy: &[E], g: &ConvGeom) -> Vec<E> {
    let in_plane = g.in_channels * g.in_h * g.in_w;
    let out_plane = g.out_channels * g.out_area();
    let (m, kk, n) = (g.out_channels, g.out_area(), g.patch_len());
    let mut gw = vec![E::zero(); m * n];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![E::zero(); g.patch_len() * g.out_area()]
    };
    for b in 0..g.batch {
        let xb = &x[b * in_plane..(b + 1) * in_plane];
        let rhs: &[E] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let gyb = &gy[b * out_plane..(b + 1) * out_plane];
        E::gemm(m, kk, n, gyb, (kk as isize, 1), rhs, (1, kk as isize), E::one(), &mut gw);
    }
    gw
}

/// Per-channel sums over batch and space of an `[N, C, H, W]` buffer.
pub fn channel_sums<E: Element>(gy: &[E], batch: usize, channels: usize, area: usize) -> Vec<E> {
    let mut out = vec![E::zero(); channels];
    for b in 0..batch {
        for (c, acc) in out.iter_mut().enumerate() {
            let start = (b * channels + c) * area;
            *acc += gy[start..start + area].iter().copied().sum::<E>();
        }
    }
    out
}

/// Adds `bias[c]` to every element of channel `c` in place.
pub fn add_channel_bias<E: Element>(y: &mut [E], bias: &[E], batch: usize, area: usize) {
    let channels = bias.len();
    for b in 0..batch {
        for (c, &bv) in bias.iter().enumerate() {
            let start = (b * channels + c) * area;
            for v in &mut y[start..start + area] {
                *v += bv;
            }
        }
    }
}

/// Source index (into the `[N, C, H, W]` input) of every element of
/// `pixel_unshuffle(input, r)`, in output order. Output channel
/// `c * r^2 + dy * r + dx` holds the sub-pixel at offset `(dy, dx)`.
pub fn unshuffle_sources(dims: [usize; 4], r: usize) -> Vec<usize> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h / r, w / r);
    let mut idx = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    for y in 0..oh {
                        for x in 0..ow {
                            idx.push(((b * c + ci) * h + y * r + dy) * w + x * r + dx);
                        }
                    }
                }
            }
        }
    }
    idx
}

/// Gathers `src[idx[i]]` into position `i`.
pub fn gather<E: Element>(src: &[E], idx: &[usize]) -> Vec<E> {
    idx.iter().map(|&i| src[i]).collect()
}

/// Scatters `src[i]` into position `idx[i]`; inverse of [`gather`] for a
/// permutation.
pub fn scatter<E: Element>(src: &[E], idx: &[usize]) -> Vec<E> {
    let mut out = vec![E::zero(); src.len()];
    for (&i, &v) in idx.iter().zip(src) {
        out[i] = v;
    }
    out
}

/// Valid-mode separable depthwise filtering of `[planes, H, W]` with the
/// same 1-D taps along rows and columns. Output is
/// `[planes, H - K + 1, W - K + 1]`.
pub fn separable_valid<E: Element>(
    x: &[E],
    planes: usize,
    h: usize,
    w: usize,
    taps: &[E],
) -> Vec<E> {
    let kk = taps.len();
    let (oh, ow) = (h - kk + 1, w - kk + 1);
    let mut rows = vec![E::zero(); h * ow];
    let mut out = vec![E::zero(); planes * oh * ow];
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let line = &plane[y * w..(y + 1) * w];
            for ox in 0..ow {
                let mut acc = E::zero();
                for (j, &t) in taps.iter().enumerate() {
                    acc += t * line[ox + j];
                }
                rows[y * ow + ox] = acc;
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for (j, &t) in taps.iter().enumerate() {
                let src = &rows[(oy + j) * ow..(oy + j + 1) * ow];
                for (d, &s) in dst[oy * ow..(oy + 1) * ow].iter_mut().zip(src) {
                    *d += t * s;
                }
            }
        }
    }
    out
}

/// Adjoint of [`separable_valid`].
pub fn separable_valid_adjoint<E: Element>(
    gy: &[E],
    planes: usize,
    h: usize,
    w: usize,
    taps: &[E],
) -> Vec<E> {
    let kk = taps.len();
    let (oh, ow) = (h - kk + 1, w - kk + 1);
    let mut rows = vec![E::zero(); h * ow];
    let mut out = vec![E::zero(); planes * h * w];
    for p in 0..planes {
        let src = &gy[p * oh * ow..(p + 1) * oh * ow];
        rows.fill(E::zero());
        for oy in 0..oh {
            for (j, &t) in taps.iter().enumerate() {
                let dst = &mut rows[(oy + j) * ow..(oy + j + 1) * ow];
                for (d, &s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                    *d += t * s;
                }
            }
        }
        let plane = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let line = &mut plane[y * w..(y + 1) * w];
            for ox in 0..ow {
                let g = rows[y * ow + ox];
                for (j, &t) in taps.iter().enumerate() {
                    line[ox + j] += t * g;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.batch * g.out_channels * g.out_h * g.out_w];
        for b in 0..g.batch {
            for co in 0..g.out_channels {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for ci in 0..g.in_channels {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= g.in_h as isize
                                        || ix >= g.in_w as isize
                                    {
                                        continue;
                                    }
                                    acc += w[((co * g.in_channels + ci) * g.k + ky) * g.k + kx]
                                        * x[((b * g.in_channels + ci) * g.in_h + iy as usize)
                                            * g.in_w
                                            + ix as usize];
                                }
                            }
                        }
                        y[((b * g.out_channels + co) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_gemm_matches_direct_loops() {
        for &(k, s, p, h, w) in &[(3, 1, 1, 5, 6), (3, 2, 1, 6, 6), (1, 1, 0, 4, 3), (3, 2, 0, 7, 5)] {
            let g = ConvGeom {
                batch: 2,
                in_channels: 3,
                out_channels: 2,
                in_h: h,
                in_w: w,
                out_h: conv_out_extent(h, k, s, p).unwrap(),
                out_w: conv_out_extent(w, k, s, p).unwrap(),
                k,
                stride: s,
                pad: p,
            };
            let x: Vec<f64> = (0..2 * 3 * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let wt: Vec<f64> = (0..2 * 3 * k * k).map(|i| ((i * 13 % 7) as f64) * 0.25).collect();
            let (y, macs) = conv_forward(&x, &wt, &g);
            assert_eq!(y, naive_conv(&x, &wt, &g));
            assert_eq!(macs, (2 * 2 * 3 * k * k * g.out_h * g.out_w) as u64);
        }
    }

    #[test]
    fn separable_adjoint_identity() {
        let (planes, h, w) = (2, 7, 9);
        let taps = [0.2, 0.5, 0.3];
        let x: Vec<f64> = (0..planes * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = separable_valid(&x, planes, h, w, &taps);
        let gy: Vec<f64> = (0..y.len()).map(|i| (i as f64 * 0.71).cos()).collect();
        let gx = separable_valid_adjoint(&gy, planes, h, w, &taps);
        let lhs: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn extents() {
        assert_eq!(conv_out_extent(64, 3, 2, 1), Some(32));
        assert_eq!(conv_out_extent(2, 5, 1, 0), None);
        assert_eq!(conv_transpose_out_extent(32, 3, 2, 1, 1), Some(64));
        assert_eq!(conv_transpose_out_extent(2, 1, 2, 0, 0), Some(3));
    }
}
