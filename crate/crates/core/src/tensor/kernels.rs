//! Raw NHWC kernels. Everything here works on flat slices; shape checking
//! happens in the graph layer.

use super::Real;
use crate::error::{Error, Result};

/// Sliding-window geometry shared by convolution, transposed convolution
/// and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Zero padding so that `out = ceil(in / stride)`; the odd pixel goes to
    /// the bottom/right.
    #[allow(clippy::too_many_arguments)]
    pub fn same(
        batch: usize,
        in_h: usize,
        in_w: usize,
        channels: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
    ) -> Result<Self> {
        check_stride(stride)?;
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + k_h).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + k_w).saturating_sub(in_w);
        Ok(Self {
            batch,
            in_h,
            in_w,
            channels,
            k_h,
            k_w,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_h,
            out_w,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn valid(
        batch: usize,
        in_h: usize,
        in_w: usize,
        channels: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
    ) -> Result<Self> {
        check_stride(stride)?;
        if k_h > in_h || k_w > in_w {
            return Err(Error::shape(format!(
                "{k_h}×{k_w} window exceeds {in_h}×{in_w} input"
            )));
        }
        Ok(Self {
            batch,
            in_h,
            in_w,
            channels,
            k_h,
            k_w,
            stride,
            pad_top: 0,
            pad_left: 0,
            out_h: (in_h - k_h) / stride + 1,
            out_w: (in_w - k_w) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.channels
    }

    pub fn out_pixels(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.batch * self.in_h * self.in_w * self.channels
    }

    /// Input row/column for a window offset, `None` when it falls in padding.
    #[inline]
    fn source(&self, out: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + k).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }

    /// True when the patch matrix is the input itself (1×1, stride 1).
    pub fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }
}

fn check_stride(stride: usize) -> Result<()> {
    if stride < 1 {
        return Err(Error::config("stride must be at least 1"));
    }
    Ok(())
}

/// Unfolds windows into rows of a (pixels × k_h·k_w·C) matrix.
pub fn im2col<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let c = g.channels;
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); g.out_pixels() * patch];
    let mut row = 0;
    for n in 0..g.batch {
        let img = &input[n * g.in_h * g.in_w * c..(n + 1) * g.in_h * g.in_w * c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.k_h {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.k_w {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let src = (iy * g.in_w + ix) * c;
                        let off = (ky * g.k_w + kx) * c;
                        dst[off..off + c].copy_from_slice(&img[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch rows back, summing overlaps.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, out: &mut [T]) {
    let c = g.channels;
    let patch = g.patch_len();
    let mut row = 0;
    for n in 0..g.batch {
        let img = &mut out[n * g.in_h * g.in_w * c..(n + 1) * g.in_h * g.in_w * c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.k_h {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.k_w {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let dst = (iy * g.in_w + ix) * c;
                        let off = (ky * g.k_w + kx) * c;
                        for (d, s) in img[dst..dst + c].iter_mut().zip(&src[off..off + c]) {
                            *d = *d + *s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward convolution: returns (pixels × c_out) output.
pub fn conv_forward<T: Real>(input: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeometry, c_out: usize) -> Vec<T> {
    let m = g.out_pixels();
    let k = g.patch_len();
    let mut out = vec![T::zero(); m * c_out];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(c_out) {
            row.copy_from_slice(b);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    if g.is_pointwise() {
        T::gemm(m, k, c_out, input, k as isize, 1, weight, c_out as isize, 1, beta, &mut out, c_out as isize, 1);
    } else {
        let cols = im2col(input, g);
        T::gemm(m, k, c_out, &cols, k as isize, 1, weight, c_out as isize, 1, beta, &mut out, c_out as isize, 1);
    }
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv_backward<T: Real>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    c_out: usize,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let m = g.out_pixels();
    let k = g.patch_len();
    let owned_cols;
    let cols: &[T] = if !need.1 {
        &[]
    } else if g.is_pointwise() {
        input
    } else {
        owned_cols = im2col(input, g);
        &owned_cols
    };
    let weight_grad = need.1.then(|| {
        let mut dw = vec![T::zero(); k * c_out];
        // colsᵀ · dY
        T::gemm(k, m, c_out, cols, 1, k as isize, grad_out, c_out as isize, 1, T::zero(), &mut dw, c_out as isize, 1);
        dw
    });
    let input_grad = need.0.then(|| {
        let mut dcols = vec![T::zero(); m * k];
        // dY · Wᵀ
        T::gemm(m, c_out, k, grad_out, c_out as isize, 1, weight, 1, c_out as isize, T::zero(), &mut dcols, k as isize, 1);
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![T::zero(); g.in_len()];
            col2im(&dcols, g, &mut dx);
            dx
        }
    });
    let bias_grad = need.2.then(|| channel_sums(grad_out, c_out));
    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    }
}

pub fn channel_sums<T: Real>(data: &[T], channels: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); channels];
    for row in data.chunks_exact(channels) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s = *s + *v;
        }
    }
    sums
}

/// Reorders a Kh×Kw×Cin×Cout kernel into a Cin × (Kh·Kw·Cout) matrix.
pub fn deconv_weight_matrix<T: Real>(weight: &[T], taps: usize, c_in: usize, c_out: usize) -> Vec<T> {
    let mut m = vec![T::zero(); weight.len()];
    for t in 0..taps {
        for ci in 0..c_in {
            let src = (t * c_in + ci) * c_out;
            let dst = ci * taps * c_out + t * c_out;
            m[dst..dst + c_out].copy_from_slice(&weight[src..src + c_out]);
        }
    }
    m
}

/// Inverse of [`deconv_weight_matrix`].
pub fn deconv_weight_unmatrix<T: Real>(m: &[T], taps: usize, c_in: usize, c_out: usize) -> Vec<T> {
    let mut w = vec![T::zero(); m.len()];
    for t in 0..taps {
        for ci in 0..c_in {
            let dst = (t * c_in + ci) * c_out;
            let src = ci * taps * c_out + t * c_out;
            w[dst..dst + c_out].copy_from_slice(&m[src..src + c_out]);
        }
    }
    w
}

/// Transposed convolution. `g` is the geometry of the forward convolution
/// that maps the (large) output back onto the (small) input.
pub fn deconv_forward<T: Real>(input: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeometry, c_in: usize) -> Vec<T> {
    let c_out = g.channels;
    let taps = g.k_h * g.k_w;
    let m = g.out_pixels();
    let wm = deconv_weight_matrix(weight, taps, c_in, c_out);
    let mut cols = vec![T::zero(); m * taps * c_out];
    T::gemm(m, c_in, taps * c_out, input, c_in as isize, 1, &wm, (taps * c_out) as isize, 1, T::zero(), &mut cols, (taps * c_out) as isize, 1);
    let mut out = vec![T::zero(); g.in_len()];
    col2im(&cols, g, &mut out);
    if let Some(b) = bias {
        for px in out.chunks_exact_mut(c_out) {
            for (v, bb) in px.iter_mut().zip(b) {
                *v = *v + *bb;
            }
        }
    }
    out
}

pub fn deconv_backward<T: Real>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    c_in: usize,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let c_out = g.channels;
    let taps = g.k_h * g.k_w;
    let m = g.out_pixels();
    let kc = taps * c_out;
    let dcols = im2col(grad_out, g);
    let input_grad = need.0.then(|| {
        let wm = deconv_weight_matrix(weight, taps, c_in, c_out);
        let mut dx = vec![T::zero(); m * c_in];
        T::gemm(m, kc, c_in, &dcols, kc as isize, 1, &wm, 1, kc as isize, T::zero(), &mut dx, c_in as isize, 1);
        dx
    });
    let weight_grad = need.1.then(|| {
        let mut dwm = vec![T::zero(); c_in * kc];
        T::gemm(c_in, m, kc, input, 1, c_in as isize, &dcols, kc as isize, 1, T::zero(), &mut dwm, kc as isize, 1);
        deconv_weight_unmatrix(&dwm, taps, c_in, c_out)
    });
    let bias_grad = need.2.then(|| channel_sums(grad_out, c_out));
    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    }
}

/// Max pooling; also returns, per output element, the flat input index that
/// won (first maximum in row-major window order).
pub fn maxpool_forward<T: Real>(input: &[T], g: &ConvGeometry) -> (Vec<T>, Vec<usize>) {
    let c = g.channels;
    let mut out = Vec::with_capacity(g.out_pixels() * c);
    let mut arg = Vec::with_capacity(g.out_pixels() * c);
    for n in 0..g.batch {
        let base = n * g.in_h * g.in_w * c;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ky in 0..g.k_h {
                        let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                            continue;
                        };
                        for kx in 0..g.k_w {
                            let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else {
                                continue;
                            };
                            let idx = base + (iy * g.in_w + ix) * c + ch;
                            if best_idx == usize::MAX || input[idx] > best {
                                best = input[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg)
}

pub fn avgpool_forward<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let c = g.channels;
    let mut sums = vec![T::zero(); g.out_pixels() * c];
    let mut counts = vec![0usize; g.out_pixels() * c];
    avgpool_visit(g, |out_idx, in_idx, _: T| {
        sums[out_idx] = sums[out_idx] + input[in_idx];
        counts[out_idx] += 1;
    });
    sums.iter().zip(&counts).map(|(s, n)| *s / T::from_usize(*n)).collect()
}

pub fn avgpool_backward<T: Real>(grad_out: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut dx = vec![T::zero(); g.in_len()];
    avgpool_visit(g, |out_idx, in_idx, inv_count| {
        dx[in_idx] = dx[in_idx] + grad_out[out_idx] * inv_count;
    });
    dx
}

/// Calls `f(out_index, in_index, 1/count)` for each in-bounds window tap;
/// padding taps are excluded from the count.
fn avgpool_visit<T: Real>(g: &ConvGeometry, mut f: impl FnMut(usize, usize, T)) {
    let c = g.channels;
    let mut taps = Vec::with_capacity(g.k_h * g.k_w);
    for n in 0..g.batch {
        let base = n * g.in_h * g.in_w * c;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                taps.clear();
                for ky in 0..g.k_h {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.k_w {
                        if let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) {
                            taps.push(base + (iy * g.in_w + ix) * c);
                        }
                    }
                }
                let inv = T::one() / T::from_usize(taps.len());
                let out_base = ((n * g.out_h + oy) * g.out_w + ox) * c;
                for &t in &taps {
                    for ch in 0..c {
                        f(out_base + ch, t + ch, inv);
                    }
                }
            }
        }
    }
}

pub fn upsample_forward<T: Real>(input: &[T], dims: [usize; 4], factor: usize) -> Vec<T> {
    let [n, h, w, c] = dims;
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let src = ((b * h + y / factor) * w + x / factor) * c;
                out.extend_from_slice(&input[src..src + c]);
            }
        }
    }
    out
}

pub fn upsample_backward<T: Real>(grad_out: &[T], dims: [usize; 4], factor: usize) -> Vec<T> {
    let [n, h, w, c] = dims;
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let src = ((b * oh + y) * ow + x) * c;
                let dst = ((b * h + y / factor) * w + x / factor) * c;
                for ch in 0..c {
                    dx[dst + ch] = dx[dst + ch] + grad_out[src + ch];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_puts_extra_pixel_bottom_right() {
        let g = ConvGeometry::same(1, 4, 4, 1, 2, 2, 1).unwrap();
        assert_eq!((g.out_h, g.pad_top), (4, 0));
        let g = ConvGeometry::same(1, 256, 256, 1, 3, 3, 2).unwrap();
        assert_eq!((g.out_h, g.pad_top), (128, 0));
        let g = ConvGeometry::same(1, 512, 512, 3, 7, 7, 2).unwrap();
        assert_eq!((g.out_h, g.pad_top), (256, 2));
    }

    #[test]
    fn valid_window_too_large() {
        assert!(matches!(
            ConvGeometry::valid(1, 2, 2, 1, 3, 3, 1),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            ConvGeometry::same(1, 2, 2, 1, 3, 3, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry::same(2, 5, 4, 3, 3, 3, 2).unwrap();
        let x: Vec<f64> = (0..g.in_len()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let cols = im2col(&x, &g);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
