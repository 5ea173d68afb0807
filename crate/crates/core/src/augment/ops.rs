//! Pixel-level transforms on 8-bit HWC images. Filters replicate edge pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Correlates every channel with `kernel` (odd side `k`), edge-replicated.
fn filter(img: &Image, kernel: &[f64], k: usize, offset: f64) -> Image {
    let r = (k / 2) as isize;
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..img.channels() {
                let mut acc = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        let w = kernel[ky * k + kx];
                        if w != 0.0 {
                            let p = img.get_clamped(y as isize + ky as isize - r, x as isize + kx as isize - r, c);
                            acc += w * p as f64;
                        }
                    }
                }
                out.set(y, x, c, to_u8(acc + offset));
            }
        }
    }
    out
}

/// Normalized line kernel of odd `length` at `angle` degrees (0 = horizontal,
/// 90 = vertical).
pub fn motion_kernel(length: usize, angle: f64) -> Result<Vec<f64>> {
    if length < 3 || length % 2 == 0 {
        return Err(Error::config(format!("motion blur length {length} must be odd and at least 3")));
    }
    let r = (length / 2) as isize;
    let (s, c) = angle.to_radians().sin_cos();
    let mut kernel = vec![0.0; length * length];
    for t in -r..=r {
        let dx = (t as f64 * c).round() as isize;
        let dy = (t as f64 * s).round() as isize;
        kernel[((r + dy) as usize) * length + (r + dx) as usize] += 1.0;
    }
    kernel.iter_mut().for_each(|v| *v /= length as f64);
    Ok(kernel)
}

pub fn motion_blur(img: &Image, length: usize, angle: f64) -> Result<Image> {
    let kernel = motion_kernel(length, angle)?;
    Ok(filter(img, &kernel, length, 0.0))
}

pub fn median_blur(img: &Image, window: usize) -> Result<Image> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::config(format!("median window {window} must be odd and at least 3")));
    }
    let r = (window / 2) as isize;
    let mut out = img.clone();
    let mut buf = Vec::with_capacity(window * window);
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            for c in 0..img.channels() {
                buf.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        buf.push(img.get_clamped(y + dy, x + dx, c));
                    }
                }
                let mid = buf.len() / 2;
                let (_, m, _) = buf.select_nth_unstable(mid);
                out.set(y as usize, x as usize, c, *m);
            }
        }
    }
    Ok(out)
}

pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    to_u8(0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
}

/// Luminance replicated to `channels` channels.
pub fn to_gray(img: &Image, channels: usize) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::config(format!("gray conversion needs 3 channels, got {}", img.channels())));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| std::iter::repeat_n(luminance(p[0], p[1], p[2]), channels))
        .collect();
    Image::new(img.height(), img.width(), channels, data)
}

/// Light from the top-left: bright on edges facing it, dark on the far side,
/// 128 where the image is flat.
pub fn emboss(img: &Image, strength: f64) -> Image {
    #[rustfmt::skip]
    let base = [
        -1.0, -1.0, 0.0,
        -1.0,  0.0, 1.0,
         0.0,  1.0, 1.0,
    ];
    let kernel: Vec<f64> = base.iter().map(|v| v * strength).collect();
    filter(img, &kernel, 3, 128.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChannelOrder {
    Gbr,
    Bgr,
}

pub fn channel_rearrange(img: &Image, order: ChannelOrder) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::config(format!(
            "channel rearrange needs 3 channels, got {}",
            img.channels()
        )));
    }
    let perm = match order {
        ChannelOrder::Gbr => [1, 2, 0],
        ChannelOrder::Bgr => [2, 1, 0],
    };
    let data = img.data().chunks_exact(3).flat_map(|p| perm.map(|i| p[i])).collect();
    Image::new(img.height(), img.width(), 3, data)
}

/// `p + amount·(p − box3(p))`.
pub fn sharpen(img: &Image, amount: f64) -> Image {
    let blurred = filter(img, &[1.0 / 9.0; 9], 3, 0.0);
    let data = img
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(&p, &b)| to_u8(p as f64 + amount * (p as f64 - b as f64)))
        .collect();
    Image::new(img.height(), img.width(), img.channels(), data).expect("same dims")
}

pub fn contrast(img: &Image, factor: f64) -> Image {
    map_pixels(img, |p| (p - 128.0) * factor + 128.0)
}

pub fn brightness(img: &Image, offset: f64) -> Image {
    map_pixels(img, |p| p + offset)
}

fn map_pixels(img: &Image, f: impl Fn(f64) -> f64) -> Image {
    let data = img.data().iter().map(|&p| to_u8(f(p as f64))).collect();
    Image::new(img.height(), img.width(), img.channels(), data).expect("same dims")
}

/// Clockwise rotation of any HWC buffer by a multiple of 90 degrees;
/// returns the rotated buffer and its (height, width).
pub fn rotate<T: Copy>(data: &[T], h: usize, w: usize, c: usize, degrees: u32) -> Result<(Vec<T>, usize, usize)> {
    let (oh, ow) = match degrees {
        90 | 270 => (w, h),
        0 | 180 => (h, w),
        d => return Err(Error::config(format!("rotation {d} is not a multiple of 90 in [0, 270]"))),
    };
    let mut out = Vec::with_capacity(data.len());
    for i in 0..oh {
        for j in 0..ow {
            let (sy, sx) = match degrees {
                90 => (h - 1 - j, i),
                180 => (h - 1 - i, w - 1 - j),
                270 => (j, w - 1 - i),
                _ => (i, j),
            };
            let base = (sy * w + sx) * c;
            out.extend_from_slice(&data[base..base + c]);
        }
    }
    Ok((out, oh, ow))
}

/// Source coordinate of output index `i` under a zoom about the center.
fn zoom_source(i: usize, n: usize, factor: f64) -> f64 {
    let center = n as f64 / 2.0;
    (i as f64 + 0.5 - center) / factor + center - 0.5
}

/// Zoom about the center keeping dims: factor > 1 crops, < 1 pads with 0.
pub fn zoom_image(img: &Image, factor: f64) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = Image::filled(h, w, c, 0);
    for y in 0..h {
        let fy = zoom_source(y, h, factor);
        for x in 0..w {
            let fx = zoom_source(x, w, factor);
            let (y0, x0) = (fy.floor(), fx.floor());
            let (wy, wx) = (fy - y0, fx - x0);
            for ch in 0..c {
                let p = |yy: f64, xx: f64| -> f64 {
                    if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                        0.0
                    } else {
                        img.get(yy as usize, xx as usize, ch) as f64
                    }
                };
                let v = (p(y0, x0) * (1.0 - wx) + p(y0, x0 + 1.0) * wx) * (1.0 - wy)
                    + (p(y0 + 1.0, x0) * (1.0 - wx) + p(y0 + 1.0, x0 + 1.0) * wx) * wy;
                out.set(y, x, ch, to_u8(v));
            }
        }
    }
    out
}

/// Nearest-neighbour zoom of a single-channel buffer; outside is `fill`.
pub fn zoom_nearest<T: Copy>(data: &[T], h: usize, w: usize, factor: f64, fill: T) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let sy = zoom_source(y, h, factor).round();
        for x in 0..w {
            let sx = zoom_source(x, w, factor).round();
            let inside = sy >= 0.0 && sx >= 0.0 && sy < h as f64 && sx < w as f64;
            out.push(if inside { data[sy as usize * w + sx as usize] } else { fill });
        }
    }
    out
}
