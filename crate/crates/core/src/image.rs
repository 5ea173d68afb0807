//! 8-bit HWC raster type, resampling, and PNG I/O.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Row-major H×W×C image of 8-bit samples.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{} bytes for a {height}×{width}×{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Clamped lookup used by the filters (edge replication).
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize, c: usize) -> u8 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x, c)
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Reads a PNG as 3-channel RGB; alpha is dropped and gray replicated.
    pub fn load_rgb(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::ImageRead {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(h as usize, w as usize, 3, rgb.into_raw())
    }

    /// Reads a PNG as a single luminance channel.
    pub fn load_gray(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::ImageRead {
            path: path.to_path_buf(),
            source,
        })?;
        let gray = match img {
            DynamicImage::ImageLuma8(g) => g,
            other => other.to_luma8(),
        };
        let (w, h) = gray.dimensions();
        Self::new(h as usize, w as usize, 1, gray.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let result = match self.channels {
            1 => GrayImage::from_raw(w, h, self.data.clone())
                .expect("dimensions checked at construction")
                .save(path),
            3 => RgbImage::from_raw(w, h, self.data.clone())
                .expect("dimensions checked at construction")
                .save(path),
            c => return Err(Error::shape(format!("cannot encode a {c}-channel PNG"))),
        };
        result.map_err(|source| Error::ImageWrite {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Bilinear resampling with pixel-center alignment and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image {
        let data = bilinear(self, height, width)
            .into_iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        Image {
            height,
            width,
            channels: self.channels,
            data,
        }
    }

    /// Bilinear resampling to `[0, 1]` floats.
    pub fn resize_bilinear_unit(&self, height: usize, width: usize) -> Vec<f32> {
        bilinear(self, height, width).into_iter().map(|v| v / 255.0).collect()
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> Image {
        Image {
            height,
            width,
            channels: self.channels,
            data: resize_nearest(&self.data, self.height, self.width, self.channels, height, width),
        }
    }
}

fn bilinear(img: &Image, height: usize, width: usize) -> Vec<f32> {
    let c = img.channels;
    let sy = img.height as f32 / height as f32;
    let sx = img.width as f32 / width as f32;
    let mut out = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f32;
        for x in 0..width {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let p = |yy, xx| img.get(yy, xx, ch) as f32;
                let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                let bottom = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                out.push(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    out
}

/// Source index sampled by output index `i` when resizing `src` → `dst`.
/// For an integer downscale factor `f` this is `f·i + f/2`.
#[inline]
pub fn nearest_source(i: usize, src: usize, dst: usize) -> usize {
    ((2 * i + 1) * src / (2 * dst)).min(src - 1)
}

/// Nearest-neighbour resampling of any HWC buffer.
pub fn resize_nearest<T: Copy>(data: &[T], h: usize, w: usize, c: usize, nh: usize, nw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(nh * nw * c);
    for y in 0..nh {
        let sy = nearest_source(y, h, nh);
        for x in 0..nw {
            let sx = nearest_source(x, w, nw);
            let base = (sy * w + sx) * c;
            out.extend_from_slice(&data[base..base + c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_integer_downscale_hits_exact_pixels() {
        assert_eq!(nearest_source(0, 512, 128), 2);
        assert_eq!(nearest_source(127, 512, 128), 510);
        for i in 0..37 {
            assert_eq!(nearest_source(i, 37, 37), i);
        }
    }

    #[test]
    fn identity_resizes() {
        let img = Image::new(2, 3, 1, vec![0, 10, 20, 30, 40, 250]).unwrap();
        assert_eq!(img.resize_bilinear(2, 3), img);
        assert_eq!(img.resize_nearest(2, 3), img);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Image::new(2, 2, 3, (0..12).map(|v| v * 20).collect()).unwrap();
        let p = dir.path().join("x.png");
        rgb.save_png(&p).unwrap();
        assert_eq!(Image::load_rgb(&p).unwrap(), rgb);
        let gray = Image::new(1, 3, 1, vec![0, 128, 255]).unwrap();
        gray.save_png(&p).unwrap();
        assert_eq!(Image::load_gray(&p).unwrap(), gray);
        let as_rgb = Image::load_rgb(&p).unwrap();
        assert_eq!(as_rgb.data(), &[0, 0, 0, 128, 128, 128, 255, 255, 255]);
    }
}
