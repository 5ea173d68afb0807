use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::image::Image;

const MAX_PLACEMENT_ATTEMPTS: usize = 500;
const MAX_LAYOUT_ATTEMPTS: usize = 100;

/// Parameters of the synthetic fluorescence-style dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range of nuclei per image.
    pub blob_count: (usize, usize),
    /// Inclusive range of ellipse semi-axes, in pixels.
    pub blob_radius: (f64, f64),
    /// Minimum background gap between nuclei, in pixels.
    pub min_gap: f64,
    /// Std-dev of additive Gaussian noise on the `[0, 1]` scale.
    pub noise_level: f64,
    /// Peak nucleus brightness on the `[0, 1]` scale.
    pub blob_intensity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 200,
            height: 64,
            width: 64,
            blob_count: (2, 5),
            blob_radius: (6.0, 11.0),
            min_gap: 2.0,
            noise_level: 0.03,
            blob_intensity: 0.9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.count == 0 {
            return bad("synthetic count must be at least 1".into());
        }
        if self.height < 4 || self.width < 4 {
            return bad(format!("image {}×{} is too small", self.height, self.width));
        }
        let (lo, hi) = self.blob_count;
        if lo > hi {
            return bad(format!("blob count range {lo}..={hi} is empty"));
        }
        let (rlo, rhi) = self.blob_radius;
        if !(rlo >= 1.0 && rlo <= rhi && rhi.is_finite()) {
            return bad(format!("blob radius range {rlo}..={rhi} is degenerate"));
        }
        if 2.0 * rhi >= self.height.min(self.width) as f64 {
            return bad(format!("blob radius {rhi} does not fit a {}×{} image", self.height, self.width));
        }
        if !(self.min_gap >= 0.0 && self.min_gap.is_finite()) {
            return bad(format!("min gap {} must be a nonnegative number", self.min_gap));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise level {} must be nonnegative", self.noise_level));
        }
        if !(self.blob_intensity > 0.0 && self.blob_intensity <= 1.0) {
            return bad(format!("blob intensity {} outside (0, 1]", self.blob_intensity));
        }
        Ok(())
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    /// Normalized radial coordinate: < 1 inside.
    fn rho(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.rx).powi(2) + (v / self.ry).powi(2)
    }
}

/// Generates `config.count` samples. Sample `i` depends only on
/// `(seed, i)`, so generation order does not matter.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    (0..config.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            synth_sample(config, &format!("synth_{i:05}"), &mut rng)
        })
        .collect()
}

fn synth_sample(cfg: &SynthConfig, id: &str, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let (h, w) = (cfg.height, cfg.width);
    let n = rng.random_range(cfg.blob_count.0..=cfg.blob_count.1);
    let blobs = layout(cfg, n, rng).ok_or_else(|| {
        Error::config(format!(
            "{id}: could not place {n} nuclei of radius ≤ {} with gap {} in {h}×{w}",
            cfg.blob_radius.1, cfg.min_gap
        ))
    })?;

    // Low-frequency texture from a few random plane waves.
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let freq = rng.random_range(0.05..0.25);
            (theta.cos() * freq, theta.sin() * freq, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let base = rng.random_range(0.04..0.12);
    // Per-image stain tint, mostly gray with a random colour cast.
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.75..1.0));
    let peaks: Vec<f64> = blobs.iter().map(|_| rng.random_range(0.85..1.0)).collect();
    let noise = Normal::new(0.0, cfg.noise_level.max(f64::MIN_POSITIVE)).expect("finite std");

    let mut data = Vec::with_capacity(h * w * 3);
    let mut masks = vec![vec![false; h * w]; blobs.len()];
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let texture: f64 = waves.iter().map(|&(a, b, p)| (a * px + b * py + p).sin()).sum::<f64>() / 3.0;
            let mut v = base + 0.03 * texture;
            for (k, e) in blobs.iter().enumerate() {
                let r = e.rho(py, px);
                if r < 1.0 {
                    masks[k][y * w + x] = true;
                    // Bright core fading toward the rim.
                    v = cfg.blob_intensity * peaks[k] * (0.55 + 0.45 * (1.0 - r));
                }
            }
            for t in tint {
                let n = if cfg.noise_level > 0.0 { noise.sample(rng) } else { 0.0 };
                data.push(((v * t + n) * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    // Semi-axes ≥ 1 always cover a pixel center, and the gap keeps nuclei disjoint.
    debug_assert!(masks.iter().all(|m| m.iter().any(|&v| v)));
    Sample::new(id, Image::new(h, w, 3, data)?, masks)
}

fn layout(cfg: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Ellipse>> {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let (rlo, rhi) = cfg.blob_radius;
    'layout: for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let mut placed: Vec<Ellipse> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut ok = false;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let ry = rng.random_range(rlo..=rhi);
                let rx = rng.random_range(rlo..=rhi);
                let e = Ellipse {
                    cy: rng.random_range(ry.max(rx)..=h - ry.max(rx)),
                    cx: rng.random_range(ry.max(rx)..=w - ry.max(rx)),
                    ry,
                    rx,
                    angle: rng.random_range(0.0..PI),
                };
                if placed.iter().all(|o| separated(&e, o, cfg.min_gap)) {
                    placed.push(e);
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'layout;
            }
        }
        return Some(placed);
    }
    None
}

/// Conservative separation test on bounding circles.
fn separated(a: &Ellipse, b: &Ellipse, gap: f64) -> bool {
    let d = ((a.cy - b.cy).powi(2) + (a.cx - b.cx).powi(2)).sqrt();
    d >= a.ry.max(a.rx) + b.ry.max(b.rx) + gap
}
