//! Seeded augmentation: per-copy op chains sampled from configured
//! probabilities, applied photometric-first, geometric-last.

pub mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::image::{resize_nearest, Image};
use crate::metrics::InstanceLabelMap;

pub use ops::ChannelOrder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub p_motion_blur: f64,
    pub p_median_blur: f64,
    pub p_channel_rearrange: f64,
    pub p_emboss: f64,
    pub p_sharpen: f64,
    pub p_contrast: f64,
    pub p_brightness: f64,
    pub p_zoom: f64,
    pub p_rotate: f64,
    pub zoom_ratio: f64,
    pub rotations: Vec<u32>,
    pub replication_factor: usize,
    pub force_gray: bool,
    /// Inclusive odd range of motion-blur kernel lengths.
    pub motion_blur_length: (usize, usize),
    pub median_windows: Vec<usize>,
    pub emboss_strength: (f64, f64),
    pub sharpen_amount: (f64, f64),
    pub contrast_factor: (f64, f64),
    pub brightness_offset: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            p_motion_blur: 0.1,
            p_median_blur: 0.3,
            p_channel_rearrange: 0.3,
            p_emboss: 0.1,
            p_sharpen: 0.2,
            p_contrast: 0.2,
            p_brightness: 0.2,
            p_zoom: 0.3,
            p_rotate: 0.5,
            zoom_ratio: 0.1,
            rotations: vec![90, 180, 270],
            replication_factor: 5,
            force_gray: true,
            motion_blur_length: (5, 15),
            median_windows: vec![3, 5],
            emboss_strength: (0.3, 1.0),
            sharpen_amount: (0.5, 1.5),
            contrast_factor: (0.8, 1.5),
            brightness_offset: (-30.0, 30.0),
        }
    }
}

impl AugmentationConfig {
    /// Every probability zero and no graying: copies come out unchanged.
    pub fn identity() -> Self {
        Self {
            p_motion_blur: 0.0,
            p_median_blur: 0.0,
            p_channel_rearrange: 0.0,
            p_emboss: 0.0,
            p_sharpen: 0.0,
            p_contrast: 0.0,
            p_brightness: 0.0,
            p_zoom: 0.0,
            p_rotate: 0.0,
            force_gray: false,
            replication_factor: 1,
            ..Self::default()
        }
    }

    fn probabilities(&self) -> [(&'static str, f64); 9] {
        [
            ("p_motion_blur", self.p_motion_blur),
            ("p_median_blur", self.p_median_blur),
            ("p_channel_rearrange", self.p_channel_rearrange),
            ("p_emboss", self.p_emboss),
            ("p_sharpen", self.p_sharpen),
            ("p_contrast", self.p_contrast),
            ("p_brightness", self.p_brightness),
            ("p_zoom", self.p_zoom),
            ("p_rotate", self.p_rotate),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in self.probabilities() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(0.0..0.5).contains(&self.zoom_ratio) {
            return Err(Error::config(format!("zoom ratio {} outside [0, 0.5)", self.zoom_ratio)));
        }
        if self.replication_factor < 1 {
            return Err(Error::config("replication factor must be at least 1"));
        }
        if let Some(r) = self.rotations.iter().find(|r| ![90, 180, 270].contains(*r)) {
            return Err(Error::config(format!("rotation {r} is not one of 90, 180, 270")));
        }
        if self.p_rotate > 0.0 && self.rotations.is_empty() {
            return Err(Error::config("p_rotate > 0 with no rotations to choose from"));
        }
        let (lo, hi) = self.motion_blur_length;
        if lo < 3 || lo % 2 == 0 || hi % 2 == 0 || lo > hi {
            return Err(Error::config(format!("motion blur lengths {lo}..={hi} must be odd, ≥ 3")));
        }
        if self.median_windows.is_empty() || self.median_windows.iter().any(|&w| w < 3 || w % 2 == 0) {
            return Err(Error::config("median windows must be odd and at least 3"));
        }
        for (name, (lo, hi)) in [
            ("emboss_strength", self.emboss_strength),
            ("sharpen_amount", self.sharpen_amount),
            ("contrast_factor", self.contrast_factor),
            ("brightness_offset", self.brightness_offset),
        ] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::config(format!("{name} range {lo}..={hi} is invalid")));
            }
        }
        Ok(())
    }
}

/// One applied transform, as recorded in provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugOp {
    MotionBlur { length: usize, angle: f64 },
    MedianBlur { window: usize },
    Sharpen { amount: f64 },
    Contrast { factor: f64 },
    Brightness { offset: f64 },
    Emboss { strength: f64 },
    ChannelRearrange { order: ChannelOrder },
    Gray,
    Zoom { factor: f64 },
    Rotate { degrees: u32 },
}

impl AugOp {
    pub fn is_geometric(&self) -> bool {
        matches!(self, AugOp::Zoom { .. } | AugOp::Rotate { .. })
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn push_if<R: Rng>(ops: &mut Vec<AugOp>, rng: &mut R, p: f64, op: AugOp) {
    if rng.random::<f64>() < p {
        ops.push(op);
    }
}

/// Draws one copy's op chain. Every probabilistic op consumes the same
/// number of draws whether or not it fires, so one op's parameters never
/// shift another's decision.
pub fn sample_plan<R: Rng>(config: &AugmentationConfig, rng: &mut R) -> Vec<AugOp> {
    let mut ops = Vec::new();
    let (lo, hi) = config.motion_blur_length;
    let length = lo + 2 * rng.random_range(0..=(hi - lo) / 2);
    let angle = rng.random_range(0.0..180.0);
    push_if(&mut ops, rng, config.p_motion_blur, AugOp::MotionBlur { length, angle });
    let window = config.median_windows[rng.random_range(0..config.median_windows.len())];
    push_if(&mut ops, rng, config.p_median_blur, AugOp::MedianBlur { window });
    let amount = uniform(rng, config.sharpen_amount);
    push_if(&mut ops, rng, config.p_sharpen, AugOp::Sharpen { amount });
    let factor = uniform(rng, config.contrast_factor);
    push_if(&mut ops, rng, config.p_contrast, AugOp::Contrast { factor });
    let offset = uniform(rng, config.brightness_offset);
    push_if(&mut ops, rng, config.p_brightness, AugOp::Brightness { offset });
    let strength = uniform(rng, config.emboss_strength);
    push_if(&mut ops, rng, config.p_emboss, AugOp::Emboss { strength });
    let order = if rng.random::<bool>() {
        ChannelOrder::Gbr
    } else {
        ChannelOrder::Bgr
    };
    push_if(&mut ops, rng, config.p_channel_rearrange, AugOp::ChannelRearrange { order });
    let factor = uniform(rng, (1.0 - config.zoom_ratio, 1.0 + config.zoom_ratio));
    push_if(&mut ops, rng, config.p_zoom, AugOp::Zoom { factor });
    let degrees = if config.rotations.is_empty() {
        0
    } else {
        config.rotations[rng.random_range(0..config.rotations.len())]
    };
    push_if(&mut ops, rng, config.p_rotate, AugOp::Rotate { degrees });
    if config.force_gray {
        // Gray goes after every colour op and before the geometric ones.
        let at = ops.iter().position(AugOp::is_geometric).unwrap_or(ops.len());
        ops.insert(at, AugOp::Gray);
    }
    ops
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub copy: usize,
    pub seed: u64,
    pub ops: Vec<AugOp>,
}

/// An augmented image with its mask and instance labels transformed alike.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub image: Image,
    /// H×W×1, 0 or 255.
    pub mask: Image,
    pub labels: InstanceLabelMap,
    pub provenance: Provenance,
}

impl AugmentedPair {
    /// Rebuilds a [`Sample`] with one mask per surviving instance.
    pub fn to_sample(&self, image_id: impl Into<String>) -> Result<Sample> {
        let masks = (1..=self.labels.num_instances() as u32)
            .map(|l| self.labels.instance_mask(l))
            .collect();
        Sample::new(image_id, self.image.clone(), masks)
    }
}

/// Applies `ops` in order. Geometric ops move image, mask and labels
/// together; everything else touches the image only.
pub fn apply_ops(image: &Image, labels: &InstanceLabelMap, ops: &[AugOp]) -> Result<(Image, InstanceLabelMap)> {
    let mut img = image.clone();
    let mut lab = labels.clone();
    for op in ops {
        img = match *op {
            AugOp::MotionBlur { length, angle } => ops::motion_blur(&img, length, angle)?,
            AugOp::MedianBlur { window } => ops::median_blur(&img, window)?,
            AugOp::Sharpen { amount } => ops::sharpen(&img, amount),
            AugOp::Contrast { factor } => ops::contrast(&img, factor),
            AugOp::Brightness { offset } => ops::brightness(&img, offset),
            AugOp::Emboss { strength } => ops::emboss(&img, strength),
            AugOp::ChannelRearrange { order } => ops::channel_rearrange(&img, order)?,
            AugOp::Gray => ops::to_gray(&img, 3)?,
            AugOp::Zoom { factor } => {
                let (h, w) = (lab.height(), lab.width());
                lab = InstanceLabelMap::compact(h, w, &ops::zoom_nearest(lab.labels(), h, w, factor, 0))?;
                ops::zoom_image(&img, factor)
            }
            AugOp::Rotate { degrees } => {
                let (h, w, c) = (img.height(), img.width(), img.channels());
                let (data, rh, rw) = ops::rotate(img.data(), h, w, c, degrees)?;
                let (raw, _, _) = ops::rotate(lab.labels(), h, w, 1, degrees)?;
                let rotated = Image::new(rh, rw, c, data)?;
                if (rh, rw) == (h, w) {
                    lab = InstanceLabelMap::new(h, w, raw)?;
                    rotated
                } else {
                    // Non-square quarter turns are resampled back to the source dims.
                    lab = InstanceLabelMap::compact(h, w, &resize_nearest(&raw, rh, rw, 1, h, w))?;
                    rotated.resize_bilinear(h, w)
                }
            }
        };
    }
    Ok((img, lab))
}

/// Per-copy seed: first 8 bytes of SHA-256(seed ‖ image id ‖ copy).
pub fn copy_seed(seed: u64, image_id: &str, copy: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((image_id.len() as u64).to_le_bytes());
    h.update(image_id.as_bytes());
    h.update((copy as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn augmented_id(source_id: &str, copy: usize) -> String {
    format!("{source_id}_aug{copy}")
}

pub fn augment_sample(sample: &Sample, config: &AugmentationConfig, seed: u64, copy: usize) -> Result<AugmentedPair> {
    let s = copy_seed(seed, &sample.image_id, copy);
    let ops = sample_plan(config, &mut ChaCha8Rng::seed_from_u64(s));
    let (image, labels) = apply_ops(&sample.image, &sample.instance_labels, &ops)?;
    let mask = Image::new(
        labels.height(),
        labels.width(),
        1,
        labels.labels().iter().map(|&l| if l > 0 { 255 } else { 0 }).collect(),
    )?;
    Ok(AugmentedPair {
        image,
        mask,
        labels,
        provenance: Provenance {
            source_id: sample.image_id.clone(),
            copy,
            seed: s,
            ops,
        },
    })
}

/// `replication_factor` augmented copies of every sample, grouped by source
/// in input order.
pub fn augment_dataset(samples: &[Sample], config: &AugmentationConfig, seed: u64) -> Result<Vec<AugmentedPair>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::config("nothing to augment: the input set is empty"));
    }
    let k = config.replication_factor;
    (0..samples.len() * k)
        .into_par_iter()
        .map(|i| augment_sample(&samples[i / k], config, seed, i % k))
        .collect()
}
