//! Samples in the DSB-2018 folder layout: loading, writing, mask merging,
//! seeded splitting, resizing to network dimensions, and synthesis.

mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_nearest, Image};
use crate::metrics::InstanceLabelMap;

pub use synth::{synth_generate, SynthConfig};

/// One image with its per-nucleus masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub image: Image,
    pub instance_masks: Vec<Vec<bool>>,
    pub merged_mask: Vec<bool>,
    pub instance_labels: InstanceLabelMap,
}

impl Sample {
    pub fn new(image_id: impl Into<String>, image: Image, instance_masks: Vec<Vec<bool>>) -> Result<Self> {
        let image_id = image_id.into();
        if image.channels() != 3 {
            return Err(Error::shape(format!("{image_id}: expected an RGB image")));
        }
        let (merged_mask, instance_labels) = merge_masks(&instance_masks, image.height(), image.width())
            .map_err(|e| prefix_error(&image_id, e))?;
        Ok(Self {
            image_id,
            image,
            instance_masks,
            merged_mask,
            instance_labels,
        })
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

fn prefix_error(id: &str, e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("{id}: {m}")),
        Error::Config(m) => Error::Config(format!("{id}: {m}")),
        other => other,
    }
}

/// Union of the masks plus a label map where mask `k` (0-based) gets label
/// `k + 1`. Overlapping pixels keep the lowest label.
pub fn merge_masks(masks: &[Vec<bool>], height: usize, width: usize) -> Result<(Vec<bool>, InstanceLabelMap)> {
    let n = height * width;
    let mut labels = vec![0u32; n];
    for (k, mask) in masks.iter().enumerate() {
        if mask.len() != n {
            return Err(Error::shape(format!(
                "mask {k} has {} pixels, image has {height}×{width}",
                mask.len()
            )));
        }
        let mut claimed = false;
        for (l, &m) in labels.iter_mut().zip(mask) {
            if m && *l == 0 {
                *l = k as u32 + 1;
                claimed = true;
            }
        }
        if !claimed {
            return Err(Error::config(if mask.iter().any(|&m| m) {
                format!("mask {k} is entirely covered by lower-indexed masks")
            } else {
                format!("mask {k} is empty")
            }));
        }
    }
    let merged = labels.iter().map(|&l| l != 0).collect();
    Ok((merged, InstanceLabelMap::new(height, width, labels)?))
}

/// Samples that loaded, and the ids that failed with why.
#[derive(Debug)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub errors: Vec<(String, Error)>,
}

/// Reads every `<id>/images/<id>.png` + `<id>/masks/*.png` under `root`,
/// ordered by id. Per-sample failures are collected; finding no loadable
/// sample at all is an error.
pub fn load_dsb(root: &Path) -> Result<LoadedDataset> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    let results: Vec<(String, Result<Sample>)> = ids
        .into_par_iter()
        .map(|id| {
            let r = load_sample(&root.join(&id), &id);
            (id, r)
        })
        .collect();
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for (id, r) in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => {
                log::warn!("skipping {id}: {e}");
                errors.push((id, e));
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset {
            dir: root.display().to_string(),
            failed: errors.len(),
        });
    }
    Ok(LoadedDataset { samples, errors })
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_sample(dir: &Path, id: &str) -> Result<Sample> {
    let images = dir.join("images");
    if !images.is_dir() {
        return Err(Error::io(&images, std::io::ErrorKind::NotFound.into()));
    }
    let mut image_path = images.join(format!("{id}.png"));
    if !image_path.is_file() {
        // Tolerate a differently named file when it is the only one.
        match sorted_pngs(&images)?.as_slice() {
            [only] => image_path = only.clone(),
            _ => return Err(Error::io(&image_path, std::io::ErrorKind::NotFound.into())),
        }
    }
    let image = Image::load_rgb(&image_path)?;
    let masks_dir = dir.join("masks");
    let mut masks = Vec::new();
    if masks_dir.is_dir() {
        for path in sorted_pngs(&masks_dir)? {
            let m = Image::load_gray(&path)?;
            if !m.same_dims(&image) {
                return Err(Error::shape(format!(
                    "{}: mask is {}×{}, image is {}×{}",
                    path.display(),
                    m.height(),
                    m.width(),
                    image.height(),
                    image.width()
                )));
            }
            let mask: Vec<bool> = m.data().iter().map(|&v| v > 0).collect();
            if mask.iter().any(|&v| v) {
                masks.push(mask);
            } else {
                log::warn!("{}: empty mask ignored", path.display());
            }
        }
    }
    Sample::new(id, image, masks)
}

/// Writes samples in the DSB layout, masks as 0/255 gray PNGs.
pub fn write_dsb(samples: &[Sample], root: &Path) -> Result<()> {
    samples.par_iter().try_for_each(|s| write_sample(s, root))
}

pub fn write_sample(s: &Sample, root: &Path) -> Result<()> {
    let dir = root.join(&s.image_id);
    let images = dir.join("images");
    let masks = dir.join("masks");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    s.image.save_png(&images.join(format!("{}.png", s.image_id)))?;
    for (k, m) in s.instance_masks.iter().enumerate() {
        let data = m.iter().map(|&v| if v { 255 } else { 0 }).collect();
        Image::new(s.height(), s.width(), 1, data)?.save_png(&masks.join(format!("mask_{k:04}.png")))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            eval_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Seeded partition of `0..n` into sorted (train, eval) index lists with
/// `|eval| = round(fraction·n)`, kept within `1..n`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::config(format!("need at least 2 samples to split, got {n}")));
    }
    if !(spec.eval_fraction > 0.0 && spec.eval_fraction < 1.0) {
        return Err(Error::config(format!(
            "eval fraction {} outside (0, 1)",
            spec.eval_fraction
        )));
    }
    let n_eval = ((spec.eval_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut eval = order[..n_eval].to_vec();
    let mut train = order[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();
    Ok((train, eval))
}

pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let (train, eval) = split_indices(items.len(), spec)?;
    Ok((
        train.iter().map(|&i| items[i].clone()).collect(),
        eval.iter().map(|&i| items[i].clone()).collect(),
    ))
}

pub fn write_manifest(path: &Path, ids: &[&str]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// A sample at network resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPair {
    pub image_id: String,
    /// H×W×3 in `[0, 1]`.
    pub image: Vec<f32>,
    /// Output-resolution target, 0 or 1.
    pub mask: Vec<f32>,
    /// Ground-truth instances at output resolution.
    pub labels: InstanceLabelMap,
    pub image_size: (usize, usize),
    pub mask_size: (usize, usize),
}

/// Bilinear image resize to `image_size`; nearest-neighbour resize of the
/// merged mask and label map to `mask_size`. Instances that vanish at the
/// lower resolution are dropped and the rest renumbered.
pub fn resize(sample: &Sample, image_size: (usize, usize), mask_size: (usize, usize)) -> Result<NetworkPair> {
    let ((ih, iw), (mh, mw)) = (image_size, mask_size);
    if ih == 0 || iw == 0 || mh == 0 || mw == 0 {
        return Err(Error::config("resize target dimensions must be positive"));
    }
    let (h, w) = (sample.height(), sample.width());
    let mask = resize_nearest(&sample.merged_mask, h, w, 1, mh, mw)
        .into_iter()
        .map(|m| if m { 1.0 } else { 0.0 })
        .collect();
    let raw = resize_nearest(sample.instance_labels.labels(), h, w, 1, mh, mw);
    Ok(NetworkPair {
        image_id: sample.image_id.clone(),
        image: sample.image.resize_bilinear_unit(ih, iw),
        mask,
        labels: InstanceLabelMap::compact(mh, mw, &raw)?,
        image_size,
        mask_size,
    })
}
