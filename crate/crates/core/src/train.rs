//! Momentum-SGD training with validation-loss early stopping, evaluation,
//! prediction, and checkpoint files.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{self, ArchOptions, ModelKind, Network, NetworkSpec};
use crate::checkpoint::Checkpoint;
use crate::dataset::NetworkPair;
use crate::error::{Error, Result};
use crate::image::{resize_nearest, Image};
use crate::metrics::{self, connected_components, Connectivity, ImageReport, InstanceLabelMap, ThresholdSweep};
use crate::tensor::{sgd_momentum_step, Graph, Mode, Tensor};

/// Probability above which (strictly) an output pixel is foreground.
pub const BINARIZE_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout_rate: f64,
    pub patience: usize,
    /// Validation loss must drop by at least this much to count as improved.
    pub min_improvement: f64,
    pub max_epochs: usize,
    /// Defaults to 4 at full scale and 2 at reduced scales when absent.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub model: ModelKind,
    pub scale: usize,
    pub growth_rate: Option<usize>,
    /// Keep batch norm on its running statistics during training.
    pub freeze_batchnorm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            dropout_rate: 0.5,
            patience: 2,
            min_improvement: 1e-6,
            max_epochs: 30,
            batch_size: None,
            seed: 0,
            model: ModelKind::Unet,
            scale: 1,
            growth_rate: None,
            freeze_batchnorm: false,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(if self.scale == 1 { 4 } else { 2 })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.patience < 1 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.max_epochs < 1 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.batch_size() < 1 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.min_improvement >= 0.0) {
            return Err(Error::config("min_improvement must be ≥ 0"));
        }
        Ok(())
    }

    pub fn arch_options(&self) -> ArchOptions {
        ArchOptions {
            scale: self.scale,
            input_hw: None,
            in_channels: 3,
            growth_rate: self.growth_rate,
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn build_spec(&self) -> Result<NetworkSpec> {
        arch::build(self.model, &self.arch_options())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStop => "early_stop",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_map: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
}

impl History {
    /// CSV without wall time, so identical runs give identical bytes; the
    /// stop reason is filled on the last row only.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss", "val_map", "stop_reason"])?;
        let last = self.epochs.len();
        for r in &self.epochs {
            let reason = if r.epoch == last {
                self.stop_reason.to_string()
            } else {
                String::new()
            };
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.val_map.to_string(),
                reason,
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Receives each finished epoch. `adjust_val_loss` lets a caller substitute
/// the validation loss that drives early stopping.
pub trait Monitor {
    fn adjust_val_loss(&mut self, _epoch: usize, measured: f64) -> f64 {
        measured
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

pub struct Silent;

impl Monitor for Silent {}

/// Checkpoint metadata: enough to rebuild the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model: ModelKind,
    pub scale: usize,
    pub growth_rate: Option<usize>,
    pub dropout_rate: f64,
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ModelMeta {
    pub fn new(spec: &NetworkSpec, dropout_rate: f64, config: serde_json::Value) -> Self {
        Self {
            model: spec.name,
            scale: spec.scale,
            growth_rate: spec.growth_rate,
            dropout_rate,
            input_shape: spec.input_shape,
            output_shape: spec.output_shape,
            config,
        }
    }

    pub fn build_spec(&self) -> Result<NetworkSpec> {
        arch::build(
            self.model,
            &ArchOptions {
                scale: self.scale,
                input_hw: Some((self.input_shape[0], self.input_shape[1])),
                in_channels: self.input_shape[2],
                growth_rate: self.growth_rate,
                dropout_rate: self.dropout_rate,
            },
        )
    }
}

pub struct TrainOutcome {
    /// Restored to the best-validation-loss epoch.
    pub network: Network,
    pub checkpoint: Checkpoint,
    pub history: History,
}

/// Stacks images and masks of `batch` into N×H×W×3 and N×h×w×1 tensors.
fn stack(batch: &[&NetworkPair]) -> Result<(Tensor, Tensor)> {
    let (ih, iw) = batch[0].image_size;
    let (mh, mw) = batch[0].mask_size;
    let mut images = Vec::with_capacity(batch.len() * ih * iw * 3);
    let mut masks = Vec::with_capacity(batch.len() * mh * mw);
    for p in batch {
        if p.image_size != (ih, iw) || p.mask_size != (mh, mw) {
            return Err(Error::shape(format!("{}: sample dims differ within a batch", p.image_id)));
        }
        images.extend_from_slice(&p.image);
        masks.extend_from_slice(&p.mask);
    }
    Ok((
        Tensor::new(vec![batch.len(), ih, iw, 3], images)?,
        Tensor::new(vec![batch.len(), mh, mw, 1], masks)?,
    ))
}

fn check_dims(spec: &NetworkSpec, set: &[NetworkPair]) -> Result<()> {
    let [ih, iw, _] = spec.input_shape;
    let [oh, ow, _] = spec.output_shape;
    for p in set {
        if p.image_size != (ih, iw) || p.mask_size != (oh, ow) {
            return Err(Error::config(format!(
                "{}: prepared at {:?}/{:?}, {} expects {ih}×{iw} in and {oh}×{ow} out",
                p.image_id, p.image_size, p.mask_size, spec.name
            )));
        }
    }
    Ok(())
}

pub fn train(
    spec: NetworkSpec,
    train_set: &[NetworkPair],
    val_set: &[NetworkPair],
    config: &TrainConfig,
    monitor: &mut dyn Monitor,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("training and validation sets must be nonempty"));
    }
    check_dims(&spec, train_set)?;
    check_dims(&spec, val_set)?;
    let meta = ModelMeta::new(&spec, config.dropout_rate, serde_json::to_value(config)?);
    let meta_json = serde_json::to_string(&meta)?;
    let mut net = Network::new(spec, config.seed)?;
    net.set_freeze_batchnorm(config.freeze_batchnorm);
    let sweep = ThresholdSweep::default();
    let bs = config.batch_size();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(bs).enumerate() {
            let batch: Vec<&NetworkPair> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = train_step(&mut net, &batch, config, &mut rng).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss { epoch, batch: b + 1 },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let eval = evaluate(&mut net, val_set, &sweep)?;
        let val_loss = monitor.adjust_val_loss(epoch, eval.mean_loss);
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_map: eval.map,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: train loss {train_loss:.5}, val loss {val_loss:.5}, val mAP {:.4}",
            eval.map
        );
        monitor.on_epoch(&record);
        records.push(record);

        let improved = best
            .as_ref()
            .is_none_or(|(b, _, _)| val_loss < b - config.min_improvement);
        if improved {
            best = Some((val_loss, epoch, net.to_checkpoint(meta_json.clone())));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }

    let (_, best_epoch, checkpoint) = best.expect("at least one epoch ran");
    net.load_checkpoint(&checkpoint)?;
    Ok(TrainOutcome {
        network: net,
        checkpoint,
        history: History {
            epochs: records,
            stop_reason,
            best_epoch,
        },
    })
}

/// One forward/backward/update; returns the batch loss.
fn train_step(net: &mut Network, batch: &[&NetworkPair], config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (images, masks) = stack(batch)?;
    let mut g = Graph::new();
    let x = g.input(images);
    let y = net.forward(&mut g, x, Mode::Train, rng)?;
    let loss = g.bce_loss(y, &masks)?;
    let value = g.value(loss).data()[0] as f64;
    g.backward_into(loss, net.params_mut())?;
    sgd_momentum_step(net.params_mut(), config.learning_rate, config.momentum)?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean_loss: f64,
    pub map: f64,
    pub per_image: Vec<ImageReport>,
}

/// Eval-mode loss and mAP. Instances are connected components of the
/// probability map strictly above [`BINARIZE_THRESHOLD`].
pub fn evaluate(net: &mut Network, set: &[NetworkPair], sweep: &ThresholdSweep) -> Result<EvalResult> {
    if set.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    check_dims(net.spec(), set)?;
    let [oh, ow, _] = net.spec().output_shape;
    let mut loss_sum = 0.0;
    let mut probs: Vec<Vec<f32>> = Vec::with_capacity(set.len());
    for chunk in set.chunks(16) {
        let batch: Vec<&NetworkPair> = chunk.iter().collect();
        let (images, masks) = stack(&batch)?;
        let mut g = Graph::new();
        let x = g.input(images);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = net.forward(&mut g, x, Mode::Eval, &mut rng)?;
        let loss = g.bce_loss(y, &masks)?;
        loss_sum += g.value(loss).data()[0] as f64 * chunk.len() as f64;
        probs.extend(g.value(y).data().chunks(oh * ow).map(<[f32]>::to_vec));
    }
    let per_image = set
        .par_iter()
        .zip(&probs)
        .map(|(pair, p)| {
            let pred = connected_components(p, oh, ow, BINARIZE_THRESHOLD, Connectivity::Eight)?;
            let precisions = metrics::precision_curve(&pred, &pair.labels, sweep, metrics::MatchStrategy::Greedy)?;
            let map = precisions.iter().sum::<f64>() / precisions.len() as f64;
            Ok(ImageReport {
                image_id: pair.image_id.clone(),
                num_pred: pred.num_instances(),
                num_gt: pair.labels.num_instances(),
                precisions,
                map,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = per_image.iter().map(|r| r.map).collect();
    Ok(EvalResult {
        mean_loss: loss_sum / set.len() as f64,
        map: metrics::map_dataset(&scores)?,
        per_image,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Output-resolution sigmoid map, row-major.
    pub probabilities: Vec<f32>,
    pub labels: InstanceLabelMap,
}

impl Prediction {
    /// 8-bit probability image, `round(255·p)`.
    pub fn probability_image(&self) -> Image {
        let data = self.probabilities.iter().map(|p| (p * 255.0).round() as u8).collect();
        Image::new(self.labels.height(), self.labels.width(), 1, data).expect("dims match")
    }

    /// Nearest-neighbour upscale of both maps to `height × width`.
    pub fn upscaled(&self, height: usize, width: usize) -> Result<Prediction> {
        let (h, w) = (self.labels.height(), self.labels.width());
        Ok(Prediction {
            probabilities: resize_nearest(&self.probabilities, h, w, 1, height, width),
            labels: InstanceLabelMap::compact(height, width, &resize_nearest(self.labels.labels(), h, w, 1, height, width))?,
        })
    }
}

/// Resizes `image` to the network input and labels the output.
pub fn predict(net: &mut Network, image: &Image) -> Result<Prediction> {
    if image.channels() != 3 {
        return Err(Error::shape("prediction needs an RGB image"));
    }
    let [ih, iw, _] = net.spec().input_shape;
    let [oh, ow, _] = net.spec().output_shape;
    let input = Tensor::new(vec![1, ih, iw, 3], image.resize_bilinear_unit(ih, iw))?;
    let probabilities = net.infer(input)?.into_data();
    let labels = connected_components(&probabilities, oh, ow, BINARIZE_THRESHOLD, Connectivity::Eight)?;
    Ok(Prediction { probabilities, labels })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    checkpoint.save(path)
}

/// Loads a checkpoint and rebuilds its network. With `expected` set, a
/// checkpoint of another architecture is rejected.
pub fn load_network(path: &Path, expected: Option<ModelKind>) -> Result<(Network, ModelMeta)> {
    let ck = Checkpoint::load(path)?;
    let meta: ModelMeta = serde_json::from_str(&ck.metadata)
        .map_err(|e| Error::ArchitectureMismatch(format!("{}: unreadable model metadata: {e}", path.display())))?;
    if let Some(kind) = expected {
        if kind != meta.model {
            return Err(Error::ArchitectureMismatch(format!(
                "{} holds a {} model, not {kind}",
                path.display(),
                meta.model
            )));
        }
    }
    let mut net = Network::new(meta.build_spec()?, 0)?;
    net.load_checkpoint(&ck)?;
    Ok((net, meta))
}
