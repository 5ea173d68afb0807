use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nucseg_core::arch::TraceReport;
use nucseg_core::augment::{self, AugmentedPair};
use nucseg_core::dataset::{self, NetworkPair, Sample};
use nucseg_core::metrics::{size_label, ImageReport, SummaryReport};
use nucseg_core::train::{self, EpochRecord, Monitor};
use nucseg_core::{Error, Image, ModelKind};

use crate::config::RunConfig;
use crate::{AugmentArgs, Cli, Command, EvalArgs, ModelArgs, PredictArgs, SynthArgs, TraceArgs, TrainArgs};

/// Raised for bad command-line input that clap cannot catch.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// 2 for usage and configuration errors, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() || matches!(cause.downcast_ref::<Error>(), Some(Error::Config(_))) {
            return 2;
        }
    }
    1
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref()).map_err(|e| Usage(format!("{e:#}")))?;
    config.resolve_seed(cli.seed);
    let quiet = cli.quiet;
    match cli.command {
        Command::Synth(a) => synth(a, config),
        Command::Augment(a) => augment_cmd(a, config),
        Command::Train(a) => train_cmd(a, config, quiet),
        Command::Eval(a) => eval(a, config),
        Command::Trace(a) => trace(a, config),
        Command::Predict(a) => predict(a),
    }
}

/// Creates `dir`, refusing to touch a non-empty one unless `force`, in
/// which case its contents are removed first.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if nonempty {
            if !force {
                bail!("{} exists and is not empty; pass --force to replace it", dir.display());
            }
            fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn apply_model_args(config: &mut RunConfig, m: &ModelArgs) {
    if let Some(kind) = m.model {
        config.train.model = kind.into();
    }
    if let Some(s) = m.scale {
        config.train.scale = s;
    }
    if m.growth_rate.is_some() {
        config.train.growth_rate = m.growth_rate;
    }
}

fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    let loaded = dataset::load_dsb(dir).with_context(|| format!("loading {}", dir.display()))?;
    for (id, e) in &loaded.errors {
        log::warn!("skipped {id}: {e}");
    }
    Ok(loaded.samples)
}

fn synth(a: SynthArgs, mut config: RunConfig) -> Result<()> {
    if let Some(n) = a.count {
        config.synth.count = n as usize;
    }
    if let Some((h, w)) = a.dims {
        config.synth.height = h;
        config.synth.width = w;
    }
    config.synth.validate()?;
    prepare_out(&a.out, a.force)?;
    let samples = dataset::synth_generate(&config.synth)?;
    dataset::write_dsb(&samples, &a.out)?;
    config.write(&a.out)?;
    log::info!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn augment_cmd(a: AugmentArgs, mut config: RunConfig) -> Result<()> {
    if let Some(k) = a.factor {
        config.augment.replication_factor = k as usize;
    }
    config.augment.validate()?;
    let samples = load_samples(&a.input)?;
    prepare_out(&a.out, a.force)?;
    let pairs = augment::augment_dataset(&samples, &config.augment, config.augment_seed)?;
    let k = config.augment.replication_factor;
    for (i, pair) in pairs.iter().enumerate() {
        write_augmented(&samples[i / k], pair, &a.input, &a.out)?;
    }
    config.write(&a.out)?;
    log::info!("wrote {} augmented samples to {}", pairs.len(), a.out.display());
    Ok(())
}

fn write_augmented(src: &Sample, pair: &AugmentedPair, in_root: &Path, out_root: &Path) -> Result<()> {
    let id = augment::augmented_id(&src.image_id, pair.provenance.copy);
    let dir = out_root.join(&id);
    if pair.provenance.ops.is_empty() {
        // Untouched copies keep the source bytes.
        let src_dir = in_root.join(&src.image_id);
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("masks"))?;
        let image = source_image_path(&src_dir, &src.image_id)?;
        fs::copy(&image, dir.join("images").join(format!("{id}.png")))?;
        let masks_dir = src_dir.join("masks");
        if masks_dir.is_dir() {
            let mut masks: Vec<PathBuf> = fs::read_dir(&masks_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            masks.sort();
            for m in masks {
                fs::copy(&m, dir.join("masks").join(m.file_name().expect("file name")))?;
            }
        }
    } else {
        dataset::write_sample(&pair.to_sample(&id)?, out_root)?;
    }
    let prov = dir.join("provenance.json");
    fs::write(&prov, serde_json::to_string_pretty(&pair.provenance)? + "\n")
        .with_context(|| format!("writing {}", prov.display()))
}

fn source_image_path(dir: &Path, id: &str) -> Result<PathBuf> {
    let named = dir.join("images").join(format!("{id}.png"));
    if named.is_file() {
        return Ok(named);
    }
    let mut pngs: Vec<PathBuf> = fs::read_dir(dir.join("images"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    match pngs.len() {
        1 => Ok(pngs.remove(0)),
        _ => Err(anyhow!("{}: no unique source image", dir.display())),
    }
}

struct Progress {
    quiet: bool,
}

impl Monitor for Progress {
    fn on_epoch(&mut self, r: &EpochRecord) {
        if !self.quiet {
            eprintln!(
                "epoch {:>3}  train_loss {:.5}  val_loss {:.5}  val_mAP {:.4}  {:.1}s",
                r.epoch, r.train_loss, r.val_loss, r.val_map, r.seconds
            );
        }
    }
}

fn to_pairs(samples: &[Sample], input: [usize; 3], output: [usize; 3]) -> Result<Vec<NetworkPair>> {
    samples
        .iter()
        .map(|s| dataset::resize(s, (input[0], input[1]), (output[0], output[1])).map_err(Into::into))
        .collect()
}

fn train_cmd(a: TrainArgs, mut config: RunConfig, quiet: bool) -> Result<()> {
    apply_model_args(&mut config, &a.model);
    let t = &mut config.train;
    if let Some(v) = a.epochs {
        t.max_epochs = v;
    }
    if a.batch_size.is_some() {
        t.batch_size = a.batch_size;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.patience {
        t.patience = v;
    }
    if a.freeze_batchnorm {
        t.freeze_batchnorm = true;
    }
    if let Some(v) = a.eval_fraction {
        config.split.eval_fraction = v;
    }
    config.train.validate()?;
    let spec = config.train.build_spec()?;

    let samples = load_samples(&a.data)?;
    let (train_idx, eval_idx) = dataset::split_indices(samples.len(), &config.split)?;
    prepare_out(&a.out, a.force)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| samples[i].image_id.as_str()).collect::<Vec<_>>();
    dataset::write_manifest(&a.out.join("train.txt"), &ids(&train_idx))?;
    dataset::write_manifest(&a.out.join("eval.txt"), &ids(&eval_idx))?;
    config.write(&a.out)?;

    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let train_set = to_pairs(&pick(&train_idx), spec.input_shape, spec.output_shape)?;
    let eval_set = to_pairs(&pick(&eval_idx), spec.input_shape, spec.output_shape)?;
    log::info!(
        "{} at scale {}: {} train / {} eval samples, batch {}",
        spec.name.display_name(),
        spec.scale,
        train_set.len(),
        eval_set.len(),
        config.train.batch_size()
    );
    let out = train::train(spec, &train_set, &eval_set, &config.train, &mut Progress { quiet })?;
    train::save_checkpoint(&out.checkpoint, &a.out.join("model.ckpt"))?;
    out.history.write_csv(&a.out.join("history.csv"))?;
    out.history.write_json(&a.out.join("history.json"))?;
    log::info!(
        "stopped ({}) after {} epochs; best epoch {}",
        out.history.stop_reason,
        out.history.epochs.len(),
        out.history.best_epoch
    );
    Ok(())
}

fn eval(a: EvalArgs, config: RunConfig) -> Result<()> {
    if !a.checkpoint.is_file() {
        bail!("checkpoint {} not found", a.checkpoint.display());
    }
    let sweep = nucseg_core::ThresholdSweep::new(config.thresholds.thresholds().to_vec())?;
    let (mut net, meta) = train::load_network(&a.checkpoint, a.model.map(ModelKind::from))?;
    let mut samples = load_samples(&a.data)?;
    if let Some(manifest) = &a.manifest {
        let wanted = dataset::read_manifest(manifest)?;
        let by_id: BTreeMap<&str, &Sample> = samples.iter().map(|s| (s.image_id.as_str(), s)).collect();
        let missing: Vec<&str> = wanted.iter().map(String::as_str).filter(|id| !by_id.contains_key(id)).collect();
        if !missing.is_empty() {
            bail!("{} ids from {} are not in {}: {}", missing.len(), manifest.display(), a.data.display(), missing.join(", "));
        }
        samples = wanted.iter().map(|id| by_id[id.as_str()].clone()).collect();
    }
    let pairs = to_pairs(&samples, meta.input_shape, meta.output_shape)?;
    let result = train::evaluate(&mut net, &pairs, &sweep)?;

    prepare_out(&a.report, a.force)?;
    ImageReport::write_csv(&result.per_image, &sweep, &a.report.join("per_image.csv"))?;
    let dataset_name = a
        .data
        .file_name()
        .map_or_else(|| "data".to_string(), |n| n.to_string_lossy().into_owned());
    let [ih, iw, ic] = meta.input_shape;
    let [oh, ow, oc] = meta.output_shape;
    let summary = SummaryReport {
        model: meta.model.display_name().to_string(),
        input_size: size_label(ih, iw, ic),
        output_size: size_label(oh, ow, oc),
        map: BTreeMap::from([(dataset_name, result.map)]),
        num_images: pairs.len(),
        mean_loss: Some(result.mean_loss),
    };
    summary.write_json(&a.report.join("summary.json"))?;
    config.write(&a.report)?;
    println!("{}", summary.table_header());
    println!("{}", summary.table_row());
    Ok(())
}

fn trace(a: TraceArgs, mut config: RunConfig) -> Result<()> {
    apply_model_args(&mut config, &a.model);
    let report = TraceReport::new(&config.train.build_spec()?)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

/// Distinct colour per instance label; background black.
fn label_colour(label: u32) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    let h = (label as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.65, 0.95);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|t| ((t + m) * 255.0).round() as u8)
}

fn predict(a: PredictArgs) -> Result<()> {
    let (mut net, _) = train::load_network(&a.checkpoint, None)?;
    let image = Image::load_rgb(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let pred = train::predict(&mut net, &image)?.upscaled(image.height(), image.width())?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let stem = a
        .image
        .file_stem()
        .ok_or_else(|| anyhow!("{} has no file name", a.image.display()))?
        .to_string_lossy()
        .into_owned();
    let prob_path = a.out.join(format!("{stem}_prob.png"));
    pred.probability_image().save_png(&prob_path)?;
    let colours = pred.labels.labels().iter().flat_map(|&l| label_colour(l)).collect();
    let inst_path = a.out.join(format!("{stem}_instances.png"));
    Image::new(image.height(), image.width(), 3, colours)?.save_png(&inst_path)?;
    log::info!(
        "{} instances; wrote {} and {}",
        pred.labels.num_instances(),
        prob_path.display(),
        inst_path.display()
    );
    Ok(())
}
