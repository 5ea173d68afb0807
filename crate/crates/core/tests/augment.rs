use nucseg_core::augment::{self, ops, AugOp, AugmentationConfig};
use nucseg_core::dataset::{synth_generate, Sample, SynthConfig};
use nucseg_core::Image;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    synth_generate(&SynthConfig {
        count: n,
        height: 40,
        width: 48,
        blob_count: (2, 4),
        blob_radius: (3.0, 6.0),
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn op_name(op: &AugOp) -> &'static str {
    match op {
        AugOp::MotionBlur { .. } => "motion_blur",
        AugOp::MedianBlur { .. } => "median_blur",
        AugOp::Sharpen { .. } => "sharpen",
        AugOp::Contrast { .. } => "contrast",
        AugOp::Brightness { .. } => "brightness",
        AugOp::Emboss { .. } => "emboss",
        AugOp::ChannelRearrange { .. } => "channel_rearrange",
        AugOp::Gray => "gray",
        AugOp::Zoom { .. } => "zoom",
        AugOp::Rotate { .. } => "rotate",
    }
}

#[test]
fn firing_rates_match_configured_probabilities() {
    let cfg = AugmentationConfig::default();
    let expected = [
        ("motion_blur", cfg.p_motion_blur),
        ("median_blur", cfg.p_median_blur),
        ("channel_rearrange", cfg.p_channel_rearrange),
        ("emboss", cfg.p_emboss),
        ("sharpen", cfg.p_sharpen),
        ("contrast", cfg.p_contrast),
        ("brightness", cfg.p_brightness),
        ("zoom", cfg.p_zoom),
        ("rotate", cfg.p_rotate),
    ];
    assert_eq!((cfg.p_motion_blur, cfg.p_median_blur, cfg.p_channel_rearrange), (0.1, 0.3, 0.3));
    let draws = 10_000;
    let mut counts = std::collections::HashMap::new();
    for i in 0..draws {
        let seed = augment::copy_seed(11, &format!("img{}", i / 5), i % 5);
        for op in augment::sample_plan(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)) {
            *counts.entry(op_name(&op)).or_insert(0usize) += 1;
        }
    }
    assert_eq!(counts["gray"], draws);
    for (name, p) in expected {
        let rate = counts.get(name).copied().unwrap_or(0) as f64 / draws as f64;
        assert!((rate - p).abs() <= 0.02, "{name}: fired {rate}, configured {p}");
    }
}

#[test]
fn median_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for window in [3, 5] {
        let data: Vec<u8> = (0..16 * 16 * 3).map(|_| rng.random()).collect();
        let img = Image::new(16, 16, 3, data).unwrap();
        let out = ops::median_blur(&img, window).unwrap();
        let r = window as isize / 2;
        for y in 0..16isize {
            for x in 0..16isize {
                for c in 0..3 {
                    let mut v: Vec<u8> = (-r..=r)
                        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
                        .map(|(dy, dx)| img.get((y + dy).clamp(0, 15) as usize, (x + dx).clamp(0, 15) as usize, c))
                        .collect();
                    v.sort_unstable();
                    assert_eq!(out.get(y as usize, x as usize, c), v[v.len() / 2], "({y},{x},{c}) window {window}");
                }
            }
        }
    }
}

#[test]
fn factor_five_and_deterministic() {
    let src = samples(7, 1);
    let cfg = AugmentationConfig::default();
    let a = augment::augment_dataset(&src, &cfg, 99).unwrap();
    let b = augment::augment_dataset(&src, &cfg, 99).unwrap();
    assert_eq!(a.len(), 35);
    assert_eq!(a, b);
    for (i, pair) in a.iter().enumerate() {
        assert_eq!(pair.provenance.source_id, src[i / 5].image_id);
        assert_eq!(pair.provenance.copy, i % 5);
        assert_eq!((pair.image.height(), pair.image.width()), (40, 48));
    }
    assert_eq!(augment::augmented_id("abc", 3), "abc_aug3");
    let c = augment::augment_dataset(&src, &cfg, 100).unwrap();
    assert_ne!(a, c);
}

#[test]
fn identity_config_leaves_images_alone() {
    let src = samples(3, 2);
    let cfg = AugmentationConfig {
        replication_factor: 1,
        ..AugmentationConfig::identity()
    };
    for (s, pair) in src.iter().zip(augment::augment_dataset(&src, &cfg, 5).unwrap()) {
        assert!(pair.provenance.ops.is_empty());
        assert_eq!(pair.image, s.image);
        assert_eq!(pair.labels, s.instance_labels);
    }
}

#[test]
fn rotate_180_twice_is_identity() {
    let src = &samples(1, 3)[0];
    let twice = [AugOp::Rotate { degrees: 180 }, AugOp::Rotate { degrees: 180 }];
    let (img, lab) = augment::apply_ops(&src.image, &src.instance_labels, &twice).unwrap();
    assert_eq!(img, src.image);
    assert_eq!(lab, src.instance_labels);
}

#[test]
fn heavy_zoom_can_drop_every_instance() {
    let src = &samples(1, 4)[0];
    let (img, lab) = augment::apply_ops(&src.image, &src.instance_labels, &[AugOp::Zoom { factor: 40.0 }]).unwrap();
    assert_eq!((img.height(), img.width()), (40, 48));
    let pair_sample = Sample::new("z", img, (1..=lab.num_instances() as u32).map(|l| lab.instance_mask(l)).collect());
    assert!(pair_sample.is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn masks_move_only_with_geometry(seed: u64, copy in 0usize..5) {
        let src = &samples(1, seed % 50)[0];
        let cfg = AugmentationConfig {
            p_zoom: 0.5,
            p_rotate: 0.5,
            ..AugmentationConfig::default()
        };
        let pair = augment::augment_sample(src, &cfg, seed, copy).unwrap();
        prop_assert_eq!((pair.mask.height(), pair.mask.width()), (pair.image.height(), pair.image.width()));
        prop_assert!(pair.mask.data().iter().all(|&v| v == 0 || v == 255));
        let geometric = pair.provenance.ops.iter().any(AugOp::is_geometric);
        let source_mask: Vec<u8> = src.merged_mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        if !geometric {
            prop_assert_eq!(pair.mask.data(), &source_mask[..]);
            prop_assert_eq!(&pair.labels, &src.instance_labels);
        }
        let gray = pair.image.data().chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]);
        prop_assert!(gray);
    }
}
