use std::collections::BTreeSet;
use std::fs;

use nucseg_core::dataset::{self, merge_masks, synth_generate, Sample, SplitSpec, SynthConfig};
use nucseg_core::{Error, Image};
use proptest::prelude::*;

fn synth(n: usize, seed: u64) -> Vec<Sample> {
    synth_generate(&SynthConfig {
        count: n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn write_then_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let src = synth(4, 8);
    dataset::write_dsb(&src, dir.path()).unwrap();
    let loaded = dataset::load_dsb(dir.path()).unwrap();
    assert!(loaded.errors.is_empty());
    assert_eq!(loaded.samples, src);
    let id = &src[0].image_id;
    assert!(dir.path().join(id).join("images").join(format!("{id}.png")).is_file());
    assert!(dir.path().join(id).join("masks/mask_0000.png").is_file());
}

#[test]
fn bad_samples_are_collected_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    dataset::write_dsb(&synth(3, 1), dir.path()).unwrap();
    let broken = dir.path().join("broken/images");
    fs::create_dir_all(&broken).unwrap();
    fs::write(broken.join("broken.png"), b"not a png").unwrap();
    fs::create_dir_all(dir.path().join("noimages")).unwrap();

    let loaded = dataset::load_dsb(dir.path()).unwrap();
    assert_eq!(loaded.samples.len(), 3);
    let failed: Vec<&str> = loaded.errors.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(failed, ["broken", "noimages"]);

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(dataset::load_dsb(empty.path()), Err(Error::EmptyDataset { failed: 0, .. })));
}

#[test]
fn sample_without_masks_loads_as_background() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("blank/images");
    fs::create_dir_all(&images).unwrap();
    Image::filled(8, 8, 3, 10).save_png(&images.join("other_name.png")).unwrap();
    let s = dataset::load_sample(&dir.path().join("blank"), "blank").unwrap();
    assert_eq!(s.instance_labels.num_instances(), 0);
    assert!(s.merged_mask.iter().all(|&m| !m));
}

#[test]
fn overlap_is_union_with_lowest_label() {
    let a = vec![true, true, false, false];
    let b = vec![false, true, true, false];
    let (merged, labels) = merge_masks(&[a, b], 2, 2).unwrap();
    assert_eq!(merged, [true, true, true, false]);
    assert_eq!(labels.labels(), [1, 1, 2, 0]);
    assert!(matches!(merge_masks(&[vec![true; 3]], 2, 2), Err(Error::Shape(_))));
}

#[test]
fn resize_keeps_shapes_and_binary_targets() {
    let s = &synth(1, 3)[0];
    let p = dataset::resize(s, (32, 32), (16, 16)).unwrap();
    assert_eq!(p.image.len(), 32 * 32 * 3);
    assert_eq!(p.mask.len(), 16 * 16);
    assert!(p.image.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(p.mask.iter().all(|&v| v == 0.0 || v == 1.0));
    for (m, l) in p.mask.iter().zip(p.labels.labels()) {
        assert_eq!(*m == 1.0, *l > 0);
    }
    assert!(p.labels.num_instances() <= s.instance_labels.num_instances());
}

#[test]
fn manifests_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.txt");
    dataset::write_manifest(&path, &["a", "b_aug1", "c"]).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "a\nb_aug1\nc\n");
    assert_eq!(dataset::read_manifest(&path).unwrap(), ["a", "b_aug1", "c"]);
}

#[test]
fn synthesis_is_seeded_and_order_free() {
    assert_eq!(synth(6, 4), synth(6, 4));
    assert_ne!(synth(6, 4), synth(6, 5));
    // Sample i does not depend on how many others were generated.
    assert_eq!(synth(3, 4)[..], synth(6, 4)[..3]);
    let full = dataset::split_indices(640, &SplitSpec::default()).unwrap();
    assert_eq!((full.0.len(), full.1.len()), (512, 128));
}

proptest! {
    #[test]
    fn split_partitions(n in 2usize..100, seed: u64, frac in 0.05f64..0.95) {
        let spec = SplitSpec { eval_fraction: frac, seed };
        let (train, eval) = dataset::split_indices(n, &spec).unwrap();
        prop_assert_eq!(train.len() + eval.len(), n);
        prop_assert!(!train.is_empty() && !eval.is_empty());
        let all: BTreeSet<usize> = train.iter().chain(&eval).copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(eval.len(), ((frac * n as f64).round() as usize).clamp(1, n - 1));
        prop_assert_eq!(dataset::split_indices(n, &spec).unwrap(), (train, eval));
    }

    #[test]
    fn union_cardinality(masks in prop::collection::vec(prop::collection::vec(any::<bool>(), 36), 5)) {
        let sum: usize = masks.iter().map(|m| m.iter().filter(|&&v| v).count()).sum();
        let union: usize = (0..36).filter(|&i| masks.iter().any(|m| m[i])).count();
        prop_assert!(union <= sum);
        let disjoint = (0..36).all(|i| masks.iter().filter(|m| m[i]).count() <= 1);
        prop_assert_eq!(union == sum, disjoint);
        match merge_masks(&masks, 6, 6) {
            Ok((merged, labels)) => {
                prop_assert_eq!(merged.iter().filter(|&&v| v).count(), union);
                for i in 0..36 {
                    let lowest = masks.iter().position(|m| m[i]).map_or(0, |k| k as u32 + 1);
                    prop_assert_eq!(labels.labels()[i], lowest);
                }
            }
            // Rejected only when some mask contributes no pixel of its own.
            Err(_) => prop_assert!((0..5).any(|k| (0..36).all(|i| !masks[k][i] || masks[..k].iter().any(|m| m[i])))),
        }
    }
}
