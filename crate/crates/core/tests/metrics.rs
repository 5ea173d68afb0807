mod common;

use common::metric_oracle as oracle;
use nucseg_core::metrics::{self, connected_components, Connectivity, MatchStrategy};
use nucseg_core::{InstanceLabelMap, ThresholdSweep};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn label_map(h: usize, w: usize, labels: Vec<u32>) -> InstanceLabelMap {
    InstanceLabelMap::new(h, w, labels).unwrap()
}

#[test]
fn map_image_matches_pixel_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let sweep = ThresholdSweep::default();
    for case in 0..100 {
        let (h, w, pred, gt) = oracle::random_pair(&mut rng);
        let expected = oracle::map(&pred, &gt);
        let got = metrics::map_image(&label_map(h, w, pred), &label_map(h, w, gt), &sweep).unwrap();
        assert!((got - expected).abs() <= 1e-12, "case {case}: {got} vs {expected}");
    }
}

#[test]
fn iou_06_pair_scores_two_tenths() {
    // gt covers 5 pixels, pred 3 of them: IoU exactly 0.6.
    let gt = vec![1, 1, 1, 1, 1, 0];
    let pred = vec![1, 1, 1, 0, 0, 0];
    let (p, g) = (label_map(1, 6, pred.clone()), label_map(1, 6, gt.clone()));
    let at = |t| metrics::match_instances(&p, &g, t, MatchStrategy::Greedy).unwrap();
    assert_eq!((at(0.55).tp, at(0.55).fp, at(0.55).fn_), (1, 0, 0));
    assert_eq!((at(0.60).tp, at(0.60).fp, at(0.60).fn_), (0, 1, 1));
    assert_eq!(metrics::map_image(&p, &g, &ThresholdSweep::default()).unwrap(), 0.2);
    assert_eq!(oracle::map(&pred, &gt), 0.2);
}

/// Recursive flood fill over pixels strictly above the threshold.
fn flood_oracle(prob: &[f32], h: usize, w: usize, t: f32, eight: bool) -> Vec<u32> {
    fn fill(y: usize, x: usize, id: u32, ctx: &mut (Vec<u32>, &[f32], usize, usize, f32, bool)) {
        let (ref mut labels, prob, h, w, t, eight) = *ctx;
        let i = y * w + x;
        if labels[i] != 0 || prob[i] <= t {
            return;
        }
        labels[i] = id;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if (dy == 0 && dx == 0) || (!eight && dy != 0 && dx != 0) {
                    continue;
                }
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    fill(ny as usize, nx as usize, id, ctx);
                }
            }
        }
    }
    let mut ctx = (vec![0u32; h * w], prob, h, w, t, eight);
    let mut next = 0;
    for y in 0..h {
        for x in 0..w {
            if ctx.0[y * w + x] == 0 && prob[y * w + x] > t {
                next += 1;
                fill(y, x, next, &mut ctx);
            }
        }
    }
    ctx.0
}

proptest! {
    #[test]
    fn components_match_flood_fill(cells in prop::collection::vec(prop::bool::weighted(0.45), 32 * 32), eight: bool) {
        let prob: Vec<f32> = cells.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect();
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let got = connected_components(&prob, 32, 32, 0.5, conn).unwrap();
        let want = flood_oracle(&prob, 32, 32, 0.5, eight);
        // Both number components in row-major first-encounter order.
        prop_assert_eq!(got.labels(), &want[..]);
    }

    #[test]
    fn greedy_equals_optimal_from_one_half(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, pred, gt) = oracle::random_pair(&mut rng);
        let (p, g) = (label_map(h, w, pred), label_map(h, w, gt));
        for t in ThresholdSweep::default().thresholds() {
            let greedy = metrics::match_instances(&p, &g, *t, MatchStrategy::Greedy).unwrap();
            let optimal = metrics::match_instances(&p, &g, *t, MatchStrategy::Optimal).unwrap();
            prop_assert_eq!(greedy.tp, optimal.tp);
        }
    }

    #[test]
    fn precision_in_unit_interval_and_monotone(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, pred, gt) = oracle::random_pair(&mut rng);
        let curve = metrics::precision_curve(
            &label_map(h, w, pred),
            &label_map(h, w, gt),
            &ThresholdSweep::default(),
            MatchStrategy::Greedy,
        )
        .unwrap();
        prop_assert!(curve.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(curve.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn dataset_map_is_order_independent(mut scores in prop::collection::vec(0.0f64..=1.0, 1..60), seed: u64) {
        let a = metrics::map_dataset(&scores).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut scores[..], &mut rng);
        let b = metrics::map_dataset(&scores).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn optimal_oracle_agrees_with_kuhn_below_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut diverged = 0;
    for _ in 0..200 {
        let (h, w, pred, gt) = oracle::random_pair(&mut rng);
        let (p, g) = (label_map(h, w, pred.clone()), label_map(h, w, gt.clone()));
        for k in 1..10 {
            let t = k as f64 / 20.0;
            let kuhn = metrics::match_instances(&p, &g, t, MatchStrategy::Optimal).unwrap();
            let greedy = metrics::match_instances(&p, &g, t, MatchStrategy::Greedy).unwrap();
            let want = oracle::precision(&pred, &gt, k, 20);
            assert!((metrics::precision_at(&kuhn) - want).abs() < 1e-12);
            assert!(greedy.tp <= kuhn.tp);
            diverged += (greedy.tp < kuhn.tp) as usize;
        }
    }
    println!("greedy below optimal in {diverged} of 1800 sub-0.5 matchings");
}
