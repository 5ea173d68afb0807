//! Brute-force instance metric: pixel sets, exact rational thresholds and
//! exhaustive maximum matching.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Pixel index sets for labels `1..=max`.
pub fn pixel_sets(labels: &[u32]) -> Vec<BTreeSet<usize>> {
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut sets = vec![BTreeSet::new(); max];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            sets[l as usize - 1].insert(i);
        }
    }
    sets
}

/// `(|a ∩ b|, |a ∪ b|)`.
pub fn overlap(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> (usize, usize) {
    (a.intersection(b).count(), a.union(b).count())
}

/// Largest number of disjoint pairs in `edges`, by trying every choice.
pub fn exhaustive_matching(edges: &[Vec<usize>], used: &mut Vec<bool>, p: usize) -> usize {
    if p == edges.len() {
        return 0;
    }
    let mut best = exhaustive_matching(edges, used, p + 1);
    for &g in &edges[p] {
        if !used[g] {
            used[g] = true;
            best = best.max(1 + exhaustive_matching(edges, used, p + 1));
            used[g] = false;
        }
    }
    best
}

/// Precision `TP/(TP+FP+FN)` at IoU threshold `num/den` (strict).
pub fn precision(pred: &[u32], gt: &[u32], num: usize, den: usize) -> f64 {
    let (ps, gs) = (pixel_sets(pred), pixel_sets(gt));
    let edges: Vec<Vec<usize>> = ps
        .iter()
        .map(|p| {
            gs.iter()
                .enumerate()
                .filter(|(_, g)| {
                    let (i, u) = overlap(p, g);
                    den * i > num * u
                })
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    let tp = exhaustive_matching(&edges, &mut vec![false; gs.len()], 0);
    let denom = ps.len() + gs.len() - tp;
    if denom == 0 {
        1.0
    } else {
        tp as f64 / denom as f64
    }
}

/// Mean precision over thresholds 0.50, 0.55, …, 0.95.
pub fn map(pred: &[u32], gt: &[u32]) -> f64 {
    (0..10).map(|k| precision(pred, gt, 50 + 5 * k, 100)).sum::<f64>() / 10.0
}

/// Paints up to `max_instances` random rectangles; later ones overwrite.
/// Labels are renumbered densely.
pub fn paint(h: usize, w: usize, rects: &[(usize, usize, usize, usize)]) -> Vec<u32> {
    let mut raw = vec![0u32; h * w];
    for (k, &(y0, x0, y1, x1)) in rects.iter().enumerate() {
        for y in y0..y1 {
            for x in x0..x1 {
                raw[y * w + x] = k as u32 + 1;
            }
        }
    }
    let mut remap = vec![0u32; rects.len() + 1];
    let mut next = 0;
    for v in raw.iter_mut() {
        if *v > 0 {
            if remap[*v as usize] == 0 {
                next += 1;
                remap[*v as usize] = next;
            }
            *v = remap[*v as usize];
        }
    }
    raw
}

/// A ground-truth map and a prediction made by jittering, dropping and
/// adding rectangles, so IoUs spread over the whole sweep.
pub fn random_pair(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<u32>, Vec<u32>) {
    let h = rng.random_range(4..=64);
    let w = rng.random_range(4..=64);
    let rect = |rng: &mut ChaCha8Rng| {
        let y0 = rng.random_range(0..h);
        let x0 = rng.random_range(0..w);
        (y0, x0, rng.random_range(y0 + 1..=h.min(y0 + 16)), rng.random_range(x0 + 1..=w.min(x0 + 16)))
    };
    let n = rng.random_range(0..=10);
    let gt: Vec<_> = (0..n).map(|_| rect(rng)).collect();
    let mut pred = Vec::new();
    for &(y0, x0, y1, x1) in &gt {
        if rng.random_bool(0.15) {
            continue;
        }
        let j = |v: usize, lim: usize, rng: &mut ChaCha8Rng| (v as i64 + rng.random_range(-2i64..=2)).clamp(0, lim as i64) as usize;
        let (a, b) = (j(y0, h - 1, rng), j(x0, w - 1, rng));
        let (c, d) = (j(y1, h, rng).max(a + 1), j(x1, w, rng).max(b + 1));
        pred.push((a, b, c, d));
    }
    while pred.len() < 10 && rng.random_bool(0.2) {
        pred.push(rect(rng));
    }
    (h, w, paint(h, w, &pred), paint(h, w, &gt))
}
