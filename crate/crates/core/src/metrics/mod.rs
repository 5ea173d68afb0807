//! Instance-level evaluation: IoU, one-to-one matching at an IoU threshold,
//! the per-threshold precision `TP / (TP + FP + FN)`, and its mean over a
//! threshold sweep per image and per dataset.

mod components;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use components::{connected_components, Connectivity};
pub use report::{size_label, ImageReport, SummaryReport};

/// Integer label image: 0 is background, `1..=num_instances` are instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    num_instances: usize,
}

impl InstanceLabelMap {
    /// Validates that every label in `1..=max` is present.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "{} labels for a {height}×{width} map",
                labels.len()
            )));
        }
        let max = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; max + 1];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        if let Some(missing) = (1..=max).find(|&k| !seen[k]) {
            return Err(Error::shape(format!("label {missing} is absent but {max} is present")));
        }
        Ok(Self {
            height,
            width,
            labels,
            num_instances: max,
        })
    }

    /// Renumbers arbitrary labels to `1..=k` in first-encounter order
    /// (row-major), dropping gaps.
    pub fn compact(height: usize, width: usize, raw: &[u32]) -> Result<Self> {
        if raw.len() != height * width {
            return Err(Error::shape(format!("{} labels for a {height}×{width} map", raw.len())));
        }
        let mut mapping = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    let next = mapping.len() as u32 + 1;
                    *mapping.entry(l).or_insert(next)
                }
            })
            .collect();
        Ok(Self {
            height,
            width,
            labels,
            num_instances: mapping.len(),
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
            num_instances: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_instances(&self) -> usize {
        self.num_instances
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel counts per label, index 0 being background.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.num_instances + 1];
        self.labels.iter().for_each(|&l| areas[l as usize] += 1);
        areas
    }

    /// Binary mask (0/1) of one instance.
    pub fn instance_mask(&self, label: u32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }
}

/// IoU thresholds swept when averaging precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSweep {
    thresholds: Vec<f64>,
}

impl Default for ThresholdSweep {
    /// 0.50, 0.55, …, 0.95.
    fn default() -> Self {
        Self {
            thresholds: (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect(),
        }
    }
}

impl ThresholdSweep {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::config("threshold sweep is empty"));
        }
        if thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::config("thresholds must lie in (0, 1)"));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("thresholds must be strictly increasing"));
        }
        Ok(Self { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    /// Descending IoU, each instance used at most once.
    #[default]
    Greedy,
    /// Maximum-cardinality matching among pairs above the threshold.
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// (pred label, gt label, IoU)
    pub pairs: Vec<(u32, u32, f64)>,
}

/// `|a ∩ b| / |a ∪ b|` over two same-size boolean masks.
pub fn iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("iou: masks of {} and {} pixels", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Err(Error::UndefinedInput("IoU of two empty sets".into()));
    }
    Ok(inter as f64 / union as f64)
}

/// Pairwise IoU table between all predicted and ground-truth instances,
/// built from one pass over the pixels. `table[p][g]` is for labels p+1, g+1.
pub fn iou_table(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<Vec<Vec<f64>>> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::shape(format!(
            "prediction is {}×{}, ground truth {}×{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let (np, ng) = (pred.num_instances, gt.num_instances);
    let mut inter = vec![0usize; np * ng];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if p > 0 && g > 0 {
            inter[(p as usize - 1) * ng + g as usize - 1] += 1;
        }
    }
    let (ap, ag) = (pred.areas(), gt.areas());
    Ok((0..np)
        .map(|p| {
            (0..ng)
                .map(|g| {
                    let i = inter[p * ng + g];
                    i as f64 / (ap[p + 1] + ag[g + 1] - i) as f64
                })
                .collect()
        })
        .collect())
}

/// Matches predictions to ground truth; a pair counts only when its IoU is
/// strictly greater than `threshold`.
pub fn match_instances(
    pred: &InstanceLabelMap,
    gt: &InstanceLabelMap,
    threshold: f64,
    strategy: MatchStrategy,
) -> Result<MatchResult> {
    let table = iou_table(pred, gt)?;
    Ok(match_from_table(&table, pred.num_instances, gt.num_instances, threshold, strategy))
}

fn match_from_table(table: &[Vec<f64>], np: usize, ng: usize, threshold: f64, strategy: MatchStrategy) -> MatchResult {
    let mut candidates: Vec<(usize, usize, f64)> = table
        .iter()
        .enumerate()
        .flat_map(|(p, row)| row.iter().enumerate().map(move |(g, &v)| (p, g, v)))
        .filter(|&(_, _, v)| v > threshold)
        .collect();
    let pairs: Vec<(usize, usize, f64)> = match strategy {
        MatchStrategy::Greedy => {
            candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            let mut used_p = vec![false; np];
            let mut used_g = vec![false; ng];
            candidates
                .into_iter()
                .filter(|&(p, g, _)| {
                    let free = !used_p[p] && !used_g[g];
                    if free {
                        used_p[p] = true;
                        used_g[g] = true;
                    }
                    free
                })
                .collect()
        }
        MatchStrategy::Optimal => max_bipartite_matching(&candidates, np, ng)
            .into_iter()
            .map(|(p, g)| (p, g, table[p][g]))
            .collect(),
    };
    let tp = pairs.len();
    MatchResult {
        tp,
        fp: np - tp,
        fn_: ng - tp,
        pairs: pairs
            .into_iter()
            .map(|(p, g, v)| (p as u32 + 1, g as u32 + 1, v))
            .collect(),
    }
}

/// Kuhn's augmenting-path algorithm.
fn max_bipartite_matching(edges: &[(usize, usize, f64)], np: usize, ng: usize) -> Vec<(usize, usize)> {
    let mut adj = vec![Vec::new(); np];
    for &(p, g, _) in edges {
        adj[p].push(g);
    }
    let mut owner: Vec<Option<usize>> = vec![None; ng];

    fn augment(p: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &g in &adj[p] {
            if seen[g] {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none_or(|q| augment(q, adj, seen, owner)) {
                owner[g] = Some(p);
                return true;
            }
        }
        false
    }

    for p in 0..np {
        let mut seen = vec![false; ng];
        augment(p, &adj, &mut seen, &mut owner);
    }
    let mut pairs: Vec<(usize, usize)> = owner
        .iter()
        .enumerate()
        .filter_map(|(g, p)| p.map(|p| (p, g)))
        .collect();
    pairs.sort();
    pairs
}

/// `TP / (TP + FP + FN)`; an empty prediction on an empty image scores 1.
pub fn precision_at(m: &MatchResult) -> f64 {
    let denom = m.tp + m.fp + m.fn_;
    if denom == 0 {
        1.0
    } else {
        m.tp as f64 / denom as f64
    }
}

/// Precision at every threshold of the sweep.
pub fn precision_curve(
    pred: &InstanceLabelMap,
    gt: &InstanceLabelMap,
    sweep: &ThresholdSweep,
    strategy: MatchStrategy,
) -> Result<Vec<f64>> {
    let table = iou_table(pred, gt)?;
    Ok(sweep
        .thresholds
        .iter()
        .map(|&t| precision_at(&match_from_table(&table, pred.num_instances, gt.num_instances, t, strategy)))
        .collect())
}

/// Mean precision over the threshold sweep for one image.
pub fn map_image(pred: &InstanceLabelMap, gt: &InstanceLabelMap, sweep: &ThresholdSweep) -> Result<f64> {
    let curve = precision_curve(pred, gt, sweep, MatchStrategy::Greedy)?;
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Mean of per-image scores, summed pairwise so the result does not depend
/// on how the list was assembled in parallel.
pub fn map_dataset(per_image: &[f64]) -> Result<f64> {
    if per_image.is_empty() {
        return Err(Error::config("cannot average an empty list of images"));
    }
    Ok(pairwise_sum(per_image) / per_image.len() as f64)
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}
