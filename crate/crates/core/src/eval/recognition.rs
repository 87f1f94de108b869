use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top-1/top-5 accuracy, per instance and class-balanced.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecReport {
    pub top1: f64,
    pub top5: f64,
    pub top1_per_class: f64,
    pub top5_per_class: f64,
    pub n_instances: usize,
    /// Classes present among the labels.
    pub n_classes: usize,
}

/// Position of `label` in the descending ranking of `scores`; ties rank the
/// lower index first.
fn rank_of(scores: ndarray::ArrayView1<f64>, label: usize) -> usize {
    let s = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count()
}

/// Per-instance and per-class top-`k` accuracy. Per-class accuracy is the
/// unweighted mean over classes that occur in `labels`.
pub fn topk_accuracy(scores: &Array2<f64>, labels: &[usize], k: usize) -> Result<(f64, f64)> {
    if scores.nrows() != labels.len() {
        return Err(Error::contract(format!(
            "{} score rows for {} labels",
            scores.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= scores.ncols()) {
        return Err(Error::contract(format!("label {bad} outside {} classes", scores.ncols())));
    }
    if labels.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut hits = 0;
    for (row, &label) in scores.rows().into_iter().zip(labels) {
        let hit = rank_of(row, label) < k;
        hits += hit as usize;
        let e = per_class.entry(label).or_default();
        e.0 += hit as usize;
        e.1 += 1;
    }
    let class_mean = per_class.values().map(|&(h, n)| h as f64 / n as f64).sum::<f64>() / per_class.len() as f64;
    Ok((hits as f64 / labels.len() as f64, class_mean))
}

pub fn topk_recognition(scores: &Array2<f64>, labels: &[usize]) -> Result<RecReport> {
    let (top1, top1_per_class) = topk_accuracy(scores, labels, 1)?;
    let (top5, top5_per_class) = topk_accuracy(scores, labels, 5)?;
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    Ok(RecReport {
        top1,
        top5,
        top1_per_class,
        top5_per_class,
        n_instances: labels.len(),
        n_classes: classes.len(),
    })
}
