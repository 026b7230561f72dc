//! Threshold-free ranking metrics with grouped ties.

use crate::error::{HiadError, Result};

fn check(scores: &[f32], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(HiadError::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(HiadError::Precondition(format!("score {i} is not finite")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Groups of tied scores in descending score order, as `(positives, negatives)`.
fn tie_groups(scores: &[f32], labels: &[bool]) -> Vec<(u64, u64)> {
    let mut order: Vec<(f32, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let v = order[i].0;
        let (mut p, mut n) = (0u64, 0u64);
        while i < order.len() && order[i].0 == v {
            if order[i].1 {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        groups.push((p, n));
    }
    groups
}

/// AUROC, AP and F1max from one sort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingMetrics {
    pub auroc: f64,
    pub average_precision: f64,
    pub f1_max: f64,
}

pub fn ranking_metrics(scores: &[f32], labels: &[bool]) -> Result<RankingMetrics> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(HiadError::UndefinedMetric(format!(
            "ranking metrics need both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let groups = tie_groups(scores, labels);
    Ok(RankingMetrics {
        auroc: auroc_groups(&groups, pos, neg),
        average_precision: ap_groups(&groups, pos),
        f1_max: f1_groups(&groups, pos),
    })
}

fn auroc_groups(groups: &[(u64, u64)], pos: usize, neg: usize) -> f64 {
    // Walk from the lowest scores up, counting negatives already passed.
    let mut below = 0u64;
    let mut twice_wins = 0u128;
    for &(p, n) in groups.iter().rev() {
        twice_wins += 2 * p as u128 * below as u128 + p as u128 * n as u128;
        below += n;
    }
    twice_wins as f64 / (2.0 * pos as f64 * neg as f64)
}

fn ap_groups(groups: &[(u64, u64)], pos: usize) -> f64 {
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut sum = 0.0;
    for &(p, n) in groups {
        tp += p;
        fp += n;
        if p > 0 {
            sum += p as f64 * tp as f64 / (tp + fp) as f64;
        }
    }
    sum / pos as f64
}

fn f1_groups(groups: &[(u64, u64)], pos: usize) -> f64 {
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best = 0.0f64;
    for &(p, n) in groups {
        tp += p;
        fp += n;
        if tp > 0 {
            best = best.max(2.0 * tp as f64 / (tp + fp + pos as u64) as f64);
        }
    }
    best
}

/// Area under the ROC curve as the Mann-Whitney statistic; ties count half.
pub fn auroc(scores: &[f32], labels: &[bool]) -> Result<f64> {
    Ok(ranking_metrics(scores, labels)?.auroc)
}

/// Mean precision at each positive, with tied scores sharing one precision.
pub fn average_precision(scores: &[f32], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(HiadError::UndefinedMetric("average precision needs a positive".into()));
    }
    Ok(ap_groups(&tie_groups(scores, labels), pos))
}

/// Best F1 over thresholds at distinct scores (predicted positive: score >= t).
pub fn f1_max(scores: &[f32], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(HiadError::UndefinedMetric("F1 needs a positive".into()));
    }
    Ok(f1_groups(&tie_groups(scores, labels), pos))
}
