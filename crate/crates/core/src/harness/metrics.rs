use std::cmp::Ordering;

use crate::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Area under the ROC curve via the rank-sum statistic, ties counted half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("roc_auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Indices by descending score, equal scores in input order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].partial_cmp(&scores[a]) {
        Some(o) => o,
        None => Ordering::Equal,
    });
    order
}

/// Mean of precision@k over the ranks k of the positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::Metric("average_precision needs a positive".into()));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &i) in descending(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

/// Precision of the `score >= 0.5` decision; 0 when nothing is predicted positive.
pub fn precision_at_half(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let (mut tp, mut predicted) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= 0.5 {
            predicted += 1;
            tp += usize::from(l);
        }
    }
    Ok(if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    })
}
