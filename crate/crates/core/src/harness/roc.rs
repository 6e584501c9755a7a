//! Detection-rate and ranking metrics: WDR, AUC, TPR at a fixed FPR.

use crate::detection::DetectionReport;
use crate::error::{Error, Result};

/// Fraction of reports whose detection probability clears the threshold.
pub fn wdr(reports: &[DetectionReport], p_star: f64) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::contract("wdr needs at least one report"));
    }
    let hits = reports
        .iter()
        .filter(|r| r.detection_probability > p_star)
        .count();
    Ok(hits as f64 / reports.len() as f64)
}

/// Probability that a positive outranks a negative (ties count 1/2),
/// computed as the normalized Mann-Whitney U via midranks.
pub fn auc(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(Error::contract("auc needs nonempty score sets"));
    }
    let mut combined: Vec<(f64, bool)> = scores_pos
        .iter()
        .map(|&s| (s, true))
        .chain(scores_neg.iter().map(|&s| (s, false)))
        .collect();
    combined.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));

    // Midranks over tie groups, accumulating the positive rank sum.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < combined.len() {
        let mut j = i;
        while j + 1 < combined.len() && combined[j + 1].0 == combined[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for item in &combined[i..=j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = scores_pos.len() as f64;
    let nn = scores_neg.len() as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(u / (np * nn))
}

/// TPR at the smallest threshold whose empirical FPR does not exceed
/// `fpr` (decision rule: score strictly greater than the threshold).
pub fn tpr_at_fpr(scores_pos: &[f64], scores_neg: &[f64], fpr: f64) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(Error::contract("tpr_at_fpr needs nonempty score sets"));
    }
    if !(0.0..=1.0).contains(&fpr) {
        return Err(Error::contract("fpr target must lie in [0,1]"));
    }
    let allowed = (fpr * scores_neg.len() as f64).floor() as usize;
    let mut neg = scores_neg.to_vec();
    neg.sort_by(|a, b| b.partial_cmp(a).expect("scores must not be NaN"));
    if allowed >= neg.len() {
        // Every negative may fire; the threshold drops below all scores.
        return Ok(1.0);
    }
    let threshold = neg[allowed];
    let tp = scores_pos.iter().filter(|&&s| s > threshold).count();
    Ok(tp as f64 / scores_pos.len() as f64)
}
