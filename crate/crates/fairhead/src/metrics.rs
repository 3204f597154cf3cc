//! Scalar metrics: PR curves and AUPRC, ROC-AUC, subgroup deltas, the
//! composite tuning score, recall-constrained thresholds, confusion rates,
//! equalized-odds gaps, rater disagreement, and repeat aggregation.
//!
//! All metrics work on the [0,1] scale internally; rendering as percentage
//! points happens at the report layer.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataio::Axis;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("need at least one positive and one negative label")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("fewer than 2 groups with both classes on axis {axis}")]
    TooFewGroups { axis: String },
    #[error("group `{0}` has no cases")]
    EmptyGroup(String),
    #[error("need at least 2 runs to aggregate, got {0}")]
    TooFewRuns(usize),
}

/// Precision-recall curve with the `(0, first precision)` anchor point.
/// `thresholds` aligns with `points`; the anchor carries `+inf`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrCurve {
    /// (recall, precision) pairs with non-decreasing recall.
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
}

/// Per-group AUPRC along one demographic axis and the max pairwise gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub axis: Axis,
    /// Group name -> AUPRC, in the axis' canonical group order.
    pub per_group: Vec<(String, f64)>,
    /// max - min over the retained groups.
    pub delta: f64,
    /// Groups dropped for lacking both classes.
    pub skipped: Vec<String>,
}

/// Mean, sample standard deviation, and Student-t 95% interval over repeats.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_runs: usize,
}

/// Confusion rates at a fixed threshold (predict positive iff score >= t).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfusionRates {
    pub tpr: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub tnr: f64,
}

fn check_both_classes(labels: &[u8]) -> Result<(), MetricError> {
    let pos = labels.iter().any(|&y| y == 1);
    let neg = labels.iter().any(|&y| y == 0);
    if pos && neg {
        Ok(())
    } else {
        Err(MetricError::SingleClass)
    }
}

/// Indices sorted by score descending; ties keep input order.
fn order_by_score_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Full precision-recall curve. Equal scores collapse into one threshold step.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<PrCurve, MetricError> {
    assert_eq!(scores.len(), labels.len());
    check_both_classes(labels)?;
    let order = order_by_score_desc(scores);
    let total_pos = labels.iter().filter(|&&y| y == 1).count() as f64;

    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((tp / total_pos, tp / (tp + fp)));
        thresholds.push(threshold);
    }
    let first_precision = points[0].1;
    points.insert(0, (0.0, first_precision));
    thresholds.insert(0, f64::INFINITY);
    Ok(PrCurve { points, thresholds })
}

/// Area under the precision-recall curve, estimated as average precision:
/// `sum over threshold steps of (R_i - R_{i-1}) * P_i`.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let curve = pr_curve(scores, labels)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(recall, precision) in &curve.points[1..] {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Mann-Whitney ROC-AUC: fraction of (positive, negative) pairs ranked
/// correctly, ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    assert_eq!(scores.len(), labels.len());
    check_both_classes(labels)?;
    // Average ranks over tied scores, then the rank-sum statistic.
    let order = {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
        idx
    };
    let n = scores.len();
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block shares the mean rank
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        for k in i..j {
            ranks[order[k]] = mean_rank;
        }
        i = j;
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = n as f64 - n_pos;
    let rank_sum: f64 = (0..n).filter(|&k| labels[k] == 1).map(|k| ranks[k]).sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Per-group AUPRC and the max pairwise gap. Groups lacking both classes are
/// dropped and recorded in `skipped` rather than failing the whole result.
pub fn subgroup_auprc(
    scores: &[f64],
    labels: &[u8],
    groups: &[Option<usize>],
    axis: Axis,
) -> Result<SubgroupResult, MetricError> {
    assert_eq!(scores.len(), labels.len());
    assert_eq!(scores.len(), groups.len());
    let names = axis.metric_groups();
    let mut per_group = Vec::new();
    let mut skipped = Vec::new();
    for (g, name) in names.iter().enumerate() {
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| groups[i] == Some(g)).collect();
        let g_scores: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let g_labels: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        match auprc(&g_scores, &g_labels) {
            Ok(v) => per_group.push((name.to_string(), v)),
            Err(MetricError::SingleClass) => {
                log::warn!("axis {axis}: group `{name}` lacks both classes, dropped from delta");
                skipped.push(name.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if per_group.len() < 2 {
        return Err(MetricError::TooFewGroups { axis: axis.to_string() });
    }
    let max = per_group.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let min = per_group.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    Ok(SubgroupResult { axis, per_group, delta: max - min, skipped })
}

/// The hyperparameter selection objective: overall AUPRC minus the sum of the
/// three per-axis AUPRC gaps, all on the [0,1] scale.
pub fn composite_score(auprc_mean: f64, delta_sex: f64, delta_age: f64, delta_race: f64) -> f64 {
    auprc_mean - (delta_sex + delta_age + delta_race)
}

/// Largest threshold (among distinct scores) whose recall under
/// `score >= threshold` still meets the floor. Maximizes precision subject to
/// the recall constraint.
pub fn select_threshold_min_recall(
    scores: &[f64],
    labels: &[u8],
    r_min: f64,
) -> Result<f64, MetricError> {
    assert_eq!(scores.len(), labels.len());
    if !labels.iter().any(|&y| y == 1) {
        return Err(MetricError::NoPositives);
    }
    let order = order_by_score_desc(scores);
    let total_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut tp = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1.0;
            }
            i += 1;
        }
        if tp / total_pos >= r_min {
            return Ok(threshold);
        }
    }
    // r_min <= 1 and all samples predicted positive gives recall 1, so the
    // loop always returns by its last iteration.
    unreachable!("recall reaches 1.0 at the minimum score");
}

/// Standard confusion rates at `score >= threshold`.
pub fn confusion_rates(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ConfusionRates, MetricError> {
    assert_eq!(scores.len(), labels.len());
    check_both_classes(labels)?;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    let mut tn = 0.0;
    for (s, y) in scores.iter().zip(labels) {
        let predicted = *s >= threshold;
        match (predicted, *y) {
            (true, 1) => tp += 1.0,
            (true, _) => fp += 1.0,
            (false, 1) => fn_ += 1.0,
            (false, _) => tn += 1.0,
        }
    }
    Ok(ConfusionRates {
        tpr: tp / (tp + fn_),
        fpr: fp / (fp + tn),
        fnr: fn_ / (tp + fn_),
        tnr: tn / (fp + tn),
    })
}

fn range(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    max - min
}

/// Equalized-odds max gap: the larger of the TPR range and the FPR range
/// across groups.
pub fn equalized_odds_gap(tprs: &[f64], fprs: &[f64]) -> Result<f64, MetricError> {
    assert_eq!(tprs.len(), fprs.len());
    if tprs.len() < 2 {
        return Err(MetricError::TooFewGroups { axis: "groups".into() });
    }
    Ok(range(tprs).max(range(fprs)))
}

/// Per-group mean of the per-case fraction of raters who differ from the
/// majority vote. Even-rater ties contribute 0.5.
pub fn disagreement_rate(
    votes: &[Vec<u8>],
    groups: &[usize],
    n_groups: usize,
) -> Result<Vec<f64>, MetricError> {
    assert_eq!(votes.len(), groups.len());
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (case, &g) in votes.iter().zip(groups) {
        assert!(!case.is_empty(), "each case needs at least one rater");
        let n = case.len() as f64;
        let pos = case.iter().filter(|&&v| v == 1).count() as f64;
        let disagreement = if pos * 2.0 == n {
            0.5
        } else {
            let minority = pos.min(n - pos);
            minority / n
        };
        sums[g] += disagreement;
        counts[g] += 1;
    }
    sums.iter()
        .zip(&counts)
        .enumerate()
        .map(|(g, (s, &c))| {
            if c == 0 {
                Err(MetricError::EmptyGroup(format!("group {g}")))
            } else {
                Ok(s / c as f64)
            }
        })
        .collect()
}

/// Mean, sample std, and 95% Student-t interval across repeated runs.
pub fn aggregate_runs(values: &[f64]) -> Result<RunAggregate, MetricError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricError::TooFewRuns(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, n as f64 - 1.0)
        .expect("valid dof")
        .inverse_cdf(0.975);
    let half = t * std / (n as f64).sqrt();
    Ok(RunAggregate {
        mean,
        std,
        ci_low: mean - half,
        ci_high: mean + half,
        n_runs: n,
    })
}
