//! Threshold-free and thresholded evaluation of anomaly scores.
//!
//! Conventions used everywhere in the crate:
//!
//! - higher score means more anomalous;
//! - a sample is flagged anomalous iff `score > threshold`;
//! - tied scores form a single operating point for the PR curve, and count
//!   one half in the ROC AUC.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores paired with binary ground truth (`true` = anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Format {
                what: "scored set",
                detail: "NaN score".into(),
            });
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Cumulative (tp, fp) after each group of tied scores, scanning from the
    /// highest score down. The group's score is the threshold at which the
    /// group becomes flagged.
    fn descending_groups(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups = Vec::new();
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            while i < order.len() && self.scores[order[i]] == s {
                if self.labels[order[i]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            groups.push((s, tp, fp));
        }
        groups
    }
}

/// Average precision: `sum_k (R_k - R_{k-1}) P_k` over descending distinct
/// score thresholds.
pub fn average_precision(set: &ScoredSet) -> Result<f64> {
    let positives = set.positives();
    if positives == 0 {
        return Err(Error::EmptyInput("average precision needs a positive label"));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (_, tp, fp) in set.descending_groups() {
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// ROC AUC as the Mann-Whitney statistic, computed from mid-ranks.
pub fn auc_roc(set: &ScoredSet) -> Result<f64> {
    let positives = set.positives();
    let negatives = set.negatives();
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass("ROC AUC"));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && set.scores[order[j]] == set.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share the average rank
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let tied_positives = order[i..j].iter().filter(|&&k| set.labels[k]).count();
        positive_rank_sum += mid_rank * tied_positives as f64;
        i = j;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// `F_beta = (1 + b^2) P R / (b^2 P + R)`, defined as 0 when TP = 0.
    pub fn f_beta(&self, beta: f64) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let p = self.precision();
        let r = self.recall();
        let b2 = beta * beta;
        (1.0 + b2) * p * r / (b2 * p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_at(set: &ScoredSet, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (s > threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f2: f64,
    pub confusion: Confusion,
}

pub fn f2_at_threshold(set: &ScoredSet, threshold: f64) -> Result<ThresholdMetrics> {
    if !threshold.is_finite() {
        return Err(Error::config("threshold must be finite"));
    }
    let confusion = confusion_at(set, threshold);
    Ok(ThresholdMetrics {
        precision: confusion.precision(),
        recall: confusion.recall(),
        f2: confusion.f_beta(2.0),
        confusion,
    })
}

/// Threshold flagging the top `fraction` of `scores`.
///
/// With `k = ceil(fraction * n)` and `v` the k-th largest score, every score
/// `>= v` is flagged; the returned threshold is the largest double below `v`
/// so that `score > threshold` selects exactly that set. Ties at `v` therefore
/// all count as anomalous and may push the flagged count above `k`.
pub fn quantile_threshold(scores: &[f64], fraction: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("quantile threshold needs scores"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "threshold fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Format {
            what: "scores",
            detail: "non-finite score".into(),
        });
    }
    let n = scores.len();
    // the epsilon absorbs products such as 0.1 * 30 = 3.0000000000000004
    let k = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[k - 1].next_down())
}

/// One point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

pub fn pr_curve(set: &ScoredSet) -> Vec<PrPoint> {
    let positives = set.positives().max(1) as f64;
    set.descending_groups()
        .into_iter()
        .map(|(s, tp, fp)| PrPoint {
            threshold: s,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives,
        })
        .collect()
}

pub fn roc_curve(set: &ScoredSet) -> Vec<RocPoint> {
    let positives = set.positives().max(1) as f64;
    let negatives = set.negatives().max(1) as f64;
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    points.extend(set.descending_groups().into_iter().map(|(s, tp, fp)| RocPoint {
        threshold: s,
        fpr: fp as f64 / negatives,
        tpr: tp as f64 / positives,
    }));
    points
}

/// Provenance of one evaluation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub model: String,
    pub seed: u64,
    pub fold: usize,
}

/// Metrics of a single (model, seed, fold) run on a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub meta: RunMeta,
    pub ap: f64,
    pub auc_roc: f64,
    pub f2: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub n: usize,
    pub flagged_fraction: f64,
    pub train_seconds: f64,
}

/// Full evaluation of a scored test set at the `fraction` quantile threshold.
pub fn evaluate(set: &ScoredSet, fraction: f64, meta: RunMeta) -> Result<EvalReport> {
    let ap = average_precision(set)?;
    let auc = auc_roc(set)?;
    let threshold = quantile_threshold(set.scores(), fraction)?;
    let at = f2_at_threshold(set, threshold)?;
    let flagged = at.confusion.tp + at.confusion.fp;
    Ok(EvalReport {
        meta,
        ap,
        auc_roc: auc,
        f2: at.f2,
        precision: at.precision,
        recall: at.recall,
        threshold,
        confusion: at.confusion,
        n: set.len(),
        flagged_fraction: flagged as f64 / set.len() as f64,
        train_seconds: 0.0,
    })
}

/// Spearman rank correlation with mid-ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("spearman needs two points"));
    }
    let ra = mid_ranks(a);
    let rb = mid_ranks(b);
    Ok(pearson(&ra, &rb))
}

fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&x, &y| v[x].partial_cmp(&v[y]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
