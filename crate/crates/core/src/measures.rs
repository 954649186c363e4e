//! Multivariate performance measures and their tuple-level losses.
//!
//! Every loss here depends on a predicted tuple only through the number of
//! false negatives and false positives, which is what makes the count-based
//! argmax search in [`crate::hyperloss`] exact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{class_counts, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    F1,
    Prbep,
    Auc,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 3] = [MeasureKind::F1, MeasureKind::Prbep, MeasureKind::Auc];

    /// Whether the loss needs both classes present in the true tuple.
    pub fn needs_both_classes(self) -> bool {
        !matches!(self, MeasureKind::F1)
    }

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::F1 => "f1",
            MeasureKind::Prbep => "prbep",
            MeasureKind::Auc => "auc",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(MeasureKind::F1),
            "prbep" => Ok(MeasureKind::Prbep),
            "auc" => Ok(MeasureKind::Auc),
            other => Err(Error::Config(format!("unknown measure `{other}` (expected f1, prbep or auc)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    /// F1 score; 1 when there is nothing to find and nothing was predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn confusion_counts(y_true: &[Label], y_pred: &[Label]) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} true labels vs {} predicted labels",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (Label::Positive, Label::Positive) => c.tp += 1,
            (Label::Positive, Label::Negative) => c.fn_ += 1,
            (Label::Negative, Label::Positive) => c.fp += 1,
            (Label::Negative, Label::Negative) => c.tn += 1,
        }
    }
    Ok(c)
}

fn require_both(kind: MeasureKind, n_pos: usize, n_neg: usize) -> Result<()> {
    if kind.needs_both_classes() && (n_pos == 0 || n_neg == 0) {
        return Err(Error::DegenerateClass(format!(
            "{kind} needs both classes in the true labels (positives={n_pos}, negatives={n_neg})"
        )));
    }
    Ok(())
}

/// Loss of a tuple with `fn_` false negatives and `fp` false positives
/// against a truth containing `n_pos` positives and `n_neg` negatives.
pub fn loss_from_counts(kind: MeasureKind, fn_: usize, fp: usize, n_pos: usize, n_neg: usize) -> Result<f64> {
    require_both(kind, n_pos, n_neg)?;
    debug_assert!(fn_ <= n_pos && fp <= n_neg);
    match kind {
        MeasureKind::F1 => {
            let tp = n_pos - fn_;
            let denom = 2 * tp + fp + fn_;
            Ok(if denom == 0 { 0.0 } else { 1.0 - (2 * tp) as f64 / denom as f64 })
        }
        MeasureKind::Prbep => {
            if fp != fn_ {
                return Err(Error::UndefinedSlice { fp, fn_ });
            }
            Ok(fn_ as f64 / n_pos as f64)
        }
        MeasureKind::Auc => {
            let (fnf, fpf) = (fn_ as f64, fp as f64);
            let (np, nn) = (n_pos as f64, n_neg as f64);
            // misordered pairs count 1, pairs predicted with equal labels count 1/2
            let wrong = fnf * fpf + 0.5 * (fnf * (nn - fpf) + (np - fnf) * fpf);
            Ok(wrong / (np * nn))
        }
    }
}

/// Tuple loss Δ(y_pred, y_true) in [0, 1].
pub fn tuple_loss(kind: MeasureKind, y_true: &[Label], y_pred: &[Label]) -> Result<f64> {
    let c = confusion_counts(y_true, y_pred)?;
    loss_from_counts(kind, c.fn_, c.fp, c.positives(), c.negatives())
}

/// Fraction of (positive, negative) pairs ranked correctly; ties count 1/2.
pub fn auc_from_scores(y_true: &[Label], scores: &[f64]) -> Result<f64> {
    if y_true.len() != scores.len() {
        return Err(Error::Dimension(format!("{} labels vs {} scores", y_true.len(), scores.len())));
    }
    let (n_pos, n_neg) = class_counts(y_true);
    require_both(MeasureKind::Auc, n_pos, n_neg)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk ascending score groups; each positive beats every negative in
    // strictly lower groups and ties half of the negatives in its own group.
    let mut correct = 0.0;
    let mut neg_below = 0usize;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        let (gp, gn) = class_counts(&group.iter().map(|&i| y_true[i]).collect::<Vec<_>>());
        correct += gp as f64 * (neg_below as f64 + 0.5 * gn as f64);
        neg_below += gn;
        start = end;
    }
    Ok(correct / (n_pos as f64 * n_neg as f64))
}

/// Precision when the `n₊` highest-scoring points are predicted positive.
///
/// At that cutoff precision equals recall. Score ties are broken by input
/// order (earlier index ranks higher).
pub fn prbep_from_scores(y_true: &[Label], scores: &[f64]) -> Result<f64> {
    if y_true.len() != scores.len() {
        return Err(Error::Dimension(format!("{} labels vs {} scores", y_true.len(), scores.len())));
    }
    let (n_pos, _) = class_counts(y_true);
    if n_pos == 0 {
        return Err(Error::DegenerateClass("prbep needs at least one positive".into()));
    }
    let top = top_k_indices(scores, n_pos);
    let hits = top.iter().filter(|&&i| y_true[i].is_positive()).count();
    Ok(hits as f64 / n_pos as f64)
}

/// Indices of the `k` highest scores; ties go to the lower index.
pub(crate) fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    order
}
