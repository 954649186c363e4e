//! Linear hyper-predictor over label tuples and its structured upper bound.
//!
//! The joint score of a candidate tuple `y'` is `Σ y'_i w·s_i`. Training
//! minimizes the bound `max_{y''} F(y'')` with
//! `F(y'') = Σ (y''_i − y_i) w·s_i + Δ(y'', y)`, which dominates the loss
//! of the tuple the predictor actually outputs.

use serde::{Deserialize, Serialize};

use crate::dataio::{class_counts, Label};
use crate::error::{Error, Result};
use crate::measures::{confusion_counts, loss_from_counts, top_k_indices, MeasureKind};
use crate::sparse_coding::SparseCodes;

/// Largest tuple length accepted by [`argmax_f_bruteforce`].
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Weight vector `w` of the hyper-predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPredictor {
    pub weights: Vec<f64>,
}

impl HyperPredictor {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    /// Per-point responses `w·s_i`.
    pub fn scores(&self, codes: &SparseCodes) -> Result<Vec<f64>> {
        if codes.atoms() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "predictor has {} weights, codes have {} atoms",
                self.weights.len(),
                codes.atoms()
            )));
        }
        Ok((0..codes.len()).map(|i| dot(&self.weights, codes.code(i))).collect())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How ties among maximizers of `F` are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Enumerate the label space and average over every maximizer.
    Average,
    /// Count-based search returning one deterministic maximizer.
    #[default]
    Single,
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(TiePolicy::Average),
            "single" => Ok(TiePolicy::Single),
            other => Err(Error::Config(format!("unknown tie policy `{other}` (expected average or single)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxResult {
    pub max_value: f64,
    /// Every maximizer (brute force) or a single representative (oracle).
    pub maximizers: Vec<Vec<Label>>,
    /// `(fn, fp)` of the first maximizer.
    pub counts: (usize, usize),
}

fn check_len(scores: &[f64], y: &[Label]) -> Result<()> {
    if scores.len() != y.len() {
        return Err(Error::Dimension(format!("{} scores vs {} labels", scores.len(), y.len())));
    }
    Ok(())
}

/// `Σ y'_i (w·s_i)`.
pub fn joint_score(w: &HyperPredictor, codes: &SparseCodes, y: &[Label]) -> Result<f64> {
    let scores = w.scores(codes)?;
    check_len(&scores, y)?;
    Ok(scores.iter().zip(y).map(|(s, l)| l.value() * s).sum())
}

/// Labels from responses: the sign of each score, zero mapped to +1.
pub fn labels_from_scores(scores: &[f64]) -> Vec<Label> {
    scores.iter().map(|&s| Label::from_sign(s)).collect()
}

/// Maximizer of the joint score over all tuples.
///
/// The score decomposes over points, so the maximizer is the elementwise
/// sign of `w·s_i` (ties go to +1).
pub fn predict(w: &HyperPredictor, codes: &SparseCodes) -> Result<Vec<Label>> {
    Ok(labels_from_scores(&w.scores(codes)?))
}

/// Maximizer of the joint score over the tuples on which `kind`'s loss is
/// defined.
///
/// For PRBEP that is the slice with exactly `n₊` predicted positives, whose
/// maximizer labels the `n₊` highest responses positive (ties by index).
/// For F1 and AUC this is [`predict`].
pub fn predict_for_measure(
    kind: MeasureKind,
    w: &HyperPredictor,
    codes: &SparseCodes,
    y_true: &[Label],
) -> Result<Vec<Label>> {
    let scores = w.scores(codes)?;
    check_len(&scores, y_true)?;
    Ok(match kind {
        MeasureKind::Prbep => {
            let (n_pos, _) = class_counts(y_true);
            let mut out = vec![Label::Negative; scores.len()];
            for i in top_k_indices(&scores, n_pos) {
                out[i] = Label::Positive;
            }
            out
        }
        MeasureKind::F1 | MeasureKind::Auc => labels_from_scores(&scores),
    })
}

fn linear_part(scores: &[f64], y: &[Label], cand: &[Label]) -> f64 {
    scores.iter().zip(y).zip(cand).map(|((s, t), c)| (c.value() - t.value()) * s).sum()
}

fn f_from_scores(scores: &[f64], y: &[Label], cand: &[Label], kind: MeasureKind) -> Result<f64> {
    let c = confusion_counts(y, cand)?;
    let delta = loss_from_counts(kind, c.fn_, c.fp, c.positives(), c.negatives())?;
    Ok(linear_part(scores, y, cand) + delta)
}

/// `F(y'') = Σ (y''_i − y_i)(w·s_i) + Δ(y'', y)`.
pub fn f_value(
    w: &HyperPredictor,
    codes: &SparseCodes,
    y: &[Label],
    candidate: &[Label],
    kind: MeasureKind,
) -> Result<f64> {
    let scores = w.scores(codes)?;
    check_len(&scores, y)?;
    f_from_scores(&scores, y, candidate, kind)
}

fn check_classes(kind: MeasureKind, y: &[Label]) -> Result<(usize, usize)> {
    let (n_pos, n_neg) = class_counts(y);
    if kind.needs_both_classes() && (n_pos == 0 || n_neg == 0) {
        return Err(Error::DegenerateClass(format!(
            "{kind} training needs both classes (positives={n_pos}, negatives={n_neg})"
        )));
    }
    Ok((n_pos, n_neg))
}

/// Exhaustive maximization of `F` given precomputed responses.
pub fn argmax_bruteforce_scores(scores: &[f64], y: &[Label], kind: MeasureKind) -> Result<ArgmaxResult> {
    check_len(scores, y)?;
    let n = y.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { n, limit: BRUTE_FORCE_LIMIT });
    }
    let (n_pos, n_neg) = check_classes(kind, y)?;

    let mut values = Vec::with_capacity(1 << n);
    let mut best = f64::NEG_INFINITY;
    let mut cand = vec![Label::Negative; n];
    for mask in 0u32..(1u32 << n) {
        let (mut fn_, mut fp) = (0, 0);
        for (i, c) in cand.iter_mut().enumerate() {
            *c = if mask >> i & 1 == 1 { Label::Positive } else { Label::Negative };
            match (y[i], *c) {
                (Label::Positive, Label::Negative) => fn_ += 1,
                (Label::Negative, Label::Positive) => fp += 1,
                _ => {}
            }
        }
        if kind == MeasureKind::Prbep && fn_ != fp {
            continue;
        }
        let v = linear_part(scores, y, &cand) + loss_from_counts(kind, fn_, fp, n_pos, n_neg)?;
        best = best.max(v);
        values.push((mask, v, (fn_, fp)));
    }

    // Sums over different flip sets can round differently for
    // mathematically equal values.
    let tol = 1e-12 * (1.0 + best.abs());
    let mut maximizers = Vec::new();
    let mut counts = (0, 0);
    for (mask, v, c) in values {
        if v >= best - tol {
            if maximizers.is_empty() {
                counts = c;
            }
            maximizers.push((0..n).map(|i| if mask >> i & 1 == 1 { Label::Positive } else { Label::Negative }).collect());
        }
    }
    Ok(ArgmaxResult { max_value: best, maximizers, counts })
}

/// Exhaustive maximization of `F` over the label space (n ≤ 20).
pub fn argmax_f_bruteforce(
    w: &HyperPredictor,
    codes: &SparseCodes,
    y: &[Label],
    kind: MeasureKind,
) -> Result<ArgmaxResult> {
    if y.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { n: y.len(), limit: BRUTE_FORCE_LIMIT });
    }
    argmax_bruteforce_scores(&w.scores(codes)?, y, kind)
}

/// Count-based maximization of `F` given precomputed responses.
///
/// `Δ` depends on a candidate only through its false-negative count `a` and
/// false-positive count `b`. For fixed `(a, b)` the linear part is largest
/// when the `a` lowest-scoring positives and the `b` highest-scoring
/// negatives are flipped, so scanning all `(a, b)` with prefix sums finds
/// the exact maximum in `O(n log n + n₊·n₋)`. The first `(a, b)` in
/// lexicographic order attaining the maximum is returned.
pub fn argmax_oracle_scores(scores: &[f64], y: &[Label], kind: MeasureKind) -> Result<ArgmaxResult> {
    check_len(scores, y)?;
    let (n_pos, n_neg) = check_classes(kind, y)?;

    let mut pos: Vec<usize> = (0..y.len()).filter(|&i| y[i].is_positive()).collect();
    let mut neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i].is_positive()).collect();
    pos.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    neg.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // gain from flipping: positive → −2·score, negative → +2·score
    let mut pos_gain = vec![0.0; n_pos + 1];
    for (k, &i) in pos.iter().enumerate() {
        pos_gain[k + 1] = pos_gain[k] - 2.0 * scores[i];
    }
    let mut neg_gain = vec![0.0; n_neg + 1];
    for (k, &i) in neg.iter().enumerate() {
        neg_gain[k + 1] = neg_gain[k] + 2.0 * scores[i];
    }

    let mut best = (f64::NEG_INFINITY, 0, 0);
    for a in 0..=n_pos {
        let b_range = match kind {
            MeasureKind::Prbep if a > n_neg => break,
            MeasureKind::Prbep => a..=a,
            _ => 0..=n_neg,
        };
        for b in b_range {
            let v = pos_gain[a] + neg_gain[b] + loss_from_counts(kind, a, b, n_pos, n_neg)?;
            if v > best.0 {
                best = (v, a, b);
            }
        }
    }

    let (max_value, a, b) = best;
    let mut tuple = y.to_vec();
    for &i in pos.iter().take(a).chain(neg.iter().take(b)) {
        tuple[i] = tuple[i].flipped();
    }
    Ok(ArgmaxResult { max_value, maximizers: vec![tuple], counts: (a, b) })
}

/// Count-based maximization of `F`; exact, any `n`.
pub fn argmax_f_oracle(
    w: &HyperPredictor,
    codes: &SparseCodes,
    y: &[Label],
    kind: MeasureKind,
) -> Result<ArgmaxResult> {
    argmax_oracle_scores(&w.scores(codes)?, y, kind)
}

/// Dispatch on tie policy.
pub fn argmax_scores(scores: &[f64], y: &[Label], kind: MeasureKind, policy: TiePolicy) -> Result<ArgmaxResult> {
    match policy {
        TiePolicy::Average => argmax_bruteforce_scores(scores, y, kind),
        TiePolicy::Single => argmax_oracle_scores(scores, y, kind),
    }
}

/// Average of `F` over the maximizer set, i.e. the upper bound on the loss
/// of the predicted tuple.
pub fn upper_bound(
    w: &HyperPredictor,
    codes: &SparseCodes,
    y: &[Label],
    kind: MeasureKind,
    policy: TiePolicy,
) -> Result<f64> {
    let scores = w.scores(codes)?;
    let result = argmax_scores(&scores, y, kind, policy)?;
    let mut total = 0.0;
    for cand in &result.maximizers {
        total += f_from_scores(&scores, y, cand, kind)?;
    }
    Ok(total / result.maximizers.len() as f64)
}

/// Per-point mismatch `(1/|τ|) Σ_{y''∈τ} (y''_i − y_i)`.
pub fn mismatch_coefficients(y: &[Label], maximizers: &[Vec<Label>]) -> Result<Vec<f64>> {
    if maximizers.is_empty() {
        return Err(Error::Internal("empty maximizer set".into()));
    }
    let mut coef = vec![0.0; y.len()];
    for cand in maximizers {
        if cand.len() != y.len() {
            return Err(Error::Dimension(format!("maximizer of length {} for {} labels", cand.len(), y.len())));
        }
        for (c, (t, p)) in coef.iter_mut().zip(y.iter().zip(cand)) {
            *c += p.value() - t.value();
        }
    }
    let k = maximizers.len() as f64;
    coef.iter_mut().for_each(|c| *c /= k);
    Ok(coef)
}

/// Gradient of `h(w) = C2/2‖w‖² + C3·avg_τ F` with the maximizer set frozen.
pub fn loss_gradient_w(
    w: &HyperPredictor,
    codes: &SparseCodes,
    y: &[Label],
    maximizers: &[Vec<Label>],
    c2: f64,
    c3: f64,
) -> Result<Vec<f64>> {
    if codes.atoms() != w.weights.len() || codes.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} weights, codes {}×{}, {} labels",
            w.weights.len(),
            codes.atoms(),
            codes.len(),
            y.len()
        )));
    }
    let coef = mismatch_coefficients(y, maximizers)?;
    let mut grad: Vec<f64> = w.weights.iter().map(|v| c2 * v).collect();
    for (i, &k) in coef.iter().enumerate() {
        if k != 0.0 {
            for (g, s) in grad.iter_mut().zip(codes.code(i)) {
                *g += c3 * k * s;
            }
        }
    }
    Ok(grad)
}

/// Loss contribution to the gradient of code `i`: `C3·coef_i·w`.
pub fn loss_gradient_s(
    i: usize,
    w: &HyperPredictor,
    y: &[Label],
    maximizers: &[Vec<Label>],
    c3: f64,
) -> Result<Vec<f64>> {
    if i >= y.len() {
        return Err(Error::Dimension(format!("index {i} out of range for {} points", y.len())));
    }
    let coef = mismatch_coefficients(y, maximizers)?;
    Ok(w.weights.iter().map(|v| c3 * coef[i] * v).collect())
}
