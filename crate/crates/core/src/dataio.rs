//! Dataset loading and fold planning.
//!
//! Two text formats are understood:
//!
//! * svmlight-style sparse lines, `<label> <idx>:<val> ...`, with 1-based
//!   strictly increasing indices and `#` comments;
//! * CSV with a header row containing a `label` column (and optionally an
//!   `id` column); every other column is a numeric feature.
//!
//! Features are always stored dense.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn from_sign(v: f64) -> Self {
        if v >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// +1.0 or -1.0.
    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    #[inline]
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    fn parse(token: &str) -> Option<Self> {
        match token {
            "1" | "+1" => Some(Label::Positive),
            "-1" => Some(Label::Negative),
            _ => None,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Positive => "+1",
            Label::Negative => "-1",
        })
    }
}

/// Count of positive and negative labels.
pub fn class_counts(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    (pos, labels.len() - pos)
}

/// A tuple of `n` feature vectors (rows) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<Label>,
    ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<Label>, ids: Option<Vec<String>>) -> Result<Self> {
        let (n, d) = features.shape();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if d == 0 {
            return Err(Error::Dimension("dataset has no features".into()));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} rows but {} labels", n, labels.len())));
        }
        if let Some(ids) = &ids {
            if ids.len() != n {
                return Err(Error::Dimension(format!("{} rows but {} ids", n, ids.len())));
            }
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            // column-major storage
            return Err(Error::Value { line: pos % n + 1, value: features[pos].to_string() });
        }
        Ok(Self { features, labels, ids })
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `n × d` feature matrix; row `i` is point `i`.
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Identifier for point `i`: its id when present, otherwise its index.
    pub fn id_of(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    }

    pub fn class_counts(&self) -> (usize, usize) {
        class_counts(&self.labels)
    }

    /// Sub-dataset with the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let features = self.features.select_rows(rows.iter());
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        let ids = self.ids.as_ref().map(|ids| rows.iter().map(|&i| ids[i].clone()).collect());
        Self::new(features, labels, ids)
    }

    /// Serialize as svmlight text; zero entries are omitted.
    pub fn to_svmlight(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for j in 0..self.dim() {
                let v = self.features[(i, j)];
                if v != 0.0 {
                    let _ = write!(out, " {}:{}", j + 1, v);
                }
            }
            out.push('\n');
        }
        out
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

/// Parse svmlight-style sparse text.
pub fn parse_svmlight(bytes: &[u8]) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, message: format!("invalid UTF-8: {e}") })?;

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0usize;

    for (lineno, raw) in lines(text) {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label = Label::parse(label_tok)
            .ok_or_else(|| Error::Label { line: lineno, label: label_tok.to_string() })?;

        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected `<index>:<value>`, found `{tok}`"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature index `{idx_s}`"),
            })?;
            if idx == 0 {
                return Err(Error::Parse { line: lineno, message: "feature indices are 1-based".into() });
            }
            if idx <= last {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("feature indices not strictly increasing ({idx} after {last})"),
                });
            }
            let val: f64 = val_s.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature value `{val_s}`"),
            })?;
            if !val.is_finite() {
                return Err(Error::Value { line: lineno, value: val_s.to_string() });
            }
            last = idx;
            row.push((idx, val));
        }
        dim = dim.max(last);
        rows.push(row);
        labels.push(label);
    }

    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut features = DMatrix::zeros(rows.len(), dim);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features[(i, j - 1)] = v;
        }
    }
    Dataset::new(features, labels, None)
}

/// Parse CSV with a header row and a `label` column.
pub fn parse_csv(bytes: &[u8]) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, message: format!("invalid UTF-8: {e}") })?;
    let mut it = lines(text).filter(|(_, l)| !l.trim().is_empty());

    let (_, header) = it.next().ok_or(Error::EmptyDataset)?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_col = columns
        .iter()
        .position(|c| *c == "label")
        .ok_or_else(|| Error::Parse { line: 1, message: "missing `label` column".into() })?;
    let id_col = columns.iter().position(|c| *c == "id");
    let feature_cols: Vec<usize> =
        (0..columns.len()).filter(|&c| c != label_col && Some(c) != id_col).collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (lineno, line) in it {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} cells, found {}", columns.len(), cells.len()),
            });
        }
        let label = Label::parse(cells[label_col])
            .ok_or_else(|| Error::Label { line: lineno, label: cells[label_col].to_string() })?;
        labels.push(label);
        if let Some(c) = id_col {
            ids.push(cells[c].to_string());
        }
        for &c in &feature_cols {
            let v: f64 = cells[c].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("non-numeric value `{}` in column `{}`", cells[c], columns[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Value { line: lineno, value: cells[c].to_string() });
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let features = DMatrix::from_row_slice(labels.len(), feature_cols.len(), &values);
    Dataset::new(features, labels, id_col.map(|_| ids))
}

/// Assignment of each point to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Indices in fold `f`, ascending.
    pub fn test_indices(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == f).collect()
    }

    /// Indices outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != f).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Deterministic k-fold split.
///
/// Points are shuffled with a ChaCha8 stream seeded by `seed` and dealt
/// round-robin into folds. In stratified mode positives are dealt first and
/// negatives continue from the fold after the last positive, so both the
/// per-class and the overall fold sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64, stratified: bool, labels: Option<&[Label]>) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("fold count {k} exceeds number of points {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; n];

    if stratified {
        let labels = labels.ok_or_else(|| Error::Config("stratified split requires labels".into()))?;
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {} points", labels.len(), n)));
        }
        let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i].is_positive()).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| !labels[i].is_positive()).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
            assignments[i] = slot % k;
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (slot, &i) in order.iter().enumerate() {
            assignments[i] = slot % k;
        }
    }
    Ok(FoldPlan { k, assignments })
}
