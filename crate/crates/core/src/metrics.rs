//! ROC-AUC, per-class and micro-averaged F1, and working-point selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::Label;

/// Scores (usually `p̂⁺`), labels and uncertainties of an evaluated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
    pub uncertainties: Vec<f64>,
}

impl ScoredSet {
    pub fn new(ids: Vec<u64>, scores: Vec<f64>, labels: Vec<Label>, uncertainties: Vec<f64>) -> Result<Self> {
        let n = scores.len();
        for len in [ids.len(), labels.len(), uncertainties.len()] {
            if len != n {
                return Err(Error::Length { left: n, right: len });
            }
        }
        if n == 0 {
            return Err(Error::Empty("scored set"));
        }
        if scores.iter().chain(&uncertainties).any(|v| !v.is_finite()) {
            return Err(Error::invalid("scores", "scores and uncertainties must be finite"));
        }
        Ok(Self {
            ids,
            scores,
            labels,
            uncertainties,
        })
    }

    /// Ids `0..n` and zero uncertainty.
    pub fn from_scores(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        let n = scores.len();
        Self::new((0..n as u64).collect(), scores, labels, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.labels.iter().filter(|l| l.is_positive()).count();
        pos > 0 && pos < self.len()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ScoredSet {
        ScoredSet {
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            uncertainties: indices.iter().map(|&i| self.uncertainties[i]).collect(),
        }
    }
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs in which the
/// positive scores higher, ties counting one half.
pub fn roc_auc(s: &ScoredSet) -> Result<f64> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));

    // Twice the number of wins keeps everything in exact integers.
    let (mut wins2, mut neg_below, mut n_pos, mut n_neg) = (0u64, 0u64, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let score = s.scores[order[i]];
        let (mut p, mut q) = (0u64, 0u64);
        while i < order.len() && s.scores[order[i]] == score {
            if s.labels[order[i]].is_positive() {
                p += 1;
            } else {
                q += 1;
            }
            i += 1;
        }
        wins2 += 2 * p * neg_below + p * q;
        neg_below += q;
        n_pos += p;
        n_neg += q;
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("scored set"));
    }
    Ok(wins2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn at_threshold(s: &ScoredSet, threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&score, label) in s.scores.iter().zip(&s.labels) {
            match (score >= threshold, label.is_positive()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.fn_ + self.tn;
        (self.tp + self.tn) as f64 / n as f64
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        0.0
    } else {
        (2 * tp) as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub micro: f64,
}

impl F1Scores {
    pub fn from_confusion(c: &Confusion) -> Self {
        // Micro averaging pools TP/FP/FN of both one-vs-rest problems.
        let tp = c.tp + c.tn;
        let errors = c.fp + c.fn_;
        Self {
            f1_pos: f1(c.tp, c.fp, c.fn_),
            f1_neg: f1(c.tn, c.fn_, c.fp),
            micro: f1(tp, errors, errors),
        }
    }

    pub fn macro_mean(&self) -> f64 {
        0.5 * (self.f1_pos + self.f1_neg)
    }
}

/// Per-class and micro-averaged F1 with prediction `score >= threshold`.
pub fn f1_scores(s: &ScoredSet, threshold: f64) -> F1Scores {
    F1Scores::from_confusion(&Confusion::at_threshold(s, threshold))
}

/// Threshold maximising the mean of the two per-class F1 scores.
///
/// Candidates are the midpoints between consecutive distinct scores plus 0
/// and 1. Among equally good candidates the one nearest 0.5 wins; when two
/// are equally near, 0.5 itself is returned if it is equally good.
pub fn best_working_point(s: &ScoredSet) -> Result<f64> {
    if !s.has_both_classes() {
        return Err(Error::SingleClass("scored set"));
    }
    let mut sorted = s.scores.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));

    const EPS: f64 = 1e-12;
    let score = |t: f64| f1_scores(s, t).macro_mean();
    let scored: Vec<(f64, f64)> = candidates.iter().map(|&t| (t, score(t))).collect();
    let best = scored.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let mut winners: Vec<f64> = scored
        .iter()
        .filter(|&&(_, v)| v >= best - EPS)
        .map(|&(t, _)| t)
        .collect();
    winners.sort_by(|a, b| (a - 0.5).abs().total_cmp(&(b - 0.5).abs()).then(a.total_cmp(b)));
    let first = winners[0];
    if winners.len() > 1 && ((winners[1] - 0.5).abs() - (first - 0.5).abs()).abs() < EPS && score(0.5) >= best - EPS {
        return Ok(0.5);
    }
    Ok(first)
}
