//! Uncertainty-driven rejection at fixed coverage, the probability-interval
//! rejection used as a baseline, and uncertainty-driven bootstrapping of a
//! noisy training set.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{f1_scores, roc_auc, ScoredSet};
use crate::net::NetworkSpec;
use crate::train::{floor_fraction, score_dataset, train_model, TrainConfig, TrainedModel};

/// Coverage levels reported by default.
pub const DEFAULT_COVERAGES: [f64; 4] = [1.0, 0.9, 0.75, 0.5];

/// Training-set fractions removed by default when bootstrapping.
pub const DEFAULT_EPSILONS: [f64; 3] = [0.05, 0.10, 0.15];

/// Outcome of a rejection rule applied to a [`ScoredSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// Positions of kept rows, ascending.
    pub kept: Vec<usize>,
    pub rejected_ids: Vec<u64>,
    /// `u_t` for uncertainty rejection, `δ` for interval rejection.
    pub threshold: f64,
    pub realized_coverage: f64,
}

impl Rejection {
    fn from_mask(s: &ScoredSet, keep: &[bool], threshold: f64) -> Self {
        let kept: Vec<usize> = (0..s.len()).filter(|&i| keep[i]).collect();
        let rejected_ids = (0..s.len()).filter(|&i| !keep[i]).map(|i| s.ids[i]).collect();
        Self {
            realized_coverage: kept.len() as f64 / s.len() as f64,
            kept,
            rejected_ids,
            threshold,
        }
    }

    pub fn kept_set(&self, s: &ScoredSet) -> Result<ScoredSet> {
        if self.kept.is_empty() {
            return Err(Error::Empty("kept subset"));
        }
        Ok(s.select(&self.kept))
    }
}

/// Positions sorted by ascending uncertainty, ties in original order.
fn by_uncertainty(u: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
    order
}

/// Keep the `⌊coverage · N⌋` rows with the lowest uncertainty. The reported
/// threshold `u_t` is the largest kept uncertainty.
pub fn reject_by_uncertainty(s: &ScoredSet, coverage: f64) -> Result<Rejection> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::invalid("coverage", format!("{coverage} not in (0, 1]")));
    }
    let k = floor_fraction(coverage, s.len());
    if k == 0 {
        return Err(Error::invalid(
            "coverage",
            format!("{coverage} keeps no samples out of {}", s.len()),
        ));
    }
    let order = by_uncertainty(&s.uncertainties);
    let mut keep = vec![false; s.len()];
    order[..k].iter().for_each(|&i| keep[i] = true);
    Ok(Rejection::from_mask(s, &keep, s.uncertainties[order[k - 1]]))
}

/// Drop rows whose score lies in the closed interval `[0.5 − δ, 0.5 + δ]`.
pub fn reject_by_probability_interval(s: &ScoredSet, delta: f64) -> Result<Rejection> {
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::invalid("delta", format!("{delta} not in [0, 0.5)")));
    }
    let keep: Vec<bool> = s.scores.iter().map(|&p| p < 0.5 - delta || p > 0.5 + delta).collect();
    Ok(Rejection::from_mask(s, &keep, delta))
}

/// Smallest `δ` whose interval rejection keeps at most `⌊coverage · N⌋` rows
/// (fewer when scores tie at the boundary).
pub fn delta_for_coverage(s: &ScoredSet, coverage: f64) -> Result<f64> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::invalid("coverage", format!("{coverage} not in (0, 1]")));
    }
    let mut dist: Vec<f64> = s.scores.iter().map(|p| (p - 0.5).abs()).collect();
    dist.sort_by(f64::total_cmp);
    let n_reject = s.len() - floor_fraction(coverage, s.len());
    if n_reject == 0 {
        // Nothing to drop; any δ below the closest score's distance works.
        return Ok(0.0f64.min(dist[0] * 0.5));
    }
    Ok(dist[n_reject - 1].min(0.5 - f64::EPSILON))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub coverage: f64,
    pub u_threshold: f64,
    pub n_kept: usize,
    /// `None` when the kept subset holds a single class.
    pub auc: Option<f64>,
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedAtCoverage {
    pub coverage: f64,
    pub ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub threshold: f64,
    pub rows: Vec<CoverageRow>,
    pub rejected_ids: Vec<RejectedAtCoverage>,
}

impl CoverageReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coverage,u_threshold,n_kept,auc,f1_pos,f1_neg,micro_f1\n");
        for r in &self.rows {
            let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.coverage, r.u_threshold, r.n_kept, auc, r.f1_pos, r.f1_neg, r.micro_f1
            ));
        }
        out
    }

    pub fn row(&self, coverage: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| (r.coverage - coverage).abs() < 1e-12)
    }
}

/// Rejection by uncertainty at each coverage (rows in decreasing coverage),
/// with ROC-AUC and F1 at the fixed decision `threshold` on the kept rows.
pub fn coverage_curve(s: &ScoredSet, coverages: &[f64], threshold: f64) -> Result<CoverageReport> {
    if coverages.is_empty() {
        return Err(Error::Empty("coverage list"));
    }
    let mut levels = coverages.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let mut rows = Vec::with_capacity(levels.len());
    let mut rejected_ids = Vec::with_capacity(levels.len());
    for &c in &levels {
        let rej = reject_by_uncertainty(s, c)?;
        let kept = rej.kept_set(s)?;
        let auc = match roc_auc(&kept) {
            Ok(a) => Some(a),
            Err(Error::SingleClass(_)) => None,
            Err(e) => return Err(e),
        };
        let f1 = f1_scores(&kept, threshold);
        rows.push(CoverageRow {
            coverage: c,
            u_threshold: rej.threshold,
            n_kept: kept.len(),
            auc,
            f1_pos: f1.f1_pos,
            f1_neg: f1.f1_neg,
            micro_f1: f1.micro,
        });
        rejected_ids.push(RejectedAtCoverage {
            coverage: c,
            ids: rej.rejected_ids,
        });
    }
    Ok(CoverageReport {
        threshold,
        rows,
        rejected_ids,
    })
}

/// Training subset `D_ε` with the `⌈ε·N⌉` most uncertain samples removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub epsilon: f64,
    pub kept_ids: Vec<u64>,
    pub dropped_ids: Vec<u64>,
    /// Uncertainty of each dropped sample, aligned with `dropped_ids`.
    pub dropped_uncertainty: Vec<f64>,
}

/// Build a plan from precomputed per-sample uncertainties (aligned with
/// `train.samples`). Ties keep the earlier sample.
pub fn bootstrap_plan_from_uncertainty(train: &Dataset, u: &[f64], epsilon: f64) -> Result<BootstrapPlan> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon", format!("{epsilon} not in (0, 1)")));
    }
    if u.len() != train.len() {
        return Err(Error::Length {
            left: train.len(),
            right: u.len(),
        });
    }
    train.require_nonempty("training set")?;
    let n_keep = floor_fraction(1.0 - epsilon, train.len());
    let order = by_uncertainty(u);
    let mut kept: Vec<usize> = order[..n_keep].to_vec();
    kept.sort_unstable();
    let dropped: Vec<usize> = order[n_keep..].to_vec();

    let pos = kept.iter().filter(|&&i| train.samples[i].label.is_positive()).count();
    if pos == 0 || pos == kept.len() {
        return Err(Error::invalid(
            "epsilon",
            format!(
                "removing {} samples at epsilon {epsilon} leaves a single-class training set",
                dropped.len()
            ),
        ));
    }
    Ok(BootstrapPlan {
        epsilon,
        kept_ids: kept.iter().map(|&i| train.samples[i].id).collect(),
        dropped_ids: dropped.iter().map(|&i| train.samples[i].id).collect(),
        dropped_uncertainty: dropped.iter().map(|&i| u[i]).collect(),
    })
}

/// Score every training sample with `model` and drop the most uncertain
/// `⌈ε·N⌉`, keeping `⌊(1−ε)·N⌋`.
pub fn bootstrap_filter(train: &Dataset, model: &TrainedModel, epsilon: f64) -> Result<BootstrapPlan> {
    let scored = score_dataset(model, train)?;
    bootstrap_plan_from_uncertainty(train, &scored.uncertainties, epsilon)
}

/// How the per-sample uncertainty used for filtering is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UncertaintySource {
    /// The base model scores the data it was trained on.
    #[default]
    InSample,
    /// Each fold is scored by a model trained on the remaining folds.
    HeldOutFolds { folds: usize },
}

/// Held-out uncertainty for each training sample via `folds`-fold training.
pub fn held_out_uncertainty(
    train: &Dataset,
    val: &Dataset,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    folds: usize,
) -> Result<Vec<f64>> {
    if folds < 2 || folds > train.len() {
        return Err(Error::invalid(
            "folds",
            format!("{folds} folds for {} samples", train.len()),
        ));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_F01D));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; train.len()];
        for (rank, &i) in order.iter().enumerate() {
            f[i] = rank % folds;
        }
        f
    };
    let per_fold = (0..folds)
        .into_par_iter()
        .map(|k| {
            let fit_idx: Vec<usize> = (0..train.len()).filter(|&i| fold_of[i] != k).collect();
            let out_idx: Vec<usize> = (0..train.len()).filter(|&i| fold_of[i] == k).collect();
            let model = train_model(&train.subset(&fit_idx, "fold fit"), val, spec, cfg)?;
            let scored = score_dataset(&model, &train.subset(&out_idx, "fold held out"))?;
            Ok(out_idx.into_iter().zip(scored.uncertainties).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut u = vec![0.0; train.len()];
    for (i, v) in per_fold.into_iter().flatten() {
        u[i] = v;
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapRun {
    pub epsilon: f64,
    /// `None` for `ε = 0`, which reuses the base model.
    pub plan: Option<BootstrapPlan>,
    pub model: TrainedModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutcome {
    pub base: TrainedModel,
    /// Per-sample uncertainty used for filtering, aligned with the training set.
    pub uncertainty: Vec<f64>,
    pub runs: Vec<BootstrapRun>,
}

/// `[AUC; F1⁺; F1⁻]` of one retrained model on a test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub epsilon: f64,
    pub n_train: usize,
    pub auc: f64,
    pub f1_pos: f64,
    pub f1_neg: f64,
}

impl BootstrapOutcome {
    /// Metrics of every run on `test` at decision threshold 0.5.
    pub fn evaluate(&self, test: &Dataset) -> Result<Vec<MetricTriple>> {
        self.runs
            .iter()
            .map(|run| {
                let s = score_dataset(&run.model, test)?;
                let f1 = f1_scores(&s, 0.5);
                Ok(MetricTriple {
                    epsilon: run.epsilon,
                    n_train: run.plan.as_ref().map_or(self.uncertainty.len(), |p| p.kept_ids.len()),
                    auc: roc_auc(&s)?,
                    f1_pos: f1.f1_pos,
                    f1_neg: f1.f1_neg,
                })
            })
            .collect()
    }
}

/// Filter with an already trained base model and retrain from scratch on
/// each `D_ε` with the same configuration.
pub fn bootstrap_from_base(
    base: TrainedModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    epsilons: &[f64],
    source: UncertaintySource,
) -> Result<BootstrapOutcome> {
    if epsilons.is_empty() {
        return Err(Error::Empty("epsilon list"));
    }
    let spec = base.spec.clone();
    let uncertainty = match source {
        UncertaintySource::InSample => score_dataset(&base, train)?.uncertainties,
        UncertaintySource::HeldOutFolds { folds } => held_out_uncertainty(train, val, &spec, cfg, folds)?,
    };
    let runs = epsilons
        .par_iter()
        .map(|&eps| {
            if eps == 0.0 {
                return Ok(BootstrapRun {
                    epsilon: 0.0,
                    plan: None,
                    model: base.clone(),
                });
            }
            let plan = bootstrap_plan_from_uncertainty(train, &uncertainty, eps)?;
            let keep: BTreeSet<u64> = plan.kept_ids.iter().copied().collect();
            let subset = train.retain_ids(&keep, &format!("bootstrap eps={eps}"));
            let model = train_model(&subset, val, &spec, cfg)?;
            Ok(BootstrapRun {
                epsilon: eps,
                plan: Some(plan),
                model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BootstrapOutcome {
        base,
        uncertainty,
        runs,
    })
}

/// Train a base model, then filter and retrain for each `ε`.
pub fn bootstrap_retrain(
    train: &Dataset,
    val: &Dataset,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    epsilons: &[f64],
    source: UncertaintySource,
) -> Result<BootstrapOutcome> {
    let base = train_model(train, val, spec, cfg)?;
    bootstrap_from_base(base, train, val, cfg, epsilons, source)
}
