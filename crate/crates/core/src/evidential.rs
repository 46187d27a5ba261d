//! Evidence → beta opinion mapping and the evidential training objective.
//!
//! A model emits two nonnegative evidence values `(e⁺, e⁻)`. They parameterise
//! `Beta(α, β)` with `α = e⁺ + 1`, `β = e⁻ + 1`. With `E = α + β` the belief
//! masses are `b± = e± / E`, the uncertainty mass is `u = 2 / E` and the
//! expected class probabilities are `p⁺ = α / E`, `p⁻ = β / E`.
//!
//! The per-sample loss is the closed-form Bayes risk of the squared error
//! under that beta (`data_loss`) plus `λ` times a KL term pulling a clamped
//! copy of the beta towards the uniform one (`reg_loss`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{kl_to_uniform_grad_raw, kl_to_uniform_raw};

/// Evidence values below this are treated as exactly zero.
pub const EVIDENCE_FLOOR: f64 = 1e-12;

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Negative => 0.0,
            Label::Positive => 1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl From<bool> for Label {
    fn from(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            _ => Err(Error::invalid("label", format!("{v} is not 0 or 1"))),
        }
    }
}

/// Per-class evidence `(e⁺, e⁻)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    pos: f64,
    neg: f64,
}

impl Evidence {
    pub fn new(pos: f64, neg: f64) -> Result<Self> {
        for (field, v) in [("e_pos", pos), ("e_neg", neg)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(
                    field,
                    format!("evidence must be finite and >= 0, got {v}"),
                ));
            }
        }
        let floor = |v: f64| if v < EVIDENCE_FLOOR { 0.0 } else { v };
        Ok(Self {
            pos: floor(pos),
            neg: floor(neg),
        })
    }

    pub fn pos(&self) -> f64 {
        self.pos
    }

    pub fn neg(&self) -> f64 {
        self.neg
    }

    /// Arithmetic mean of several evidence pairs (ensemble averaging).
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Evidence>) -> Result<Self> {
        let (mut p, mut n, mut k) = (0.0, 0.0, 0usize);
        for e in items {
            p += e.pos;
            n += e.neg;
            k += 1;
        }
        if k == 0 {
            return Err(Error::Empty("evidence list"));
        }
        Evidence::new(p / k as f64, n / k as f64)
    }
}

/// A binary subjective-logic opinion backed by `Beta(α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaOpinion {
    pub alpha: f64,
    pub beta: f64,
    pub belief_pos: f64,
    pub belief_neg: f64,
    pub uncertainty: f64,
    pub prob_pos: f64,
    pub prob_neg: f64,
    pub total_evidence: f64,
}

impl BetaOpinion {
    /// Opinion for beta parameters `α, β >= 1` (evidence `α − 1`, `β − 1`).
    pub fn from_params(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 1.0 && beta >= 1.0) {
            return Err(Error::invalid(
                "beta parameters",
                format!("need alpha, beta >= 1, got ({alpha}, {beta})"),
            ));
        }
        Ok(opinion_from_evidence(Evidence::new(alpha - 1.0, beta - 1.0)?))
    }

    pub fn evidence(&self) -> Evidence {
        Evidence {
            pos: self.alpha - 1.0,
            neg: self.beta - 1.0,
        }
    }
}

pub fn opinion_from_evidence(ev: Evidence) -> BetaOpinion {
    let alpha = ev.pos + 1.0;
    let beta = ev.neg + 1.0;
    let total = alpha + beta;
    let belief_pos = ev.pos / total;
    let belief_neg = ev.neg / total;
    BetaOpinion {
        alpha,
        beta,
        belief_pos,
        belief_neg,
        uncertainty: 2.0 / total,
        prob_pos: alpha / total,
        prob_neg: beta / total,
        total_evidence: total,
    }
}

/// Class label together with its one-hot vector in `(p⁺, p⁻)` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledTarget {
    pub label: Label,
    pub one_hot: (f64, f64),
}

impl LabeledTarget {
    pub fn new(label: Label) -> Self {
        let y = label.as_f64();
        Self {
            label,
            one_hot: (y, 1.0 - y),
        }
    }
}

impl From<Label> for LabeledTarget {
    fn from(label: Label) -> Self {
        Self::new(label)
    }
}

/// Which beta parameter the KL regulariser resets to one before comparing
/// with the uniform beta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerMode {
    /// `(1, β)` for `y = 0` and `(α, 1)` for `y = 1`: the parameter of the
    /// assigned class is kept and penalised.
    #[default]
    KeepAssigned,
    /// `(α, 1)` for `y = 0` and `(1, β)` for `y = 1`: only evidence for the
    /// wrong class is penalised.
    KeepMisleading,
}

impl RegularizerMode {
    /// True when `α` survives the clamp (and `β` is reset to one).
    pub fn keeps_alpha(self, label: Label) -> bool {
        match self {
            RegularizerMode::KeepAssigned => label.is_positive(),
            RegularizerMode::KeepMisleading => !label.is_positive(),
        }
    }

    /// `(α̃, β̃)` for the given opinion parameters and label.
    pub fn clamp(self, alpha: f64, beta: f64, label: Label) -> (f64, f64) {
        if self.keeps_alpha(label) {
            (alpha, 1.0)
        } else {
            (1.0, beta)
        }
    }
}

/// Annealed KL coefficient `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealedWeight {
    pub lambda_now: f64,
    pub lambda_zero: f64,
    pub lambda_max: f64,
    pub anneal_epochs: usize,
}

impl Default for AnnealedWeight {
    fn default() -> Self {
        Self {
            lambda_now: 0.1,
            lambda_zero: 0.1,
            lambda_max: 1.0,
            anneal_epochs: 10,
        }
    }
}

impl AnnealedWeight {
    /// Schedule starting at `lambda_zero` (epoch 0).
    pub fn new(lambda_zero: f64, lambda_max: f64, anneal_epochs: usize) -> Result<Self> {
        if !(lambda_zero.is_finite() && lambda_max.is_finite() && lambda_zero >= 0.0) {
            return Err(Error::invalid("lambda", "coefficients must be finite and >= 0"));
        }
        if lambda_zero > lambda_max {
            return Err(Error::invalid(
                "lambda_zero",
                format!("{lambda_zero} exceeds lambda_max {lambda_max}"),
            ));
        }
        let w = Self {
            lambda_now: lambda_zero,
            lambda_zero,
            lambda_max,
            anneal_epochs,
        };
        Ok(anneal(w, 0))
    }

    /// Constant coefficient, mostly for tests.
    pub fn constant(lambda: f64) -> Self {
        Self {
            lambda_now: lambda,
            lambda_zero: lambda,
            lambda_max: lambda,
            anneal_epochs: 0,
        }
    }

    /// Same schedule pinned at `lambda_max`.
    pub fn at_max(&self) -> Self {
        Self {
            lambda_now: self.lambda_max,
            ..*self
        }
    }
}

/// Linear ramp from `lambda_zero` to `lambda_max` over `anneal_epochs`.
pub fn anneal(w: AnnealedWeight, epoch: usize) -> AnnealedWeight {
    let lambda_now = if w.anneal_epochs == 0 {
        w.lambda_max
    } else {
        let t = epoch as f64 / w.anneal_epochs as f64;
        (w.lambda_zero + (w.lambda_max - w.lambda_zero) * t).min(w.lambda_max)
    };
    AnnealedWeight { lambda_now, ..w }
}

/// Expected squared error of `(p⁺, p⁻)` against the one-hot target under the
/// opinion's beta distribution.
pub fn data_loss(op: &BetaOpinion, target: &LabeledTarget) -> f64 {
    let (y_pos, y_neg) = target.one_hot;
    let p = op.prob_pos;
    let q = op.prob_neg;
    (y_pos - p).powi(2) + (y_neg - q).powi(2) + (p * (1.0 - p) + q * (1.0 - q)) / (op.total_evidence + 1.0)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Direct Monte-Carlo evaluation of the Bayes risk that [`data_loss`] gives in
/// closed form: draw `p ~ Beta(α, β)` and average `‖ȳ − (p, 1 − p)‖²`.
pub fn data_loss_mc_oracle(
    op: &BetaOpinion,
    target: &LabeledTarget,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples < 2 {
        return Err(Error::invalid("n_samples", "need at least two draws"));
    }
    let dist = Beta::new(op.alpha, op.beta).map_err(|e| Error::invalid("beta parameters", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y_pos, y_neg) = target.one_hot;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        let p: f64 = dist.sample(&mut rng);
        let v = (y_pos - p).powi(2) + (y_neg - (1.0 - p)).powi(2);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        std_err: (var / n).sqrt(),
    })
}

/// KL of the clamped beta `(α̃, β̃)` to the uniform beta.
pub fn reg_loss(op: &BetaOpinion, target: &LabeledTarget, mode: RegularizerMode) -> f64 {
    let (a, b) = mode.clamp(op.alpha, op.beta, target.label);
    kl_to_uniform_raw(a, b)
}

/// Batch loss, summed over samples and as a per-sample mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTotals {
    pub sum: f64,
    pub mean: f64,
}

pub fn total_loss(
    ops: &[BetaOpinion],
    targets: &[LabeledTarget],
    w: &AnnealedWeight,
    mode: RegularizerMode,
) -> Result<LossTotals> {
    if ops.len() != targets.len() {
        return Err(Error::Length {
            left: ops.len(),
            right: targets.len(),
        });
    }
    if ops.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let sum: f64 = ops
        .iter()
        .zip(targets)
        .map(|(op, t)| data_loss(op, t) + w.lambda_now * reg_loss(op, t, mode))
        .sum();
    Ok(LossTotals {
        sum,
        mean: sum / ops.len() as f64,
    })
}

/// Loss of one sample and its partial derivatives with respect to `(e⁺, e⁻)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLoss {
    pub loss: f64,
    pub d_pos: f64,
    pub d_neg: f64,
}

pub fn sample_loss(ev: Evidence, target: &LabeledTarget, lambda: f64, mode: RegularizerMode) -> SampleLoss {
    let op = opinion_from_evidence(ev);
    let y = target.label.as_f64();
    let (alpha, beta, e) = (op.alpha, op.beta, op.total_evidence);
    let p = op.prob_pos;

    // data_loss reduces to 2(y − p)² + 2p(1 − p)/(E + 1) with p = α/E.
    let d_p = -4.0 * (y - p) + 2.0 * (1.0 - 2.0 * p) / (e + 1.0);
    let d_e = -2.0 * p * (1.0 - p) / ((e + 1.0) * (e + 1.0));
    let e2 = e * e;
    let mut d_pos = d_p * beta / e2 + d_e;
    let mut d_neg = -d_p * alpha / e2 + d_e;

    let (a, b) = mode.clamp(alpha, beta, target.label);
    let reg = kl_to_uniform_raw(a, b);
    let (ga, gb) = kl_to_uniform_grad_raw(a, b);
    // Only the parameter that was not reset to one depends on the evidence.
    if mode.keeps_alpha(target.label) {
        d_pos += lambda * ga;
    } else {
        d_neg += lambda * gb;
    }

    SampleLoss {
        loss: data_loss(&op, target) + lambda * reg,
        d_pos,
        d_neg,
    }
}

/// Analytic `(∂L/∂e⁺, ∂L/∂e⁻)` of one summand of the total loss at `w.lambda_now`.
pub fn loss_gradient_wrt_evidence(
    ev: Evidence,
    target: &LabeledTarget,
    w: &AnnealedWeight,
    mode: RegularizerMode,
) -> (f64, f64) {
    let s = sample_loss(ev, target, w.lambda_now, mode);
    (s.d_pos, s.d_neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(a: f64, b: f64) -> BetaOpinion {
        BetaOpinion::from_params(a, b).unwrap()
    }

    fn pos() -> LabeledTarget {
        Label::Positive.into()
    }

    fn neg() -> LabeledTarget {
        Label::Negative.into()
    }

    #[test]
    fn opinion_examples() {
        let o = opinion_from_evidence(Evidence::new(0.0, 0.0).unwrap());
        assert_eq!((o.alpha, o.beta, o.uncertainty, o.prob_pos), (1.0, 1.0, 1.0, 0.5));

        let o = opinion_from_evidence(Evidence::new(8.0, 0.0).unwrap());
        assert_eq!(o.total_evidence, 10.0);
        assert!((o.belief_pos - 0.8).abs() < 1e-15);
        assert_eq!(o.belief_neg, 0.0);
        assert!((o.uncertainty - 0.2).abs() < 1e-15);
        assert!((o.prob_pos - 0.9).abs() < 1e-15);

        let o = opinion_from_evidence(Evidence::new(49.0, 49.0).unwrap());
        assert!((o.uncertainty - 0.02).abs() < 1e-15);
        assert_eq!(o.prob_pos, 0.5);
    }

    #[test]
    fn evidence_validation_and_floor() {
        assert!(Evidence::new(f64::NAN, 0.0).is_err());
        assert!(Evidence::new(0.0, f64::INFINITY).is_err());
        assert!(Evidence::new(-1.0, 0.0).is_err());
        let e = Evidence::new(1e-13, 5e-13).unwrap();
        assert_eq!((e.pos(), e.neg()), (0.0, 0.0));
        assert_eq!(opinion_from_evidence(e).alpha, 1.0);
    }

    #[test]
    fn data_loss_examples() {
        assert!((data_loss(&op(1.0, 1.0), &pos()) - 2.0 / 3.0).abs() < 1e-12);
        assert!((data_loss(&op(9.0, 1.0), &pos()) - 0.036_363_636_4).abs() < 1e-10);
        for a in [1.0, 2.5, 17.0] {
            assert_eq!(data_loss(&op(a, a), &pos()), data_loss(&op(a, a), &neg()));
        }
    }

    #[test]
    fn data_loss_decreases_with_correct_evidence() {
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let e_pos = k as f64 * 0.5;
            let v = data_loss(&opinion_from_evidence(Evidence::new(e_pos, 3.0).unwrap()), &pos());
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
    }

    #[test]
    fn reg_loss_as_printed() {
        let m = RegularizerMode::KeepAssigned;
        assert_eq!(reg_loss(&op(1.0, 1.0), &neg(), m), 0.0);
        assert_eq!(reg_loss(&op(1.0, 9.0), &pos(), m), 0.0);
        assert!((reg_loss(&op(2.0, 7.0), &pos(), m) - 0.193_147_180_6).abs() < 1e-10);
        assert!((reg_loss(&op(4.0, 3.0), &neg(), m) - 0.431_945_622_0).abs() < 1e-10);
    }

    #[test]
    fn reg_loss_misleading_reading() {
        let m = RegularizerMode::KeepMisleading;
        assert_eq!(reg_loss(&op(5.0, 1.0), &pos(), m), 0.0);
        assert_eq!(reg_loss(&op(1.0, 5.0), &neg(), m), 0.0);
        assert!((reg_loss(&op(2.0, 7.0), &neg(), m) - 0.193_147_180_6).abs() < 1e-10);
        let mut prev = -1.0;
        for k in 0..50 {
            let v = reg_loss(&op(3.0, 1.0 + k as f64), &pos(), m);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn total_loss_composition() {
        let w = AnnealedWeight::constant(0.1);
        let m = RegularizerMode::KeepAssigned;
        let one = total_loss(&[op(1.0, 1.0)], &[pos()], &w, m).unwrap();
        assert!((one.sum - 2.0 / 3.0).abs() < 1e-12);
        let ops = [op(3.0, 2.0), op(1.5, 6.0)];
        let ts = [pos(), neg()];
        let zero = total_loss(&ops, &ts, &AnnealedWeight::constant(0.0), m).unwrap();
        let data: f64 = ops.iter().zip(&ts).map(|(o, t)| data_loss(o, t)).sum();
        assert_eq!(zero.sum, data);
        let two = total_loss(&[op(3.0, 2.0), op(3.0, 2.0)], &[pos(), pos()], &w, m).unwrap();
        let single = total_loss(&[op(3.0, 2.0)], &[pos()], &w, m).unwrap();
        assert_eq!(two.sum, 2.0 * single.sum);
        assert_eq!(two.mean, single.mean);
        assert!(matches!(total_loss(&ops, &ts[..1], &w, m), Err(Error::Length { .. })));
        assert!(total_loss(&[], &[], &w, m).is_err());
    }

    #[test]
    fn anneal_schedule() {
        let w = AnnealedWeight::default();
        assert_eq!(anneal(w, 0).lambda_now, 0.1);
        assert!((anneal(w, 5).lambda_now - 0.55).abs() < 1e-15);
        assert_eq!(anneal(w, 10).lambda_now, 1.0);
        assert_eq!(anneal(w, 250).lambda_now, 1.0);
        let flat = AnnealedWeight { anneal_epochs: 0, ..w };
        assert_eq!(anneal(flat, 0).lambda_now, 1.0);
        assert!(AnnealedWeight::new(2.0, 1.0, 3).is_err());
    }

    #[test]
    fn zero_evidence_gradient_points_towards_label() {
        let ev = Evidence::new(0.0, 0.0).unwrap();
        let (dp, _) = loss_gradient_wrt_evidence(
            ev,
            &pos(),
            &AnnealedWeight::constant(0.0),
            RegularizerMode::KeepAssigned,
        );
        assert!(dp < 0.0);
    }

    #[test]
    fn label_serde_is_numeric() {
        assert_eq!(serde_json::to_string(&Label::Positive).unwrap(), "1");
        let l: Label = serde_json::from_str("0").unwrap();
        assert_eq!(l, Label::Negative);
        assert!(serde_json::from_str::<Label>("2").is_err());
    }
}
