//! Agreement metrics between reference labels and predictions, plus the
//! soft-label BCE loss used to train the student.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no score pairs")]
    EmptyInput,
    #[error("length mismatch: {0} references vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("value {value} for {key} outside [0, 1]")]
    OutOfRange { key: String, value: f64 },
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("key {key} present in {present_in} but missing from {missing_from}")]
    MissingKey {
        key: String,
        present_in: &'static str,
        missing_from: &'static str,
    },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("epsilon must lie in (0, 0.5), got {0}")]
    InvalidEpsilon(f64),
}

/// `(tile_id, class)`.
pub type ScoreKey = (String, String);

/// Aligned reference/prediction pairs keyed by tile and class.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedScores {
    keys: Vec<ScoreKey>,
    reference: Vec<f64>,
    predicted: Vec<f64>,
}

fn key_str(k: &ScoreKey) -> String {
    format!("{}/{}", k.0, k.1)
}

impl PairedScores {
    pub fn new(keys: Vec<ScoreKey>, reference: Vec<f64>, predicted: Vec<f64>) -> Result<Self, EvalError> {
        if reference.len() != predicted.len() || keys.len() != reference.len() {
            return Err(EvalError::LengthMismatch(reference.len(), predicted.len()));
        }
        let mut seen = BTreeSet::new();
        for (i, k) in keys.iter().enumerate() {
            if !seen.insert(k) {
                return Err(EvalError::DuplicateKey(key_str(k)));
            }
            for v in [reference[i], predicted[i]] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(EvalError::OutOfRange { key: key_str(k), value: v });
                }
            }
        }
        Ok(Self {
            keys,
            reference,
            predicted,
        })
    }

    /// Pairs two keyed score tables. Every key must appear in both; the first
    /// missing key in sorted order is reported.
    pub fn align(
        reference: &BTreeMap<ScoreKey, f64>,
        predicted: &BTreeMap<ScoreKey, f64>,
    ) -> Result<Self, EvalError> {
        if let Some(k) = reference.keys().find(|k| !predicted.contains_key(*k)) {
            return Err(EvalError::MissingKey {
                key: key_str(k),
                present_in: "labels",
                missing_from: "predictions",
            });
        }
        if let Some(k) = predicted.keys().find(|k| !reference.contains_key(*k)) {
            return Err(EvalError::MissingKey {
                key: key_str(k),
                present_in: "predictions",
                missing_from: "labels",
            });
        }
        let keys: Vec<ScoreKey> = reference.keys().cloned().collect();
        let refs = keys.iter().map(|k| reference[k]).collect();
        let preds = keys.iter().map(|k| predicted[k]).collect();
        Self::new(keys, refs, preds)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[ScoreKey] {
        &self.keys
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    fn nonempty(&self) -> Result<(), EvalError> {
        if self.is_empty() {
            Err(EvalError::EmptyInput)
        } else {
            Ok(())
        }
    }
}

pub fn rmse(pairs: &PairedScores) -> Result<f64, EvalError> {
    pairs.nonempty()?;
    let sse: f64 = pairs.reference.iter().zip(&pairs.predicted).map(|(r, p)| (r - p).powi(2)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

pub fn mae(pairs: &PairedScores) -> Result<f64, EvalError> {
    pairs.nonempty()?;
    let sae: f64 = pairs.reference.iter().zip(&pairs.predicted).map(|(r, p)| (r - p).abs()).sum();
    Ok(sae / pairs.len() as f64)
}

pub const DEFAULT_KL_EPSILON: f64 = 1e-7;

/// Mean Bernoulli KL divergence `KL(reference || predicted)` per pair, with
/// both sides clamped to `[epsilon, 1 - epsilon]`.
pub fn binary_kl(pairs: &PairedScores, epsilon: f64) -> Result<f64, EvalError> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(EvalError::InvalidEpsilon(epsilon));
    }
    pairs.nonempty()?;
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    let total: f64 = pairs
        .reference
        .iter()
        .zip(&pairs.predicted)
        .map(|(&p, &q)| {
            let p = p.clamp(epsilon, 1.0 - epsilon);
            let q = q.clamp(epsilon, 1.0 - epsilon);
            term(p, q) + term(1.0 - p, 1.0 - q)
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

impl std::str::FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            other => Err(format!("unknown averaging {other:?} (micro|macro)")),
        }
    }
}

/// Mann-Whitney AUC with average ranks for tied scores.
///
/// Returns `None` when either class is empty.
pub fn auc_from_scores(labels: &[bool], scores: &[f64]) -> Option<f64> {
    debug_assert_eq!(labels.len(), scores.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_block = order[i..j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += rank * pos_in_block as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

pub const DEFAULT_POSITIVE_THRESHOLD: f64 = 0.5;

/// ROC-AUC of predictions against references thresholded at
/// `positive_threshold` (reference `>=` threshold is positive). Micro pools all
/// pairs; macro averages per-class AUCs over classes with both outcomes.
pub fn roc_auc(pairs: &PairedScores, positive_threshold: f64, averaging: Averaging) -> Result<f64, EvalError> {
    pairs.nonempty()?;
    let labels: Vec<bool> = pairs.reference.iter().map(|&r| r >= positive_threshold).collect();
    match averaging {
        Averaging::Micro => auc_from_scores(&labels, &pairs.predicted).ok_or_else(|| {
            EvalError::DegenerateLabels("pooled references need both positives and negatives".into())
        }),
        Averaging::Macro => {
            let mut by_class: BTreeMap<&str, (Vec<bool>, Vec<f64>)> = BTreeMap::new();
            for (i, (_, class)) in pairs.keys.iter().enumerate() {
                let e = by_class.entry(class.as_str()).or_default();
                e.0.push(labels[i]);
                e.1.push(pairs.predicted[i]);
            }
            let aucs: Vec<f64> = by_class
                .values()
                .filter_map(|(l, s)| auc_from_scores(l, s))
                .collect();
            if aucs.is_empty() {
                return Err(EvalError::DegenerateLabels(
                    "no class has both positive and negative references".into(),
                ));
            }
            Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// BCE-with-logits for one soft target, `max(z, 0) - z * P + ln(1 + e^-|z|)`.
pub fn bce_with_logits(target: f64, logit: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Derivative of [`bce_with_logits`] with respect to the logit.
pub fn bce_with_logits_grad(target: f64, logit: f64) -> f64 {
    sigmoid(logit) - target
}

/// Mean soft-label BCE over aligned targets and raw student logits.
pub fn bce_soft_loss(targets: &[f64], logits: &[f64]) -> Result<f64, EvalError> {
    if targets.len() != logits.len() {
        return Err(EvalError::LengthMismatch(targets.len(), logits.len()));
    }
    if targets.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let Some(&t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(EvalError::OutOfRange { key: "target".into(), value: t });
    }
    let sum: f64 = targets.iter().zip(logits).map(|(&t, &z)| bce_with_logits(t, z)).sum();
    Ok(sum / targets.len() as f64)
}

/// Metric report written as `key: value` lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_pairs: usize,
    pub rmse: f64,
    pub mae: f64,
    pub kl: f64,
    pub auc_micro: Option<f64>,
    pub auc_macro: Option<f64>,
    pub bce: Option<f64>,
}

impl MetricsReport {
    /// Computes every metric; AUCs are `None` when their labels are degenerate.
    pub fn compute(pairs: &PairedScores, positive_threshold: f64, epsilon: f64) -> Result<Self, EvalError> {
        Ok(Self {
            n_pairs: pairs.len(),
            rmse: rmse(pairs)?,
            mae: mae(pairs)?,
            kl: binary_kl(pairs, epsilon)?,
            auc_micro: roc_auc(pairs, positive_threshold, Averaging::Micro).ok(),
            auc_macro: roc_auc(pairs, positive_threshold, Averaging::Macro).ok(),
            bce: None,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.10}"));
        writeln!(f, "n_pairs: {}", self.n_pairs)?;
        writeln!(f, "rmse: {:.10}", self.rmse)?;
        writeln!(f, "mae: {:.10}", self.mae)?;
        writeln!(f, "kl: {:.10}", self.kl)?;
        writeln!(f, "auc_micro: {}", opt(self.auc_micro))?;
        writeln!(f, "auc_macro: {}", opt(self.auc_macro))?;
        if let Some(b) = self.bce {
            writeln!(f, "bce: {b:.10}")?;
        }
        Ok(())
    }
}
