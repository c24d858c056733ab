//! Partial-label evaluation: annotated-only average precision, mean balanced
//! accuracy, and top-K precision/recall, with head/medium/tail and per-type
//! breakdowns.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetStats;
use crate::error::{Result, SconeError};
use crate::taxonomy::{AttributeVocabulary, MISSING, NEG, POS};

/// Scores and partial labels for one evaluation pass. Each row is one
/// instance; labels take values {1, 0, -1}.
#[derive(Debug, Clone)]
pub struct EvalTable {
    pub scores: Array2<f64>,
    pub labels: Array2<i8>,
    pub instance_image_id: Vec<String>,
}

impl EvalTable {
    pub fn validate(&self) -> Result<()> {
        if self.scores.dim() != self.labels.dim() {
            return Err(SconeError::ShapeError(format!(
                "scores {:?} vs labels {:?}",
                self.scores.dim(),
                self.labels.dim()
            )));
        }
        if self.scores.iter().any(|v| !v.is_finite()) {
            return Err(SconeError::ShapeError("non-finite score".into()));
        }
        Ok(())
    }
}

/// Full evaluation summary. `per_class_ap` is None for classes with no
/// annotated positive (excluded from every mean, listed in `notes`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub map: f64,
    pub ma: f64,
    pub mr_at_k: f64,
    pub f1_at_k: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub group_map: BTreeMap<String, f64>,
    pub k: usize,
    pub ma_threshold: f64,
    pub head_min: u64,
    pub tail_max: u64,
    pub notes: Vec<String>,
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "mAP      {:.4}", self.map)?;
        writeln!(f, "mA       {:.4} (threshold {})", self.ma, self.ma_threshold)?;
        writeln!(f, "mR@{:<3}  {:.4}", self.k, self.mr_at_k)?;
        writeln!(f, "F1@{:<3}  {:.4}", self.k, self.f1_at_k)?;
        for (group, value) in &self.group_map {
            writeln!(f, "mAP[{group}] {value:.4}")?;
        }
        for note in &self.notes {
            writeln!(f, "note: {note}")?;
        }
        Ok(())
    }
}

/// Row order for ranking: descending score, ties broken by ascending index.
fn ranked_indices(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
    });
    order
}

/// Average precision over annotated entries only; None when the class has no
/// annotated positive.
pub fn average_precision(scores: &[f64], labels: &[i8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let mut kept_scores = Vec::new();
    let mut kept_labels = Vec::new();
    for (&s, &l) in scores.iter().zip(labels.iter()) {
        if l != MISSING {
            kept_scores.push(s);
            kept_labels.push(l);
        }
    }
    let positives = kept_labels.iter().filter(|&&l| l == POS).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &idx) in ranked_indices(&kept_scores).iter().enumerate() {
        if kept_labels[idx] == POS {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(ap / positives as f64)
}

/// Mean of the defined per-class APs, plus means over each named class group.
pub fn mean_average_precision(
    table: &EvalTable,
    groups: &BTreeMap<String, Vec<usize>>,
) -> Result<(f64, Vec<Option<f64>>, BTreeMap<String, f64>)> {
    table.validate()?;
    let num_classes = table.scores.ncols();
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let scores: Vec<f64> = table.scores.column(c).to_vec();
        let labels: Vec<i8> = table.labels.column(c).to_vec();
        per_class.push(average_precision(&scores, &labels));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(SconeError::EmptyEvaluation);
    }
    let map = defined.iter().sum::<f64>() / defined.len() as f64;
    let mut group_map = BTreeMap::new();
    for (name, members) in groups {
        let values: Vec<f64> =
            members.iter().filter_map(|&c| per_class.get(c).copied().flatten()).collect();
        if !values.is_empty() {
            group_map.insert(name.clone(), values.iter().sum::<f64>() / values.len() as f64);
        }
    }
    Ok((map, per_class, group_map))
}

/// Mean balanced accuracy at a score threshold; classes missing annotated
/// positives or negatives are excluded and listed.
pub fn mean_balanced_accuracy(
    table: &EvalTable,
    threshold: f64,
) -> Result<(f64, Vec<usize>)> {
    table.validate()?;
    let mut values = Vec::new();
    let mut excluded = Vec::new();
    for c in 0..table.scores.ncols() {
        let (mut tp, mut p, mut tn, mut n) = (0u64, 0u64, 0u64, 0u64);
        for (row, &label) in table.labels.column(c).iter().enumerate() {
            let predicted_positive = table.scores[[row, c]] > threshold;
            match label {
                POS => {
                    p += 1;
                    if predicted_positive {
                        tp += 1;
                    }
                }
                NEG => {
                    n += 1;
                    if !predicted_positive {
                        tn += 1;
                    }
                }
                _ => {}
            }
        }
        if p == 0 || n == 0 {
            excluded.push(c);
        } else {
            values.push((tp as f64 / p as f64 + tn as f64 / n as f64) / 2.0);
        }
    }
    if values.is_empty() {
        return Err(SconeError::EmptyEvaluation);
    }
    Ok((values.iter().sum::<f64>() / values.len() as f64, excluded))
}

/// Overall and per-class precision/recall at top-K predictions per instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TopkMetrics {
    pub mr_at_k: f64,
    pub f1_at_k: f64,
    pub ov_precision: f64,
    pub ov_recall: f64,
    pub pc_precision: f64,
    pub pc_f1: f64,
}

/// Per instance, the K highest-scoring classes become positive predictions;
/// predictions on classes labeled -1 for that instance are then dropped
/// (selection happens before the annotated-only filter).
pub fn topk_metrics(table: &EvalTable, k: usize) -> Result<TopkMetrics> {
    table.validate()?;
    if k < 1 {
        return Err(SconeError::InvalidConfig("K must be >= 1".into()));
    }
    let num_classes = table.scores.ncols();
    let mut tp = vec![0u64; num_classes];
    let mut predicted = vec![0u64; num_classes];
    let mut positives = vec![0u64; num_classes];
    for row in 0..table.scores.nrows() {
        let scores: Vec<f64> = table.scores.row(row).to_vec();
        for &c in ranked_indices(&scores).iter().take(k.min(num_classes)) {
            match table.labels[[row, c]] {
                MISSING => {} // prediction ignored on unannotated entries
                label => {
                    predicted[c] += 1;
                    if label == POS {
                        tp[c] += 1;
                    }
                }
            }
        }
        for c in 0..num_classes {
            if table.labels[[row, c]] == POS {
                positives[c] += 1;
            }
        }
    }
    let total_tp: u64 = tp.iter().sum();
    let total_pred: u64 = predicted.iter().sum();
    let total_pos: u64 = positives.iter().sum();
    if total_pos == 0 {
        return Err(SconeError::EmptyEvaluation);
    }
    let ov_precision = if total_pred == 0 { 0.0 } else { total_tp as f64 / total_pred as f64 };
    let ov_recall = total_tp as f64 / total_pos as f64;
    let f1_at_k = if ov_precision + ov_recall == 0.0 {
        0.0
    } else {
        2.0 * ov_precision * ov_recall / (ov_precision + ov_recall)
    };
    let recalls: Vec<f64> = (0..num_classes)
        .filter(|&c| positives[c] > 0)
        .map(|c| tp[c] as f64 / positives[c] as f64)
        .collect();
    let mr_at_k = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let precisions: Vec<f64> = (0..num_classes)
        .filter(|&c| predicted[c] > 0)
        .map(|c| tp[c] as f64 / predicted[c] as f64)
        .collect();
    let pc_precision = if precisions.is_empty() {
        0.0
    } else {
        precisions.iter().sum::<f64>() / precisions.len() as f64
    };
    let pc_f1 = if pc_precision + mr_at_k == 0.0 {
        0.0
    } else {
        2.0 * pc_precision * mr_at_k / (pc_precision + mr_at_k)
    };
    Ok(TopkMetrics { mr_at_k, f1_at_k, ov_precision, ov_recall, pc_precision, pc_f1 })
}

/// Head/medium/tail split on training positive counts, plus one group per
/// attribute type from the vocabulary.
pub fn group_classes(
    stats: &DatasetStats,
    vocab: &AttributeVocabulary,
    head_min: u64,
    tail_max: u64,
) -> BTreeMap<String, Vec<usize>> {
    assert!(head_min > tail_max, "head_min must exceed tail_max");
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (c, &n_pos) in stats.n_pos.iter().enumerate() {
        let bucket = if n_pos >= head_min {
            "head"
        } else if n_pos < tail_max {
            "tail"
        } else {
            "medium"
        };
        groups.entry(bucket.to_string()).or_default().push(c);
        groups.entry(vocab.type_of(c).to_string()).or_default().push(c);
    }
    groups
}

/// One-call evaluation producing the full report.
pub fn evaluate_table(
    table: &EvalTable,
    vocab: &AttributeVocabulary,
    train_stats: &DatasetStats,
    k: usize,
    ma_threshold: f64,
    head_min: u64,
    tail_max: u64,
) -> Result<MetricReport> {
    let groups = group_classes(train_stats, vocab, head_min, tail_max);
    let (map, per_class_ap, group_map) = mean_average_precision(table, &groups)?;
    let (ma, ma_excluded) = mean_balanced_accuracy(table, ma_threshold)?;
    let topk = topk_metrics(table, k)?;
    let mut notes = Vec::new();
    let undefined: Vec<usize> = per_class_ap
        .iter()
        .enumerate()
        .filter(|(_, ap)| ap.is_none())
        .map(|(c, _)| c)
        .collect();
    if !undefined.is_empty() {
        notes.push(format!("classes without annotated positives excluded from mAP: {undefined:?}"));
    }
    if !ma_excluded.is_empty() {
        notes.push(format!("classes excluded from mA (missing positives or negatives): {ma_excluded:?}"));
    }
    Ok(MetricReport {
        map,
        ma,
        mr_at_k: topk.mr_at_k,
        f1_at_k: topk.f1_at_k,
        per_class_ap,
        group_map,
        k,
        ma_threshold,
        head_min,
        tail_max,
        notes,
    })
}
