//! Clip-aggregated prediction and the evaluation metrics.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{assemble, LabelMode, VideoRecord};
use crate::error::{Error, Result};
use crate::model::{aggregate_clips, forward, GcnModel};

/// Scores for one video: the elementwise max of the logits of its clips.
pub fn predict(model: &GcnModel, record: &VideoRecord, clips: usize) -> Result<Vec<f64>> {
    let logits = record
        .clips(clips)?
        .iter()
        .map(|clip| Ok(forward(model, &assemble(clip, &model.transforms)?, None)?.logits))
        .collect::<Result<Vec<_>>>()?;
    aggregate_clips(&logits)
}

/// Fraction of rows whose label is among the `k` highest scores. Ties
/// resolve toward the lower class index.
pub fn top_k_accuracy(scores: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Length {
            op: "top_k_accuracy",
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Empty { op: "top_k_accuracy" });
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &y)| {
            let sy = s[y];
            let better = s
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > sy || (v == sy && j < y))
                .count();
            better < k
        })
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// All-points average precision: the mean, over positives, of precision at
/// each positive's rank. Rows are ranked by descending score, ties keeping
/// input order. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total = positive.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Per-class AP (`None` for classes without positives) and their mean over
/// the classes that have positives.
pub fn mean_average_precision(scores: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(Option<f64>, Vec<Option<f64>>)> {
    if scores.len() != targets.len() {
        return Err(Error::Length {
            op: "mean_average_precision",
            left: scores.len(),
            right: targets.len(),
        });
    }
    let classes = scores.first().map_or(0, Vec::len);
    let per_class: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let p: Vec<bool> = targets.iter().map(|t| t[c] > 0.5).collect();
            average_precision(&s, &p)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok((map, per_class))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub videos: usize,
    pub clips: usize,
    pub mode: LabelMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_class_ap: Vec<Option<f64>>,
}

/// Scores every record (in parallel) and reports top-1/top-5 accuracy for
/// single-label data or mAP for multi-label data.
pub fn evaluate(model: &GcnModel, records: &[VideoRecord], clips: usize, mode: LabelMode) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    let scores: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| predict(model, r, clips))
        .collect::<Result<_>>()?;
    let classes = model.config.classes;
    let mut report = EvalReport {
        videos: records.len(),
        clips,
        mode,
        top1: None,
        top5: None,
        map: None,
        per_class_ap: Vec::new(),
    };
    match mode {
        LabelMode::Single => {
            let labels: Vec<usize> = records
                .iter()
                .map(|r| {
                    r.label
                        .class()
                        .ok_or_else(|| Error::data(&r.video_id, "expected a single class label"))
                })
                .collect::<Result<_>>()?;
            if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
                return Err(Error::TargetOutOfRange { target: bad, classes });
            }
            report.top1 = Some(top_k_accuracy(&scores, &labels, 1)?);
            report.top5 = Some(top_k_accuracy(&scores, &labels, 5)?);
        }
        LabelMode::Multi => {
            let targets: Vec<Vec<f64>> = records
                .iter()
                .map(|r| r.label.to_multi_hot(classes))
                .collect::<Result<_>>()?;
            let (map, per_class) = mean_average_precision(&scores, &targets)?;
            report.map = map;
            report.per_class_ap = per_class;
        }
    }
    Ok(report)
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Class index of every record, or `None` if any label is multi-hot.
pub fn class_labels(records: &[VideoRecord]) -> Option<Vec<usize>> {
    records.iter().map(|r| r.label.class()).collect()
}
