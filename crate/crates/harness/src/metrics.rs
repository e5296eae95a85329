use std::collections::BTreeMap;

use echoseg_core::Mask;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const METRIC_NAMES: [&str; 5] = ["iou", "accuracy", "precision", "recall", "f1"];

/// The five segmentation scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iou: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub const PERFECT: Metrics = Metrics {
        iou: 1.0,
        accuracy: 1.0,
        precision: 1.0,
        recall: 1.0,
        f1: 1.0,
    };

    pub fn values(&self) -> [f64; 5] {
        [self.iou, self.accuracy, self.precision, self.recall, self.f1]
    }

    pub fn from_values([iou, accuracy, precision, recall, f1]: [f64; 5]) -> Self {
        Metrics {
            iou,
            accuracy,
            precision,
            recall,
            f1,
        }
    }

    /// Unweighted mean; `None` for an empty slice.
    pub fn mean(items: &[Metrics]) -> Option<Metrics> {
        if items.is_empty() {
            return None;
        }
        let mut sum = [0.0; 5];
        for m in items {
            for (s, v) in sum.iter_mut().zip(m.values()) {
                *s += v;
            }
        }
        Some(Metrics::from_values(sum.map(|s| s / items.len() as f64)))
    }
}

/// Pixel counts for one image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn count(pred: &Mask, truth: &Mask) -> Result<Self> {
        if (pred.width, pred.height) != (truth.width, truth.height) {
            return Err(HarnessError::Data(format!(
                "prediction is {}x{} but truth is {}x{}",
                pred.width, pred.height, truth.width, truth.height
            )));
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.data.iter().zip(&truth.data) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// Scores with these conventions: an image where both masks are empty is
    /// perfect; otherwise an undefined ratio (0/0) scores 0.
    pub fn metrics(&self) -> Metrics {
        let Confusion { tp, fp, fn_, tn } = *self;
        let total = tp + fp + fn_ + tn;
        if tp + fp + fn_ == 0 {
            return Metrics::PERFECT;
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            iou: ratio(tp, tp + fp + fn_),
            accuracy: ratio(tp + tn, total),
            precision,
            recall,
            f1,
        }
    }
}

pub fn image_metrics(pred: &Mask, truth: &Mask) -> Result<Metrics> {
    Ok(Confusion::count(pred, truth)?.metrics())
}

/// Per-image metrics averaged over the set (macro average).
pub fn compute_metrics(pred: &[Mask], truth: &[Mask]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(HarnessError::Data(format!(
            "{} predictions for {} ground-truth masks",
            pred.len(),
            truth.len()
        )));
    }
    let per_image = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| image_metrics(p, t))
        .collect::<Result<Vec<_>>>()?;
    Metrics::mean(&per_image).ok_or_else(|| HarnessError::Data("no masks to score".into()))
}

/// Scores of one held-out sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub fold: usize,
    /// Position in the evaluated dataset.
    pub index: usize,
    /// Group keys such as `distance:1-2m` and `room:0`.
    pub groups: Vec<String>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub samples: usize,
    pub overall: Metrics,
    pub groups: BTreeMap<String, Metrics>,
}

/// Per-fold scores, their unweighted mean, and group breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    /// Unweighted mean of the per-fold `overall` scores.
    pub aggregate: Metrics,
    /// Per group, the macro average over every held-out sample in that group
    /// across all folds.
    pub groups: BTreeMap<String, Metrics>,
    pub samples: Vec<SampleScore>,
}

impl MetricsReport {
    pub fn from_samples(k: usize, samples: Vec<SampleScore>) -> Result<Self> {
        let mut folds = Vec::with_capacity(k);
        for fold in 0..k {
            let mine: Vec<&SampleScore> = samples.iter().filter(|s| s.fold == fold).collect();
            let overall = Metrics::mean(&mine.iter().map(|s| s.metrics).collect::<Vec<_>>())
                .ok_or_else(|| HarnessError::Data(format!("fold {fold} has no test samples")))?;
            folds.push(FoldMetrics {
                fold,
                samples: mine.len(),
                overall,
                groups: group_means(mine.into_iter()),
            });
        }
        let aggregate = Metrics::mean(&folds.iter().map(|f| f.overall).collect::<Vec<_>>())
            .ok_or_else(|| HarnessError::Data("no folds".into()))?;
        Ok(MetricsReport {
            groups: group_means(samples.iter()),
            folds,
            aggregate,
            samples,
        })
    }
}

fn group_means<'a>(samples: impl Iterator<Item = &'a SampleScore>) -> BTreeMap<String, Metrics> {
    let mut by_group: BTreeMap<String, Vec<Metrics>> = BTreeMap::new();
    for s in samples {
        for g in &s.groups {
            by_group.entry(g.clone()).or_default().push(s.metrics);
        }
    }
    by_group
        .into_iter()
        .filter_map(|(g, v)| Metrics::mean(&v).map(|m| (g, m)))
        .collect()
}

/// Plain-text table of aggregate scores, one row per model, plus a line
/// naming the higher IoU.
pub fn comparison_table(rows: &[(&str, Metrics)]) -> String {
    let mut out = format!("{:<12}", "model");
    for name in METRIC_NAMES {
        out.push_str(&format!(" {name:>9}"));
    }
    out.push('\n');
    for (name, m) in rows {
        out.push_str(&format!("{name:<12}"));
        for v in m.values() {
            out.push_str(&format!(" {v:>9.4}"));
        }
        out.push('\n');
    }
    if rows.len() > 1 {
        if let Some((best, m)) = rows.iter().max_by(|a, b| a.1.iou.total_cmp(&b.1.iou)) {
            out.push_str(&format!("highest aggregate IoU: {best} ({:.4})\n", m.iou));
        }
    }
    out
}
