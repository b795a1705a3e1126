//! Training objectives evaluated forward, and per-frame ranking metrics.

use alloc::vec::Vec;

use crate::error::ModelError;
use crate::tensor::Matrix;
use crate::trend::ProbabilitySequence;

pub const LOG_FLOOR: f64 = 1e-12;

/// Per-frame class indices; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSequence {
    labels: Vec<usize>,
}

impl LabelSequence {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self, ModelError> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(ModelError::Dimension { what: "class index", expected: num_classes, found: bad });
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `-Σ_i log p[i, label_i]`, probabilities floored at [`LOG_FLOOR`].
pub fn cross_entropy_window(pred: &ProbabilitySequence, labels: &LabelSequence) -> f64 {
    assert_eq!(pred.len(), labels.len(), "cross_entropy_window: frame count");
    labels
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| -libm::log((pred.row(i)[l] as f64).max(LOG_FLOOR)))
        .sum()
}

/// `oad + λ1·oas + λ2·cascade_oad + λ3·cascade_oas`.
pub fn total_loss(oad: f64, oas: f64, cascade_oad: f64, cascade_oas: f64, lambdas: [f64; 3]) -> f64 {
    oad + lambdas[0] * oas + lambdas[1] * cascade_oad + lambdas[2] * cascade_oas
}

/// Frame indices by descending score, ties by ascending index.
fn ranking(scores: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mean precision at the rank of each positive. `None` without positives.
pub fn average_precision(scores: &[f32], positives: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positives.len(), "average_precision: frame count");
    let total = positives.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, &i) in ranking(scores).iter().enumerate() {
        if positives[i] {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Average of `TP / (TP + FP/ω)` over positive ranks, `ω = negatives /
/// positives`. `None` unless both classes are present.
pub fn calibrated_ap(scores: &[f32], positives: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positives.len(), "calibrated_ap: frame count");
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = positives.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let omega = neg as f64 / pos as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut sum = 0.0;
    for &i in &ranking(scores) {
        if positives[i] {
            tp += 1;
            sum += tp as f64 / (tp as f64 + fp as f64 / omega);
        } else {
            fp += 1;
        }
    }
    Some(sum / pos as f64)
}

/// Per-class scores and the resulting class mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMean {
    pub mean: f64,
    /// `(class, value)` for every class that was scored.
    pub per_class: Vec<(usize, f64)>,
    /// Action classes left out for lack of positives (or negatives).
    pub skipped: Vec<usize>,
}

fn class_mean(
    table: &Matrix,
    labels: &LabelSequence,
    metric: fn(&[f32], &[bool]) -> Option<f64>,
) -> Result<ClassMean, ModelError> {
    if table.rows() != labels.len() {
        return Err(ModelError::Dimension { what: "score table frames", expected: labels.len(), found: table.rows() });
    }
    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for class in 1..table.cols() {
        let scores: Vec<f32> = (0..table.rows()).map(|i| table.get(i, class)).collect();
        let positives: Vec<bool> = labels.labels().iter().map(|&l| l == class).collect();
        match metric(&scores, &positives) {
            Some(v) => per_class.push((class, v)),
            None => skipped.push(class),
        }
    }
    if per_class.is_empty() {
        return Err(ModelError::NoScoredClass);
    }
    let mean = per_class.iter().map(|&(_, v)| v).sum::<f64>() / per_class.len() as f64;
    Ok(ClassMean { mean, per_class, skipped })
}

/// Mean AP over action classes (background excluded) with positives.
pub fn mean_ap(table: &Matrix, labels: &LabelSequence) -> Result<ClassMean, ModelError> {
    class_mean(table, labels, average_precision)
}

/// Mean calibrated AP over action classes with positives and negatives.
pub fn mean_cap(table: &Matrix, labels: &LabelSequence) -> Result<ClassMean, ModelError> {
    class_mean(table, labels, calibrated_ap)
}
