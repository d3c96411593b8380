//! Confusion matrices and the scalar metrics derived from them.
//!
//! Per-class figures are one-vs-rest. Macro averages are unweighted means over
//! all six grades; a figure with a zero denominator counts as 0 in the mean and
//! is recorded in [`MetricsReport::undefined`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NUM_CLASSES;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {0} is outside 0..{NUM_CLASSES}")]
    BadLabel(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("ROC needs at least two classes in the labels, found {0}")]
    SingleClassOnly(usize),
    #[error("score for sample {0} is not finite")]
    NonFiniteScore(usize),
    #[error("no reports to aggregate")]
    EmptyList,
}

/// `m[i][j]` counts samples of true grade `i` predicted as grade `j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.0[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.0[i][i]).sum()
    }

    /// Per-class true counts.
    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        std::array::from_fn(|i| self.0[i].iter().sum())
    }

    /// Per-class predicted counts.
    pub fn col_sums(&self) -> [u64; NUM_CLASSES] {
        std::array::from_fn(|j| self.0.iter().map(|row| row[j]).sum())
    }

    /// Relabels class `c` as `perm[c]` on both axes.
    pub fn permuted(&self, perm: &[usize; NUM_CLASSES]) -> Self {
        let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
        for i in 0..NUM_CLASSES {
            for j in 0..NUM_CLASSES {
                m[perm[i]][perm[j]] = self.0[i][j];
            }
        }
        Self(m)
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self(self.0.map(|row| row.map(|v| v * k)))
    }

    pub fn merged(&self, other: &Self) -> Self {
        Self(std::array::from_fn(|i| {
            std::array::from_fn(|j| self.0[i][j] + other.0[i][j])
        }))
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= NUM_CLASSES {
            return Err(MetricsError::BadLabel(t));
        }
        if p >= NUM_CLASSES {
            return Err(MetricsError::BadLabel(p));
        }
        cm.0[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Same as recall in the one-vs-rest setting; kept for table parity.
    pub sensitivity: f64,
    pub specificity: f64,
}

/// A per-class figure whose denominator was zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedMetric {
    pub class: usize,
    pub metric: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// `None` for classes absent from the labels.
    pub per_class: Vec<Option<f64>>,
    pub macro_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    pub mcc: f64,
    pub accuracy: f64,
    pub auc: Option<AucReport>,
    pub support: [u64; NUM_CLASSES],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<UndefinedMetric>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let mut undefined = Vec::new();
    let mut flag = |class: usize, metric: &str, v: Option<f64>| -> f64 {
        v.unwrap_or_else(|| {
            undefined.push(UndefinedMetric {
                class,
                metric: metric.to_string(),
            });
            0.0
        })
    };
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    for c in 0..NUM_CLASSES {
        let tp = cm.0[c][c];
        let fp = cols[c] - tp;
        let fn_ = rows[c] - tp;
        let tn = total - tp - fp - fn_;
        let precision = flag(c, "precision", ratio(tp, tp + fp));
        let recall = flag(c, "recall", ratio(tp, tp + fn_));
        let specificity = flag(c, "specificity", ratio(tn, tn + fp));
        let f1 = flag(
            c,
            "f1",
            (precision + recall > 0.0).then(|| 2.0 * precision * recall / (precision + recall)),
        );
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            sensitivity: recall,
            specificity,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
    let macro_avg = ClassMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        sensitivity: mean(|m| m.sensitivity),
        specificity: mean(|m| m.specificity),
    };
    Ok(MetricsReport {
        confusion: *cm,
        macro_avg,
        mcc: mcc(cm)?,
        accuracy: cm.trace() as f64 / total as f64,
        auc: None,
        support: rows,
        undefined,
        per_class,
    })
}

/// Multiclass Matthews correlation; 0 when either marginal is degenerate.
pub fn mcc(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let s = cm.total();
    if s == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let s = s as f64;
    let c = cm.trace() as f64;
    let p = cm.col_sums().map(|v| v as f64);
    let t = cm.row_sums().map(|v| v as f64);
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let tt: f64 = t.iter().map(|a| a * a).sum();
    let den = (s * s - pp) * (s * s - tt);
    if den <= 0.0 {
        return Ok(0.0);
    }
    Ok(((c * s - pt) / den.sqrt()).clamp(-1.0, 1.0))
}

fn check_scores(truth: &[usize], probs: &[[f64; NUM_CLASSES]]) -> Result<(), MetricsError> {
    if truth.len() != probs.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: probs.len(),
        });
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= NUM_CLASSES) {
        return Err(MetricsError::BadLabel(bad));
    }
    if let Some(i) = probs.iter().position(|row| row.iter().any(|v| !v.is_finite())) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    Ok(())
}

/// One-vs-rest AUC per class from average ranks (ties count one half).
pub fn roc_auc(truth: &[usize], probs: &[[f64; NUM_CLASSES]]) -> Result<AucReport, MetricsError> {
    check_scores(truth, probs)?;
    let mut present = [0usize; NUM_CLASSES];
    for &t in truth {
        present[t] += 1;
    }
    let n_present = present.iter().filter(|&&n| n > 0).count();
    if n_present < 2 {
        return Err(MetricsError::SingleClassOnly(n_present));
    }

    let n = truth.len();
    let mut per_class = vec![None; NUM_CLASSES];
    let mut order: Vec<usize> = (0..n).collect();
    for c in 0..NUM_CLASSES {
        let pos = present[c];
        if pos == 0 {
            continue;
        }
        let neg = n - pos;
        order.sort_by(|&a, &b| probs[a][c].total_cmp(&probs[b][c]));
        let mut rank_sum = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && probs[order[j + 1]][c] == probs[order[i]][c] {
                j += 1;
            }
            // Ranks i+1..=j+1 share their average.
            let avg = (i + j + 2) as f64 / 2.0;
            let hits = order[i..=j].iter().filter(|&&k| truth[k] == c).count();
            rank_sum += avg * hits as f64;
            i = j + 1;
        }
        let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
        per_class[c] = Some(u / (pos as f64 * neg as f64));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auc = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(AucReport { per_class, macro_auc })
}

/// One-vs-rest ROC points `(fpr, tpr)` for `class`, from (0,0) to (1,1).
pub fn roc_curve(truth: &[usize], probs: &[[f64; NUM_CLASSES]], class: usize) -> Result<Vec<(f64, f64)>, MetricsError> {
    check_scores(truth, probs)?;
    if class >= NUM_CLASSES {
        return Err(MetricsError::BadLabel(class));
    }
    let pos = truth.iter().filter(|&&t| t == class).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClassOnly(if pos == 0 { 0 } else { 1 }));
    }
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| probs[b][class].total_cmp(&probs[a][class]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if truth[i] == class {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order
            .get(k + 1)
            .is_none_or(|&next| probs[next][class] != probs[i][class]);
        if last_of_tie {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(points)
}

/// Full report from labels, predictions and optional class probabilities.
pub fn evaluate(
    truth: &[usize],
    predicted: &[usize],
    probs: Option<&[[f64; NUM_CLASSES]]>,
) -> Result<MetricsReport, MetricsError> {
    let cm = confusion(truth, predicted)?;
    let mut report = per_class_metrics(&cm)?;
    if let Some(p) = probs {
        report.auc = match roc_auc(truth, p) {
            Ok(a) => Some(a),
            Err(MetricsError::SingleClassOnly(_)) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(report)
}

fn mean_metrics(items: &[ClassMetrics]) -> ClassMetrics {
    let n = items.len() as f64;
    let sum = |f: fn(&ClassMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
    ClassMetrics {
        precision: sum(|m| m.precision),
        recall: sum(|m| m.recall),
        f1: sum(|m| m.f1),
        sensitivity: sum(|m| m.sensitivity),
        specificity: sum(|m| m.specificity),
    }
}

/// Unweighted mean of every scalar; supports and confusion counts are summed.
pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<MetricsReport, MetricsError> {
    let first = reports.first().ok_or(MetricsError::EmptyList)?;
    let n = reports.len() as f64;
    let per_class = (0..NUM_CLASSES)
        .map(|c| mean_metrics(&reports.iter().map(|r| r.per_class[c]).collect::<Vec<_>>()))
        .collect();
    let macro_avg = mean_metrics(&reports.iter().map(|r| r.macro_avg).collect::<Vec<_>>());
    let confusion = reports[1..]
        .iter()
        .fold(first.confusion, |acc, r| acc.merged(&r.confusion));
    let support = std::array::from_fn(|c| reports.iter().map(|r| r.support[c]).sum());

    let aucs: Vec<&AucReport> = reports.iter().filter_map(|r| r.auc.as_ref()).collect();
    let auc = (aucs.len() == reports.len()).then(|| {
        let per_class = (0..NUM_CLASSES)
            .map(|c| {
                let vals: Vec<f64> = aucs.iter().filter_map(|a| a.per_class[c]).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        AucReport {
            per_class,
            macro_auc: aucs.iter().map(|a| a.macro_auc).sum::<f64>() / n,
        }
    });

    let mut undefined: Vec<UndefinedMetric> = reports.iter().flat_map(|r| r.undefined.clone()).collect();
    undefined.sort_by(|a, b| (a.class, &a.metric).cmp(&(b.class, &b.metric)));
    undefined.dedup();

    Ok(MetricsReport {
        confusion,
        per_class,
        macro_avg,
        mcc: reports.iter().map(|r| r.mcc).sum::<f64>() / n,
        accuracy: reports.iter().map(|r| r.accuracy).sum::<f64>() / n,
        auc,
        support,
        undefined,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json() + "\n")
    }

    pub const CSV_HEADER: &'static str = "accuracy,precision,recall,f1,specificity,sensitivity,mcc,auc,support";

    /// Flat CSV row matching [`Self::CSV_HEADER`]; rates as percentages.
    pub fn csv_row(&self) -> String {
        let m = &self.macro_avg;
        format!(
            "{},{},{},{},{},{},{:.4},{},{}",
            pct(self.accuracy),
            pct(m.precision),
            pct(m.recall),
            pct(m.f1),
            pct(m.specificity),
            pct(m.sensitivity),
            self.mcc,
            self.auc
                .as_ref()
                .map(|a| format!("{:.4}", a.macro_auc))
                .unwrap_or_default(),
            self.support.iter().sum::<u64>()
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row()))
    }

    pub const MARKDOWN_HEADER: &'static str = "| Model | Accuracy (%) | Precision (%) | Recall (%) | F1-Score (%) | Specificity (%) | Sensitivity (%) | MCC |\n|---|---|---|---|---|---|---|---|";

    /// One row of a model comparison table (macro averages).
    pub fn markdown_row(&self, label: &str) -> String {
        let m = &self.macro_avg;
        format!(
            "| {label} | {} | {} | {} | {} | {} | {} | {:.4} |",
            pct(self.accuracy),
            pct(m.precision),
            pct(m.recall),
            pct(m.f1),
            pct(m.specificity),
            pct(m.sensitivity),
            self.mcc
        )
    }

    /// Per-grade breakdown as a markdown table.
    pub fn per_class_markdown(&self) -> String {
        let mut out = String::from(
            "| Grade | Precision (%) | Recall (%) | F1-Score (%) | Specificity (%) | Sensitivity (%) | Support |\n|---|---|---|---|---|---|---|\n",
        );
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "| {c} | {} | {} | {} | {} | {} | {} |",
                pct(m.precision),
                pct(m.recall),
                pct(m.f1),
                pct(m.specificity),
                pct(m.sensitivity),
                self.support[c]
            );
        }
        out
    }
}
