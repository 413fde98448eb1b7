//! Confusion matrix, per-class precision/recall/F1 and the percentage report.
//!
//! Rows are predicted classes and columns reference classes, so a row
//! normalized to 100% reads as "of the pixels predicted as k, this share
//! belongs to each reference class".

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use std::fmt::Write;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    /// `counts[pred * num_classes + reference]`.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// From a row-major `pred × reference` table.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::shape("ConfusionMatrix::from_counts", "numel", num_classes * num_classes, counts.len()));
        }
        Ok(ConfusionMatrix { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, pred: usize, reference: usize) -> u64 {
        self.counts[pred * self.num_classes + reference]
    }

    pub fn add(&mut self, pred: usize, reference: usize, n: u64) {
        self.counts[pred * self.num_classes + reference] += n;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape("ConfusionMatrix::merge", "classes", self.num_classes, other.num_classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, pred: usize) -> u64 {
        (0..self.num_classes).map(|r| self.get(pred, r)).sum()
    }

    pub fn col_sum(&self, reference: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(p, reference)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|k| self.get(k, k)).sum()
    }
}

/// Tallies `counts[pred][ref]` over pixels where neither map holds the
/// ignore label.
pub fn confusion(pred: &LabelMap, reference: &LabelMap, ignore_label: Option<u8>) -> Result<ConfusionMatrix> {
    if pred.width() != reference.width() {
        return Err(Error::shape("confusion", "w", reference.width(), pred.width()));
    }
    if pred.height() != reference.height() {
        return Err(Error::shape("confusion", "h", reference.height(), pred.height()));
    }
    let c = pred.num_classes().max(reference.num_classes());
    let mut cm = ConfusionMatrix::new(c);
    for (&p, &r) in pred.values().iter().zip(reference.values()) {
        if Some(p) == ignore_label || Some(r) == ignore_label {
            continue;
        }
        if p as usize >= c || r as usize >= c {
            return Err(Error::Data(format!("label {} is not below the class count {c}", p.max(r))));
        }
        cm.add(p as usize, r as usize, 1);
    }
    Ok(cm)
}

/// Precision, recall and F1 of one class; `None` where a denominator is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Harmonic mean of precision and recall (0 when both are 0).
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn per_class_prf(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.num_classes())
        .map(|k| {
            let diag = cm.get(k, k) as f64;
            let ratio = |d: u64| (d > 0).then(|| diag / d as f64);
            let precision = ratio(cm.row_sum(k));
            let recall = ratio(cm.col_sum(k));
            let f1 = precision.zip(recall).map(|(p, r)| f1_score(p, r));
            ClassMetrics { precision, recall, f1 }
        })
        .collect()
}

/// Trace over total; `None` for an empty matrix.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Option<f64> {
    let t = cm.total();
    (t > 0).then(|| cm.trace() as f64 / t as f64)
}

/// Mean F1 over classes where it is defined.
pub fn mean_f1(cm: &ConfusionMatrix) -> Option<f64> {
    let f: Vec<f64> = per_class_prf(cm).iter().filter_map(|m| m.f1).collect();
    (!f.is_empty()).then(|| f.iter().sum::<f64>() / f.len() as f64)
}

/// Row percentages at one decimal, rounded so that every non-empty row
/// sums to exactly 100.0 (largest remainder). Empty rows are `None`.
pub fn row_percentages(cm: &ConfusionMatrix) -> Vec<Option<Vec<f64>>> {
    (0..cm.num_classes())
        .map(|p| {
            let total = cm.row_sum(p);
            if total == 0 {
                return None;
            }
            let exact: Vec<f64> = (0..cm.num_classes())
                .map(|r| cm.get(p, r) as f64 * 1000.0 / total as f64)
                .collect();
            let mut tenths: Vec<u64> = exact.iter().map(|v| v.floor() as u64).collect();
            let short = 1000 - tenths.iter().sum::<u64>();
            let mut order: Vec<usize> = (0..exact.len()).collect();
            order.sort_by(|&a, &b| {
                let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
                fb.total_cmp(&fa).then(a.cmp(&b))
            });
            for &i in order.iter().take(short as usize) {
                tenths[i] += 1;
            }
            Some(tenths.into_iter().map(|t| t as f64 / 10.0).collect())
        })
        .collect()
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", 100.0 * v))
}

pub fn default_class_names(n: usize) -> Vec<String> {
    const NAMES: [&str; 5] = ["Impervious", "Building", "Low-Veg", "Tree", "Car"];
    (0..n)
        .map(|k| NAMES.get(k).map_or_else(|| format!("class{k}"), |s| s.to_string()))
        .collect()
}

/// Human-readable table: row-normalized percentages (rows = predicted),
/// then precision, recall and F1 rows and the overall accuracy.
pub fn report(cm: &ConfusionMatrix, names: &[String]) -> String {
    let c = cm.num_classes();
    let names: Vec<String> = (0..c)
        .map(|k| names.get(k).cloned().unwrap_or_else(|| format!("class{k}")))
        .collect();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(10) + 2;
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "pred \\ ref");
    for n in &names {
        let _ = write!(out, "{n:>width$}");
    }
    out.push('\n');
    for (k, row) in row_percentages(cm).into_iter().enumerate() {
        let _ = write!(out, "{:<width$}", names[k]);
        for r in 0..c {
            let cell = row.as_ref().map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", v[r]));
            let _ = write!(out, "{cell:>width$}");
        }
        out.push('\n');
    }
    let m = per_class_prf(cm);
    for (label, get) in [
        ("Precision", (|x: &ClassMetrics| x.precision) as fn(&ClassMetrics) -> Option<f64>),
        ("Recall", |x| x.recall),
        ("F1-score", |x| x.f1),
    ] {
        let _ = write!(out, "{label:<width$}");
        for x in &m {
            let _ = write!(out, "{:>width$}", pct(get(x)));
        }
        out.push('\n');
    }
    let _ = writeln!(out, "OA: {}%  mean F1: {}%  pixels: {}", pct(overall_accuracy(cm)), pct(mean_f1(cm)), cm.total());
    out
}

/// Machine-readable counts and metrics.
pub fn to_csv(cm: &ConfusionMatrix, names: &[String]) -> String {
    let c = cm.num_classes();
    let name = |k: usize| names.get(k).cloned().unwrap_or_else(|| format!("class{k}"));
    let mut out = String::from("predicted");
    for r in 0..c {
        let _ = write!(out, ",{}", name(r));
    }
    out.push_str(",precision,recall,f1\n");
    let m = per_class_prf(cm);
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
    for p in 0..c {
        out.push_str(&name(p));
        for r in 0..c {
            let _ = write!(out, ",{}", cm.get(p, r));
        }
        let _ = writeln!(out, ",{},{},{}", opt(m[p].precision), opt(m[p].recall), opt(m[p].f1));
    }
    let _ = writeln!(out, "overall_accuracy,{}", opt(overall_accuracy(cm)));
    out
}
