use std::path::Path;

use serde::Serialize;

use crate::corpus::ClassId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: u64,
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub warnings: Vec<String>,
}

impl MetricsRecord {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-class precision/recall/F1, micro-F1 from pooled counts and macro-F1
/// as the unweighted mean over classes that occur in `gold`. Undefined
/// ratios (0/0) are reported as 0 and noted in `warnings`.
pub fn f1_metrics(gold: &[ClassId], predicted: &[ClassId], classes: &[String]) -> Result<MetricsRecord> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: predicted.len(),
        });
    }
    let k = classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (&g, &p) in gold.iter().zip(predicted) {
        if g >= k || p >= k {
            return Err(Error::Precondition(format!("label out of range for {k} classes")));
        }
        confusion[g][p] += 1;
    }

    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(k);
    let (mut tp_all, mut fp_all, mut fn_all) = (0u64, 0u64, 0u64);
    let mut macro_sum = 0.0;
    let mut present = 0usize;
    for c in 0..k {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        let (fp, fn_) = (predicted - tp, support - tp);
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;

        let precision = ratio(tp, predicted).unwrap_or_else(|| {
            if support > 0 {
                warnings.push(format!("class `{}` never predicted; precision set to 0", classes[c]));
            }
            0.0
        });
        let recall = ratio(tp, support).unwrap_or(0.0);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_).unwrap_or(0.0);
        if support > 0 {
            macro_sum += f1;
            present += 1;
        } else {
            warnings.push(format!("class `{}` absent from gold; excluded from macro-F1", classes[c]));
        }
        per_class.push(ClassMetrics {
            class: classes[c].clone(),
            precision,
            recall,
            f1,
            support,
            predicted,
        });
    }
    if present == 1 && k > 1 {
        warnings.push("gold labels contain a single class; macro-F1 is that class's F1".into());
    }
    let micro_f1 = ratio(2 * tp_all, 2 * tp_all + fp_all + fn_all).unwrap_or(0.0);
    let macro_f1 = if present > 0 { macro_sum / present as f64 } else { 0.0 };
    let accuracy = ratio(tp_all, gold.len() as u64).unwrap_or(0.0);
    Ok(MetricsRecord {
        micro_f1,
        macro_f1,
        accuracy,
        per_class,
        confusion,
        warnings,
    })
}
