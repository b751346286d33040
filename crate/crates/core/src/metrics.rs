//! Classification metrics, the metrics CSV schema, and the
//! sample-efficiency rule: the training-step count at the first epoch that
//! begins a run of `consecutive` epochs with eval F1 strictly above the
//! threshold.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::physics::Split;

pub const CSV_HEADER: &str = "epoch,step,split,loss,accuracy,precision,recall,f1";

/// Reference full-scale sample-efficiency measurements (training steps to
/// sustain F1 > 0.95 for 4 epochs), recorded for comparison when running the
/// paper preset; not reproducible at desk scale. Mean and standard error.
pub const REFERENCE_STEPS_TRIPLET: (f64, f64) = (5500.0, 758.3);
pub const REFERENCE_STEPS_STEVE: (f64, f64) = (8500.0, 1483.2);
/// Single run out of five cleared the threshold.
pub const REFERENCE_STEPS_DECODER_ONLY: f64 = 29000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted_success: bool, actual_success: bool) {
        match (predicted_success, actual_success) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_pos += 1,
            (false, true) => self.false_neg += 1,
            (false, false) => self.true_neg += 1,
        }
    }

    /// Shard merge is plain addition.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy, precision, recall and F1 from a confusion matrix. Vanishing
/// denominators yield 0 by convention, never NaN.
pub fn compute_metrics(counts: &ConfusionCounts) -> Result<ClassificationMetrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::input("compute_metrics: no samples"));
    }
    let tp = counts.true_pos as f64;
    let accuracy = (tp + counts.true_neg as f64) / total as f64;
    let precision = if counts.true_pos + counts.false_pos > 0 {
        tp / (tp + counts.false_pos as f64)
    } else {
        0.0
    };
    let recall = if counts.true_pos + counts.false_neg > 0 {
        tp / (tp + counts.false_neg as f64)
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(ClassificationMetrics { accuracy, precision, recall, f1 })
}

/// One evaluation row of the training CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Cumulative training samples observed by the end of `epoch`.
    pub step: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsRecord {
    pub fn from_counts(
        epoch: usize,
        step: usize,
        split: Split,
        loss: f64,
        counts: &ConfusionCounts,
    ) -> Result<Self> {
        let m = compute_metrics(counts)?;
        Ok(MetricsRecord {
            epoch,
            step,
            split,
            loss,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        })
    }
}

/// Appends records to a per-run CSV, writing the header only when the file
/// is new or empty. Rows are emitted ordered by (epoch, step).
pub fn emit_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::input("emit_metrics_csv: no records"));
    }
    let mut ordered: Vec<&MetricsRecord> = records.iter().collect();
    ordered.sort_by_key(|r| (r.epoch, r.step));
    let need_header = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut text = String::new();
    if need_header {
        text.push_str(CSV_HEADER);
        text.push('\n');
    }
    for r in ordered {
        writeln!(
            text,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.step, r.split, r.loss, r.accuracy, r.precision, r.recall, r.f1
        )
        .expect("write to string");
    }
    use std::io::Write as _;
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::format(format!("bad metrics header {other:?}"))),
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::format(format!("metrics line {}: expected 8 fields", lineno + 2)));
        }
        let bad = |what: &str| Error::format(format!("metrics line {}: bad {what}", lineno + 2));
        out.push(MetricsRecord {
            epoch: f[0].parse().map_err(|_| bad("epoch"))?,
            step: f[1].parse().map_err(|_| bad("step"))?,
            split: f[2].parse()?,
            loss: f[3].parse().map_err(|_| bad("loss"))?,
            accuracy: f[4].parse().map_err(|_| bad("accuracy"))?,
            precision: f[5].parse().map_err(|_| bad("precision"))?,
            recall: f[6].parse().map_err(|_| bad("recall"))?,
            f1: f[7].parse().map_err(|_| bad("f1"))?,
        });
    }
    Ok(out)
}

/// Applies the sustained-threshold rule to a per-epoch eval F1 curve.
/// Returns the cumulative step count at the first epoch (1-indexed) that
/// starts `consecutive` epochs with F1 strictly above `threshold`.
pub fn sample_efficiency_from_f1(
    f1_per_epoch: &[f64],
    threshold: f64,
    consecutive: usize,
    steps_per_epoch: usize,
) -> Option<usize> {
    if consecutive == 0 || f1_per_epoch.len() < consecutive {
        return None;
    }
    for start in 0..=f1_per_epoch.len() - consecutive {
        if f1_per_epoch[start..start + consecutive].iter().all(|&f| f > threshold) {
            return Some((start + 1) * steps_per_epoch);
        }
    }
    None
}

/// Reads a metrics CSV and applies the sustained-threshold rule to its eval
/// rows. The CSV must carry exactly one eval row per epoch, in epoch order.
pub fn sample_efficiency(
    path: &Path,
    threshold: f64,
    consecutive: usize,
    steps_per_epoch: usize,
) -> Result<Option<usize>> {
    let records = read_metrics_csv(path)?;
    let eval: Vec<&MetricsRecord> = records.iter().filter(|r| r.split == Split::Eval).collect();
    if eval.is_empty() {
        return Err(Error::format("metrics CSV has no eval rows"));
    }
    for (i, r) in eval.iter().enumerate() {
        if r.epoch != i + 1 {
            return Err(Error::format(format!(
                "expected one eval row per epoch; row {} has epoch {}",
                i + 1,
                r.epoch
            )));
        }
    }
    let f1: Vec<f64> = eval.iter().map(|r| r.f1).collect();
    Ok(sample_efficiency_from_f1(&f1, threshold, consecutive, steps_per_epoch))
}
