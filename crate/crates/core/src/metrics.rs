//! Accuracy metrics, fold aggregation with Student-t intervals, and the
//! report files (json, csv, svg heatmap).

use crate::error::{Error, Result};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Two-sided 95% Student-t quantiles for 1..=40 degrees of freedom,
/// embedded so no special-function dependency is needed. Above 40 the
/// normal quantile 1.96 is used.
const T_QUANTILE_975: [f64; 40] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, //
    2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, //
    2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042, //
    2.040, 2.037, 2.035, 2.032, 2.030, 2.028, 2.026, 2.024, 2.023, 2.021,
];

fn t_quantile_975(df: usize) -> f64 {
    if df == 0 {
        return f64::NAN;
    }
    if df <= 40 {
        T_QUANTILE_975[df - 1]
    } else {
        1.96
    }
}

/// Square count matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn add(&mut self, true_class: usize, predicted: usize) -> Result<()> {
        if true_class >= self.classes {
            return Err(Error::BadLabel {
                label: true_class,
                classes: self.classes,
            });
        }
        if predicted >= self.classes {
            return Err(Error::BadLabel {
                label: predicted,
                classes: self.classes,
            });
        }
        self.counts[true_class * self.classes + predicted] += 1;
        Ok(())
    }

    /// Element-wise sum; used to pool folds for the aggregate heatmap.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::ShapeMismatch {
                op: "confusion merge",
                detail: format!("{} vs {} classes", self.classes, other.classes),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn row_total(&self, true_class: usize) -> u64 {
        (0..self.classes).map(|p| self.count(true_class, p)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows_as_vecs(&self) -> Vec<Vec<u64>> {
        (0..self.classes)
            .map(|t| (0..self.classes).map(|p| self.count(t, p)).collect())
            .collect()
    }
}

/// Tallies paired labels into a confusion matrix.
pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            detail: format!("{} truths vs {} predictions", truth.len(), predicted.len()),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

/// Unweighted accuracy: the mean of per-class recalls. Every class must
/// have at least one observation.
pub fn unweighted_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.classes == 0 || cm.total() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut acc = 0.0;
    for t in 0..cm.classes {
        let row = cm.row_total(t);
        if row == 0 {
            return Err(Error::EmptyRow(t));
        }
        acc += cm.count(t, t) as f64 / row as f64;
    }
    Ok(acc / cm.classes as f64)
}

/// Weighted accuracy: overall fraction correct.
pub fn weighted_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if cm.classes == 0 || total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let trace: u64 = (0..cm.classes).map(|c| cm.count(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

/// Index of the largest value; ties resolve to the lowest index so
/// predictions are deterministic.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-fold values with their mean and 95% Student-t confidence interval.
#[derive(Debug, Clone, Serialize)]
pub struct FoldSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// mean +/- t_{0.975, n-1} * s / sqrt(n) over fold values.
pub fn fold_summary(values: &[f64]) -> Result<FoldSummary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewFolds(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let half_width = t_quantile_975(n - 1) * std / (n as f64).sqrt();
    Ok(FoldSummary {
        values: values.to_vec(),
        mean,
        ci_lower: mean - half_width,
        ci_upper: mean + half_width,
    })
}

/// Metrics for a single cross-validation run.
#[derive(Debug, Clone, Serialize)]
pub struct FoldMetrics {
    pub name: String,
    pub ua: f64,
    pub wa: f64,
    pub valence_mae: f64,
    pub arousal_mae: f64,
    pub test_items: usize,
    pub sap_fallbacks: u64,
}

/// Aggregate of a full cross-validation sweep.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub folds: Vec<FoldMetrics>,
    pub ua: FoldSummary,
    pub wa: FoldSummary,
    pub valence_mae: FoldSummary,
    pub arousal_mae: FoldSummary,
    pub sap_fallbacks: u64,
}

impl MetricsReport {
    /// Pure aggregation over per-fold results; the confusion matrix is the
    /// element-wise sum across folds.
    pub fn aggregate(
        labels: Vec<String>,
        folds: Vec<FoldMetrics>,
        matrices: &[ConfusionMatrix],
    ) -> Result<MetricsReport> {
        let mut pooled = ConfusionMatrix::new(labels.len());
        for m in matrices {
            pooled.merge(m)?;
        }
        let ua = fold_summary(&folds.iter().map(|f| f.ua).collect::<Vec<_>>())?;
        let wa = fold_summary(&folds.iter().map(|f| f.wa).collect::<Vec<_>>())?;
        let valence_mae = fold_summary(&folds.iter().map(|f| f.valence_mae).collect::<Vec<_>>())?;
        let arousal_mae = fold_summary(&folds.iter().map(|f| f.arousal_mae).collect::<Vec<_>>())?;
        let sap_fallbacks = folds.iter().map(|f| f.sap_fallbacks).sum();
        Ok(MetricsReport {
            labels,
            confusion: pooled.rows_as_vecs(),
            folds,
            ua,
            wa,
            valence_mae,
            arousal_mae,
            sap_fallbacks,
        })
    }
}

/// Writes report.json, confusion.csv, and confusion.svg into `out_dir`.
/// Output bytes are a pure function of the report: no timestamps, no
/// environment lookups, fixed field order.
pub fn emit_report(report: &MetricsReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let json_path = out_dir.join("report.json");
    let mut json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::io(&json_path, std::io::Error::other(e)))?;
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;

    let csv_path = out_dir.join("confusion.csv");
    std::fs::write(&csv_path, confusion_csv(&report.labels, &report.confusion))
        .map_err(|e| Error::io(&csv_path, e))?;

    let svg_path = out_dir.join("confusion.svg");
    let svg = confusion_svg(&report.labels, &report.confusion);
    let mut file = std::fs::File::create(&svg_path).map_err(|e| Error::io(&svg_path, e))?;
    file.write_all(svg.as_bytes())
        .map_err(|e| Error::io(&svg_path, e))?;
    Ok(())
}

/// Count table as CSV text; the header row carries the predicted labels.
pub fn confusion_csv(labels: &[String], counts: &[Vec<u64>]) -> String {
    let mut csv = String::from("label");
    for l in labels {
        csv.push(',');
        csv.push_str(l);
    }
    csv.push('\n');
    for (t, row) in counts.iter().enumerate() {
        csv.push_str(&labels[t]);
        for v in row {
            csv.push(',');
            csv.push_str(&v.to_string());
        }
        csv.push('\n');
    }
    csv
}

/// Row-normalized heatmap with one cell per (true, predicted) pair.
pub fn confusion_svg(labels: &[String], counts: &[Vec<u64>]) -> String {
    let k = labels.len();
    let cell = 86;
    let margin = 110;
    let width = margin + k * cell + 20;
    let height = margin + k * cell + 20;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">predicted</text>\n",
        margin + k * cell / 2
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" font-size=\"15\" \
         transform=\"rotate(-90 20 {})\">true</text>\n",
        margin + k * cell / 2,
        margin + k * cell / 2
    ));

    for (i, l) in labels.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{l}</text>\n",
            margin + i * cell + cell / 2,
            margin - 14
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{l}</text>\n",
            margin - 12,
            margin + i * cell + cell / 2 + 5
        ));
    }

    for (t, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (p, &count) in row.iter().enumerate() {
            let frac = if total == 0 {
                0.0
            } else {
                count as f64 / total as f64
            };
            // White to steel blue.
            let r = (255.0 - frac * (255.0 - 44.0)).round() as u8;
            let g = (255.0 - frac * (255.0 - 127.0)).round() as u8;
            let b = (255.0 - frac * (255.0 - 184.0)).round() as u8;
            let x = margin + p * cell;
            let y = margin + t * cell;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({r},{g},{b})\" stroke=\"#888\"/>\n"
            ));
            let text_fill = if frac > 0.55 { "white" } else { "#222" };
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{text_fill}\">{:.1}%</text>\n",
                x + cell / 2,
                y + cell / 2 + 5,
                frac * 100.0
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
