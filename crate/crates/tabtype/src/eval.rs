//! Evaluation metrics for type-inference output: per-type Jaccard index,
//! overall accuracy, column-normalized confusion matrices, ROC/AUC for the
//! non-type-vs-type decision, the McNemar statistic for comparing two
//! classifiers on the same columns, and a paired two-sided t-test.
//!
//! Undefined metrics (all-zero Jaccard counts, single-class ROC, zero-variance
//! differences, …) are reported as explicitly absent (`None`) rather than as
//! a made-up zero.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// One-vs-rest Jaccard index `TP / (TP + FP + FN)`.
///
/// `None` when all three counts are zero (the type never occurred and was
/// never predicted, so the ratio is undefined).
pub fn jaccard(tp: u64, fp: u64, fn_: u64) -> Option<f64> {
    let denominator = tp + fp + fn_;
    if denominator == 0 {
        None
    } else {
        Some(tp as f64 / denominator as f64)
    }
}

/// McNemar statistic `(|n01 − n10| − 1)² / (n01 + n10)` over the columns the
/// two classifiers disagree on. `None` when they never disagree.
pub fn mcnemar(n01: u64, n10: u64) -> Option<f64> {
    let disagreements = n01 + n10;
    if disagreements == 0 {
        return None;
    }
    let spread = (n01 as f64 - n10 as f64).abs() - 1.0;
    Some(spread * spread / disagreements as f64)
}

/// One operating point of a ROC curve: predict Positive when
/// `score ≥ threshold`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC curve and its trapezoidal area.
#[derive(Debug, Clone, Serialize)]
pub struct RocCurve {
    /// Operating points in order of increasing coverage (thresholds
    /// descending from the sentinel 1 to the sentinel 0), ending at
    /// (FPR, TPR) = (1, 1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve for the non-type decision: `scores[i]` is a cell's non-type
/// probability and `labels[i]` is true when the cell truly is non-type
/// (non-type = Positive, type = Negative).
///
/// Thresholds are the distinct scores plus the sentinels 0 and 1; when no
/// threshold reaches the empty prediction set, a (0, 0) anchor with an
/// infinite threshold is prepended so the curve always spans (0, 0)–(1, 1).
/// Returns `Ok(None)` when the labels are single-class, where the curve is
/// undefined.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Option<RocCurve>> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "roc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidInput(format!(
            "roc: score {bad} is not a probability"
        )));
    }
    let positives = labels.iter().filter(|l| **l).count() as f64;
    let negatives = labels.len() as f64 - positives;
    if positives == 0.0 || negatives == 0.0 {
        return Ok(None);
    }

    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(0.0);
    thresholds.push(1.0);
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len() + 1);
    for threshold in thresholds {
        let mut tp = 0u64;
        let mut fp = 0u64;
        for (score, label) in scores.iter().zip(labels) {
            if *score >= threshold {
                if *label {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        points.push(RocPoint {
            threshold,
            tpr: tp as f64 / positives,
            fpr: fp as f64 / negatives,
        });
    }
    if points[0].tpr != 0.0 || points[0].fpr != 0.0 {
        points.insert(
            0,
            RocPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0 },
        );
    }

    let mut auc = 0.0;
    for pair in points.windows(2) {
        auc += (pair[1].fpr - pair[0].fpr) * (pair[0].tpr + pair[1].tpr) / 2.0;
    }
    Ok(Some(RocCurve { points, auc }))
}

/// Paired t-test result: the t statistic and its two-sided p-value.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub degrees_of_freedom: f64,
}

/// Two-sided paired t-test of `a` against `b`.
///
/// Errors on mismatched lengths or fewer than two pairs; `Ok(None)` when the
/// differences have zero variance (identical lists, or a constant shift),
/// where the statistic is undefined.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<Option<TTest>> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired t-test: {} vs {} observations",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput(
            "paired t-test needs at least two pairs".to_string(),
        ));
    }
    let n = a.len() as f64;
    let differences: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = differences.iter().sum::<f64>() / n;
    let variance =
        differences.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if variance <= 0.0 {
        return Ok(None);
    }
    let t = mean / (variance / n).sqrt();
    let degrees_of_freedom = n - 1.0;
    let distribution = StudentsT::new(0.0, 1.0, degrees_of_freedom)
        .map_err(|e| Error::InvalidInput(format!("t distribution: {e}")))?;
    let p = 2.0 * distribution.cdf(-t.abs());
    Ok(Some(TTest { t, p, degrees_of_freedom }))
}

/// Square confusion matrix over the union of predicted and true labels.
///
/// `counts[i][j]` counts columns predicted as label i whose true label is j;
/// the normalized view divides each truth column by its total so it sums
/// to 1, leaving all-zero columns zero and flagging them in `empty_truth`.
#[derive(Debug, Clone, Serialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
    normalized: Vec<Vec<f64>>,
    empty_truth: Vec<bool>,
}

/// Counts predicted-vs-true labels. The label set is the sorted union of
/// both lists; errors on mismatched lengths.
pub fn confusion_matrix<P: AsRef<str>, T: AsRef<str>>(
    predicted: &[P],
    truth: &[T],
) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "confusion matrix: {} predictions vs {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    let mut labels: Vec<String> = predicted
        .iter()
        .map(|p| p.as_ref().to_string())
        .chain(truth.iter().map(|t| t.as_ref().to_string()))
        .collect();
    labels.sort();
    labels.dedup();

    let k = labels.len();
    let index = |label: &str| labels.iter().position(|l| l == label).unwrap();
    let mut counts = vec![vec![0u64; k]; k];
    for (p, t) in predicted.iter().zip(truth) {
        counts[index(p.as_ref())][index(t.as_ref())] += 1;
    }

    let mut normalized = vec![vec![0.0; k]; k];
    let mut empty_truth = vec![false; k];
    for j in 0..k {
        let total: u64 = (0..k).map(|i| counts[i][j]).sum();
        if total == 0 {
            empty_truth[j] = true;
        } else {
            for i in 0..k {
                normalized[i][j] = counts[i][j] as f64 / total as f64;
            }
        }
    }
    Ok(ConfusionMatrix { labels, counts, normalized, empty_truth })
}

impl ConfusionMatrix {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// `counts()[i][j]`: columns predicted labels()[i] with truth labels()[j].
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Per-truth-column normalized counts; all-zero columns stay zero.
    pub fn normalized(&self) -> &[Vec<f64>] {
        &self.normalized
    }

    /// True at j when no evaluated column has true label `labels()[j]`.
    pub fn empty_truth(&self) -> &[bool] {
        &self.empty_truth
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Fraction of columns on the diagonal; `None` when nothing was evaluated.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let hits: u64 = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        Some(hits as f64 / total as f64)
    }

    /// One-vs-rest (TP, FP, FN) for a label; `None` for unknown labels.
    pub fn one_vs_rest(&self, label: &str) -> Option<(u64, u64, u64)> {
        let i = self.labels.iter().position(|l| l == label)?;
        let tp = self.counts[i][i];
        let fp: u64 = (0..self.labels.len())
            .filter(|&j| j != i)
            .map(|j| self.counts[i][j])
            .sum();
        let fn_: u64 = (0..self.labels.len())
            .filter(|&j| j != i)
            .map(|j| self.counts[j][i])
            .sum();
        Some((tp, fp, fn_))
    }

    /// CSV rendering of the raw counts, predictions in rows, truths in
    /// columns.
    pub fn counts_csv(&self) -> String {
        self.render_csv(|i, j| self.counts[i][j].to_string())
    }

    /// CSV rendering of the normalized view.
    pub fn normalized_csv(&self) -> String {
        self.render_csv(|i, j| format!("{}", self.normalized[i][j]))
    }

    fn render_csv(&self, cell: impl Fn(usize, usize) -> String) -> String {
        let mut out = String::from("predicted\\truth");
        for label in &self.labels {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for i in 0..self.labels.len() {
            out.push_str(&self.labels[i]);
            for j in 0..self.labels.len() {
                out.push(',');
                out.push_str(&cell(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// ROC points as CSV (`threshold,tpr,fpr`, one operating point per line).
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,tpr,fpr\n");
    for point in &curve.points {
        out.push_str(&format!("{},{},{}\n", point.threshold, point.tpr, point.fpr));
    }
    out
}

/// Per-type Jaccard entry of an [`EvalReport`].
#[derive(Debug, Clone, Serialize)]
pub struct TypeJaccard {
    #[serde(rename = "type")]
    pub type_name: String,
    pub jaccard: Option<f64>,
}

/// McNemar comparison of two classifiers: `n01`/`n10` count the columns only
/// the first/only the second got right.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McNemarTest {
    pub n01: u64,
    pub n10: u64,
    pub statistic: f64,
}

/// Bundled metrics for one evaluation run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub per_type_jaccard: Vec<TypeJaccard>,
    pub overall_accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Non-type-vs-type ROC; absent when the cell labels are single-class.
    pub roc: Option<RocCurve>,
    /// Absent until attached via [`EvalReport::with_mcnemar`], or when the
    /// classifiers never disagree.
    pub mcnemar: Option<McNemarTest>,
    /// Absent until attached via [`EvalReport::with_ttest`], or when the
    /// differences have zero variance.
    pub ttest: Option<TTest>,
}

impl EvalReport {
    /// Builds the single-classifier metrics: confusion matrix and accuracy
    /// over the column predictions, per-type one-vs-rest Jaccard, and the
    /// cell-level ROC (pass empty slices to skip it).
    pub fn build<P: AsRef<str>, T: AsRef<str>>(
        predicted: &[P],
        truth: &[T],
        nontype_scores: &[f64],
        nontype_truth: &[bool],
    ) -> Result<EvalReport> {
        let confusion = confusion_matrix(predicted, truth)?;
        let overall_accuracy = confusion
            .accuracy()
            .ok_or_else(|| Error::InvalidInput("no columns to evaluate".to_string()))?;
        let per_type_jaccard = confusion
            .labels()
            .iter()
            .map(|label| {
                let (tp, fp, fn_) = confusion.one_vs_rest(label).unwrap();
                TypeJaccard { type_name: label.clone(), jaccard: jaccard(tp, fp, fn_) }
            })
            .collect();
        let roc = roc_auc(nontype_scores, nontype_truth)?;
        Ok(EvalReport {
            per_type_jaccard,
            overall_accuracy,
            confusion,
            roc,
            mcnemar: None,
            ttest: None,
        })
    }

    /// Attaches the McNemar comparison against a second classifier.
    pub fn with_mcnemar(mut self, n01: u64, n10: u64) -> Self {
        self.mcnemar =
            mcnemar(n01, n10).map(|statistic| McNemarTest { n01, n10, statistic });
        self
    }

    /// Attaches a paired t-test of per-dataset scores against a baseline.
    pub fn with_ttest(mut self, a: &[f64], b: &[f64]) -> Result<Self> {
        self.ttest = paired_ttest(a, b)?;
        Ok(self)
    }
}

/// Least-squares line fit with its coefficient of determination.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `y ≈ slope·x + intercept`. Errors when fewer than two points or all
/// x coincide. `r_squared` is 1 − SS_res/SS_tot (1.0 for a perfect fit to
/// constant data).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "linear fit: {} x values vs {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput(
            "linear fit needs at least two points".to_string(),
        ));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput(
            "linear fit needs at least two distinct x values".to_string(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(LinearFit { slope, intercept, r_squared })
}
