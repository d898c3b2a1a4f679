//! Column-type inference and per-row annotation.
//!
//! A [`TypeSystem`] pairs a [`MachineCatalog`] with the mixture weights Π
//! (per type t, the triple π_t^t, π_t^m, π_t^a governing how much of a
//! column of that type is expected to be regular, missing, or anomalous)
//! and a prior over the K regular types.
//!
//! For a column x with per-type weights π, the type posterior is
//!
//! ```text
//! p(t=k | x) ∝ p(t=k) · Π_i ( π_k^k p(x_i|k) + π_k^m p(x_i|m) + π_k^a p(x_i|a) )
//! ```
//!
//! and, conditioned on the winning type k, each cell gets a posterior over
//! {type, missing, anomaly}:
//!
//! ```text
//! p(z=j | t=k, x) = π_k^j p(x|j) / Σ_{ℓ∈{k,m,a}} π_k^ℓ p(x|ℓ).
//! ```
//!
//! Both are computed in log space (products over 10⁵ rows underflow
//! otherwise), and per-column work is aggregated over *unique* values with
//! multiplicities, so cost scales with the number of distinct entries
//! rather than the row count.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::machines::MachineCatalog;
use crate::numeric::log_sum_exp;
use crate::pfsm::forward_log_prob;

/// Mixture weights for one regular type: how much of a column of this type
/// is expected to be type-conforming, missing, or anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeWeights {
    pub regular: f64,
    pub missing: f64,
    pub anomaly: f64,
}

impl TypeWeights {
    fn check(&self, name: &str) -> Result<()> {
        for (label, w) in [("regular", self.regular), ("missing", self.missing), ("anomaly", self.anomaly)] {
            if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidInput(format!(
                    "{label} weight {w} for type {name:?} is not a probability"
                )));
            }
        }
        let sum = self.regular + self.missing + self.anomaly;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "weights for type {name:?} sum to {sum}, expected 1"
            )));
        }
        if self.missing >= self.regular || self.anomaly >= self.regular {
            return Err(Error::InvalidInput(format!(
                "weights for type {name:?} must favour the regular component \
                 (missing {} and anomaly {} must both be below regular {})",
                self.missing, self.anomaly, self.regular
            )));
        }
        Ok(())
    }
}

/// A machine catalog together with the mixture weights Π and the type prior.
#[derive(Debug, Clone)]
pub struct TypeSystem {
    catalog: MachineCatalog,
    weights: Vec<TypeWeights>,
    prior: Vec<f64>,
}

impl TypeSystem {
    /// Default weighting: every type expects 98% conforming cells and 1%
    /// each of missing and anomalous cells; uniform prior over types.
    pub fn with_defaults(catalog: MachineCatalog) -> Self {
        let k = catalog.n_types();
        let weights = vec![TypeWeights { regular: 0.98, missing: 0.01, anomaly: 0.01 }; k];
        let prior = vec![1.0 / k as f64; k];
        TypeSystem { catalog, weights, prior }
    }

    /// Validates that each type's weights form a probability triple that
    /// favours the regular component and that the prior is a distribution.
    pub fn new(catalog: MachineCatalog, weights: Vec<TypeWeights>, prior: Vec<f64>) -> Result<Self> {
        if weights.len() != catalog.n_types() {
            return Err(Error::InvalidInput(format!(
                "{} weight triples for {} types",
                weights.len(),
                catalog.n_types()
            )));
        }
        if prior.len() != catalog.n_types() {
            return Err(Error::InvalidInput(format!(
                "prior over {} entries for {} types",
                prior.len(),
                catalog.n_types()
            )));
        }
        for ((name, _), w) in catalog.regular().iter().zip(&weights) {
            w.check(name)?;
        }
        let sum: f64 = prior.iter().sum();
        if prior.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "type prior must be a distribution (sums to {sum})"
            )));
        }
        Ok(TypeSystem { catalog, weights, prior })
    }

    pub fn catalog(&self) -> &MachineCatalog {
        &self.catalog
    }

    pub fn weights(&self) -> &[TypeWeights] {
        &self.weights
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub(crate) fn catalog_mut(&mut self) -> &mut MachineCatalog {
        &mut self.catalog
    }

    /// Log-likelihood of `value` under every regular machine plus the two
    /// special machines. This is the per-unique-value unit of work that the
    /// column posterior, the row posterior, and training all share.
    pub(crate) fn value_scores(&self, value: &str) -> ValueScores {
        ValueScores {
            log_f: self
                .catalog
                .regular()
                .iter()
                .map(|(_, machine)| forward_log_prob(machine, value))
                .collect(),
            log_m: forward_log_prob(self.catalog.missing(), value),
            log_a: forward_log_prob(self.catalog.anomaly(), value),
        }
    }

    /// log( π_k^k p(x|k) + π_k^m p(x|m) + π_k^a p(x|a) ) for one value.
    pub(crate) fn log_mixture(&self, scores: &ValueScores, k: usize) -> f64 {
        let w = &self.weights[k];
        log_sum_exp(&[
            w.regular.ln() + scores.log_f[k],
            w.missing.ln() + scores.log_m,
            w.anomaly.ln() + scores.log_a,
        ])
    }
}

pub(crate) struct ValueScores {
    pub(crate) log_f: Vec<f64>,
    pub(crate) log_m: f64,
    pub(crate) log_a: f64,
}

/// One column of cells, with unique values pre-aggregated.
#[derive(Debug, Clone)]
pub struct Column {
    name: String,
    raw: Vec<String>,
    uniques: BTreeMap<String, u64>,
}

impl Column {
    pub fn new(name: impl Into<String>, cells: Vec<String>) -> Self {
        let mut uniques = BTreeMap::new();
        for cell in &cells {
            *uniques.entry(cell.clone()).or_insert(0) += 1;
        }
        Column { name: name.into(), raw: cells, uniques }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Cells in file order.
    pub fn raw(&self) -> &[String] {
        &self.raw
    }

    /// Unique values with their multiplicities.
    pub fn uniques(&self) -> &BTreeMap<String, u64> {
        &self.uniques
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Unnormalized log joint ln p(t=k) + Σ_i ln g_k(x_i), aggregated over
/// unique values. An empty column contributes nothing beyond the prior.
pub(crate) fn column_log_joint_allow_empty(column: &Column, system: &TypeSystem) -> Vec<f64> {
    let k_types = system.catalog().n_types();
    let mut log_joint: Vec<f64> = system.prior().iter().map(|p| p.ln()).collect();
    for (value, &count) in column.uniques() {
        let scores = system.value_scores(value);
        for (k, acc) in log_joint.iter_mut().enumerate().take(k_types) {
            *acc += count as f64 * system.log_mixture(&scores, k);
        }
    }
    log_joint
}

/// Unnormalized log joint ln p(t=k) + Σ_i ln g_k(x_i), aggregated over
/// unique values.
pub(crate) fn column_log_joint(column: &Column, system: &TypeSystem) -> Result<Vec<f64>> {
    if column.is_empty() {
        return Err(Error::EmptyColumn(column.name.clone()));
    }
    Ok(column_log_joint_allow_empty(column, system))
}

/// Posterior over the K regular types for a whole column.
///
/// When every type has log joint −∞ (possible only when the mixture weights
/// zero out the missing and anomaly components and no regular machine
/// supports some value), the posterior falls back to uniform; per-row
/// annotation will flag the offending values as degenerate.
pub fn column_type_posterior(column: &Column, system: &TypeSystem) -> Result<Vec<f64>> {
    let log_joint = column_log_joint(column, system)?;
    let total = log_sum_exp(&log_joint);
    if total == f64::NEG_INFINITY {
        return Ok(vec![1.0 / log_joint.len() as f64; log_joint.len()]);
    }
    Ok(log_joint.iter().map(|a| (a - total).exp()).collect())
}

/// Posterior over {type, missing, anomaly} for one cell, conditioned on the
/// column being of type `type_index`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RowPosterior {
    /// p(z = type | t = k, x)
    #[serde(rename = "type")]
    pub type_prob: f64,
    /// p(z = missing | t = k, x)
    #[serde(rename = "missing")]
    pub missing_prob: f64,
    /// p(z = anomaly | t = k, x)
    #[serde(rename = "anomaly")]
    pub anomaly_prob: f64,
    /// All three mixture components scored zero; the posterior above is a
    /// uniform fallback.
    #[serde(skip)]
    pub degenerate: bool,
}

impl RowPosterior {
    fn from_scores(scores: &ValueScores, system: &TypeSystem, k: usize) -> RowPosterior {
        let w = &system.weights()[k];
        let logs = [
            w.regular.ln() + scores.log_f[k],
            w.missing.ln() + scores.log_m,
            w.anomaly.ln() + scores.log_a,
        ];
        let total = log_sum_exp(&logs);
        if total == f64::NEG_INFINITY {
            let third = 1.0 / 3.0;
            return RowPosterior {
                type_prob: third,
                missing_prob: third,
                anomaly_prob: third,
                degenerate: true,
            };
        }
        RowPosterior {
            type_prob: (logs[0] - total).exp(),
            missing_prob: (logs[1] - total).exp(),
            anomaly_prob: (logs[2] - total).exp(),
            degenerate: false,
        }
    }
}

/// Posterior over {type `type_index`, missing, anomaly} for a single value.
pub fn row_type_posterior(value: &str, type_index: usize, system: &TypeSystem) -> RowPosterior {
    let scores = system.value_scores(value);
    RowPosterior::from_scores(&scores, system, type_index)
}

/// Per-row verdict after thresholding the row posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowLabel {
    Type,
    Missing,
    Anomaly,
}

impl std::fmt::Display for RowLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RowLabel::Type => "type",
            RowLabel::Missing => "missing",
            RowLabel::Anomaly => "anomaly",
        })
    }
}

/// Annotation thresholds.
#[derive(Debug, Clone, Copy)]
pub struct AnnotateOptions {
    /// A row is labelled non-type when 1 − p(z=type) ≥ this.
    pub label_threshold: f64,
    /// The column is flagged ambiguous when the winning type's posterior
    /// falls below this.
    pub ambiguity_threshold: f64,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions { label_threshold: 0.5, ambiguity_threshold: 0.9 }
    }
}

/// Inference result for one column.
#[derive(Debug, Clone)]
pub struct ColumnAnnotation {
    pub name: String,
    /// Winning type's position in catalog order.
    pub type_index: usize,
    /// Winning type's name (ties broken towards the earliest catalog entry).
    pub inferred_type: String,
    /// Posterior over the K regular types, catalog order.
    pub type_posterior: Vec<f64>,
    /// Per unique value, the row posterior conditioned on the winning type.
    pub row_posteriors: BTreeMap<String, RowPosterior>,
    /// Per raw row, the thresholded verdict.
    pub row_labels: Vec<RowLabel>,
    /// Winning type posterior below the ambiguity threshold.
    pub ambiguous: bool,
    /// Unique values whose mixture components all scored zero.
    pub degenerate_values: Vec<String>,
}

/// Types a column and labels each of its rows.
pub fn annotate(
    column: &Column,
    system: &TypeSystem,
    options: &AnnotateOptions,
) -> Result<ColumnAnnotation> {
    let type_posterior = column_type_posterior(column, system)?;
    let type_index = argmax_first(&type_posterior);
    let inferred_type = system.catalog().regular()[type_index].0.clone();

    let mut row_posteriors = BTreeMap::new();
    let mut label_of = BTreeMap::new();
    let mut degenerate_values = Vec::new();
    for value in column.uniques().keys() {
        let posterior = row_type_posterior(value, type_index, system);
        if posterior.degenerate {
            degenerate_values.push(value.clone());
        }
        let label = if 1.0 - posterior.type_prob >= options.label_threshold {
            if posterior.missing_prob >= posterior.anomaly_prob {
                RowLabel::Missing
            } else {
                RowLabel::Anomaly
            }
        } else {
            RowLabel::Type
        };
        label_of.insert(value.clone(), label);
        row_posteriors.insert(value.clone(), posterior);
    }
    let row_labels = column.raw().iter().map(|cell| label_of[cell]).collect();

    Ok(ColumnAnnotation {
        name: column.name().to_string(),
        type_index,
        inferred_type,
        type_posterior: type_posterior.clone(),
        row_posteriors,
        row_labels,
        ambiguous: type_posterior[type_index] < options.ambiguity_threshold,
        degenerate_values,
    })
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-column result of a table run.
#[derive(Debug, Clone)]
pub enum ColumnOutcome {
    Annotated(ColumnAnnotation),
    Failed { name: String, error: String },
}

/// Annotates each column independently, in order.
///
/// With `strict` set, the first column error aborts the run; otherwise
/// failed columns are reported in place and the rest still get annotated.
pub fn infer_table(
    columns: &[Column],
    system: &TypeSystem,
    options: &AnnotateOptions,
    strict: bool,
) -> Result<Vec<ColumnOutcome>> {
    let mut outcomes = Vec::with_capacity(columns.len());
    for column in columns {
        match annotate(column, system, options) {
            Ok(annotation) => outcomes.push(ColumnOutcome::Annotated(annotation)),
            Err(error) if strict => return Err(error),
            Err(error) => outcomes.push(ColumnOutcome::Failed {
                name: column.name().to_string(),
                error: error.to_string(),
            }),
        }
    }
    Ok(outcomes)
}

// ---------------------------------------------------------------------------
// JSON report shape.
// ---------------------------------------------------------------------------

/// One entry of the serialized type posterior; an array of these preserves
/// catalog order in JSON.
#[derive(Debug, Clone, Serialize)]
pub struct TypeProbability {
    pub r#type: String,
    pub probability: f64,
}

/// A non-type row with its posterior, for the report.
#[derive(Debug, Clone, Serialize)]
pub struct NonTypeRow {
    pub row: usize,
    pub value: String,
    pub label: RowLabel,
    pub posterior: RowPosterior,
}

/// Serializable per-column report.
#[derive(Debug, Clone, Serialize)]
pub struct ColumnReport {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inferred_type: Option<String>,
    pub ambiguous: bool,
    pub type_posterior: Vec<TypeProbability>,
    pub row_labels: Vec<RowLabel>,
    pub nontype_rows: Vec<NonTypeRow>,
}

/// Serializable whole-table report.
#[derive(Debug, Clone, Serialize)]
pub struct TableReport {
    pub columns: Vec<ColumnReport>,
}

impl TableReport {
    pub fn new(outcomes: &[ColumnOutcome], columns: &[Column], system: &TypeSystem) -> TableReport {
        let names = system.catalog().type_names();
        let reports = outcomes
            .iter()
            .zip(columns)
            .map(|(outcome, column)| match outcome {
                ColumnOutcome::Annotated(a) => {
                    let nontype_rows = a
                        .row_labels
                        .iter()
                        .enumerate()
                        .filter(|(_, label)| **label != RowLabel::Type)
                        .map(|(row, label)| {
                            let value = column.raw()[row].clone();
                            let posterior = a.row_posteriors[&value];
                            NonTypeRow { row, value, label: *label, posterior }
                        })
                        .collect();
                    ColumnReport {
                        name: a.name.clone(),
                        error: None,
                        inferred_type: Some(a.inferred_type.clone()),
                        ambiguous: a.ambiguous,
                        type_posterior: names
                            .iter()
                            .zip(&a.type_posterior)
                            .map(|(name, p)| TypeProbability {
                                r#type: name.to_string(),
                                probability: *p,
                            })
                            .collect(),
                        row_labels: a.row_labels.clone(),
                        nontype_rows,
                    }
                }
                ColumnOutcome::Failed { name, error } => ColumnReport {
                    name: name.clone(),
                    error: Some(error.clone()),
                    inferred_type: None,
                    ambiguous: false,
                    type_posterior: Vec::new(),
                    row_labels: Vec::new(),
                    nontype_rows: Vec::new(),
                },
            })
            .collect();
        TableReport { columns: reports }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machines::MachineCatalog;

    fn column(name: &str, cells: &[&str]) -> Column {
        Column::new(name, cells.iter().map(|c| c.to_string()).collect())
    }

    fn default_system() -> TypeSystem {
        TypeSystem::with_defaults(MachineCatalog::builtin())
    }

    fn posterior_by_name(system: &TypeSystem, posterior: &[f64]) -> BTreeMap<String, f64> {
        system
            .catalog()
            .type_names()
            .iter()
            .zip(posterior)
            .map(|(name, p)| (name.to_string(), *p))
            .collect()
    }

    #[test]
    fn system_construction_validates_weights_and_prior() {
        let catalog = MachineCatalog::builtin();
        let k = catalog.n_types();
        let good = TypeWeights { regular: 0.9, missing: 0.06, anomaly: 0.04 };
        assert!(TypeSystem::new(catalog.clone(), vec![good; k], vec![1.0 / k as f64; k]).is_ok());

        let not_summing = TypeWeights { regular: 0.9, missing: 0.06, anomaly: 0.06 };
        assert!(TypeSystem::new(catalog.clone(), vec![not_summing; k], vec![1.0 / k as f64; k])
            .is_err());

        let missing_heavy = TypeWeights { regular: 0.4, missing: 0.5, anomaly: 0.1 };
        assert!(TypeSystem::new(catalog.clone(), vec![missing_heavy; k], vec![1.0 / k as f64; k])
            .is_err());

        let bad_prior = vec![0.5; k];
        assert!(TypeSystem::new(catalog.clone(), vec![good; k], bad_prior).is_err());

        assert!(TypeSystem::new(catalog, vec![good; 2], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn null_and_one_prefer_boolean_then_integer_then_float() {
        let system = default_system();
        let col = column("flag", &["NULL", "1", "1", "NULL", "1"]);
        let posterior = column_type_posterior(&col, &system).unwrap();
        let by_name = posterior_by_name(&system, &posterior);
        let annotation = annotate(&col, &system, &AnnotateOptions::default()).unwrap();
        assert_eq!(annotation.inferred_type, "boolean");
        assert!(by_name["boolean"] > by_name["integer"]);
        assert!(by_name["integer"] > by_name["float"]);
    }

    #[test]
    fn word_columns_read_as_string() {
        let system = default_system();
        let col = column("w", &["hello", "world"]);
        let annotation = annotate(&col, &system, &AnnotateOptions::default()).unwrap();
        assert_eq!(annotation.inferred_type, "string");
    }

    #[test]
    fn missing_codes_do_not_change_the_winning_type() {
        let system = default_system();
        let with = column("n", &["1", "2", "3", "NA"]);
        let without = column("n", &["1", "2", "3"]);
        let a = annotate(&without, &system, &AnnotateOptions::default()).unwrap();
        let b = annotate(&with, &system, &AnnotateOptions::default()).unwrap();
        assert_eq!(a.inferred_type, b.inferred_type);
        assert_eq!(a.inferred_type, "integer");
        assert_eq!(b.row_labels[3], RowLabel::Missing);
    }

    #[test]
    fn row_posterior_examples() {
        let system = default_system();
        let integer = system.catalog().type_index("integer").unwrap();

        let missing = row_type_posterior("-99", integer, &system);
        assert!(missing.missing_prob > missing.type_prob);
        assert!(missing.missing_prob > missing.anomaly_prob);

        let anomalous = row_type_posterior("6?", integer, &system);
        assert!(anomalous.anomaly_prob > anomalous.type_prob);
        assert!(anomalous.anomaly_prob > anomalous.missing_prob);

        let typed = row_type_posterior("5", integer, &system);
        assert!(typed.type_prob > typed.missing_prob);
        assert!(typed.type_prob > typed.anomaly_prob);

        for p in [&missing, &anomalous, &typed] {
            let sum = p.type_prob + p.missing_prob + p.anomaly_prob;
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(!p.degenerate);
        }
    }

    #[test]
    fn annotate_labels_missing_and_anomalous_rows() {
        let system = default_system();
        let col = column(
            "mixed",
            &["acute", "chronic", "NULL", "acute", "n/a", "remission"],
        );
        let a = annotate(&col, &system, &AnnotateOptions::default()).unwrap();
        assert_eq!(a.inferred_type, "string");
        assert_eq!(
            a.row_labels,
            [
                RowLabel::Type,
                RowLabel::Type,
                RowLabel::Missing,
                RowLabel::Type,
                RowLabel::Missing,
                RowLabel::Type,
            ]
        );

        let euros = column("amount", &["1200", "3400", "refer to euro", "560"]);
        let a = annotate(&euros, &system, &AnnotateOptions::default()).unwrap();
        assert_eq!(a.inferred_type, "integer");
        assert_eq!(a.row_labels[2], RowLabel::Anomaly);
        assert_eq!(a.row_labels.iter().filter(|l| **l == RowLabel::Anomaly).count(), 1);

        let clean = column("n", &["1", "2", "3", "44", "-7"]);
        let a = annotate(&clean, &system, &AnnotateOptions::default()).unwrap();
        assert_eq!(a.inferred_type, "integer");
        assert!(a.row_labels.iter().all(|l| *l == RowLabel::Type));
        assert!(!a.ambiguous);
    }

    #[test]
    fn empty_columns_error_with_their_name() {
        let system = default_system();
        let err = column_type_posterior(&column("hollow", &[]), &system).unwrap_err();
        assert!(matches!(&err, Error::EmptyColumn(name) if name == "hollow"));
        assert!(err.to_string().contains("empty column"));
    }

    #[test]
    fn posteriors_are_normalized() {
        let system = default_system();
        for cells in [
            &["1", "2", "3"][..],
            &["Yes", "No", "NULL"][..],
            &["2017-01-23", "11:02"][..],
            &["x", "1.5", "?", "⟐"][..],
        ] {
            let col = column("c", cells);
            let posterior = column_type_posterior(&col, &system).unwrap();
            let sum: f64 = posterior.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(posterior.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn row_permutations_leave_the_type_posterior_bit_identical() {
        let system = default_system();
        let forward = column("p", &["1", "2", "NA", "3", "3", "xyz"]);
        let shuffled = column("p", &["xyz", "3", "1", "NA", "3", "2"]);
        let a = column_type_posterior(&forward, &system).unwrap();
        let b = column_type_posterior(&shuffled, &system).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unique_aggregation_matches_the_naive_product() {
        let system = default_system();
        let cells = ["7", "7", "7", "19", "NA", "19", "7", "0.5"];
        let col = column("u", &cells);
        let aggregated = column_log_joint(&col, &system).unwrap();

        let k_types = system.catalog().n_types();
        let mut naive: Vec<f64> = system.prior().iter().map(|p| p.ln()).collect();
        for cell in &cells {
            let scores = system.value_scores(cell);
            for (k, acc) in naive.iter_mut().enumerate().take(k_types) {
                *acc += system.log_mixture(&scores, k);
            }
        }
        for (a, b) in aggregated.iter().zip(&naive) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn values_outside_every_regular_alphabet_are_type_neutral() {
        let system = default_system();
        let base = column("n", &["1", "2", "3"]);
        let padded = column("n", &["1", "2", "3", "?", "?"]);
        let a = column_type_posterior(&base, &system).unwrap();
        let b = column_type_posterior(&padded, &system).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn degenerate_rows_fall_back_to_uniform_and_are_reported() {
        // Zero weight on missing and anomaly leaves unsupported values with
        // no probability mass at all.
        let catalog = MachineCatalog::builtin();
        let k = catalog.n_types();
        let weights = vec![TypeWeights { regular: 1.0, missing: 0.0, anomaly: 0.0 }; k];
        let system = TypeSystem::new(catalog, weights, vec![1.0 / k as f64; k]).unwrap();

        let col = column("d", &["1", "0", "€"]);
        let a = annotate(&col, &system, &AnnotateOptions::default()).unwrap();
        // "€" zeroes every type's joint, so the column posterior falls back
        // to uniform and the argmax is the first catalog entry.
        assert!(a.type_posterior.iter().all(|p| (p - 0.2).abs() < 1e-12));
        assert_eq!(a.inferred_type, "boolean");
        assert_eq!(a.degenerate_values, ["€"]);
        let p = a.row_posteriors["€"];
        assert!(p.degenerate);
        assert!((p.type_prob - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.missing_prob - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.anomaly_prob - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn xtype_absorbs_unsupported_columns_but_not_supported_ones() {
        let mut catalog = MachineCatalog::builtin();
        catalog.enable_xtype();
        let system = TypeSystem::with_defaults(catalog);

        let currency = column("price", &["$2949.57", "$2949.57", "$13.20"]);
        let a = annotate(&currency, &system, &AnnotateOptions::default()).unwrap();
        assert_eq!(a.inferred_type, "xtype");

        let digits = column("n", &["5", "6"]);
        let a = annotate(&digits, &system, &AnnotateOptions::default()).unwrap();
        assert_eq!(a.inferred_type, "integer");
    }

    #[test]
    fn infer_table_preserves_order_and_records_failures() {
        let system = default_system();
        let columns = vec![
            column("a", &["1", "2"]),
            column("b", &[]),
            column("c", &["x", "y"]),
        ];
        let outcomes =
            infer_table(&columns, &system, &AnnotateOptions::default(), false).unwrap();
        assert_eq!(outcomes.len(), 3);
        assert!(matches!(&outcomes[0], ColumnOutcome::Annotated(a) if a.inferred_type == "integer"));
        assert!(
            matches!(&outcomes[1], ColumnOutcome::Failed { name, error } if name == "b" && error.contains("empty column"))
        );
        assert!(matches!(&outcomes[2], ColumnOutcome::Annotated(a) if a.inferred_type == "string"));

        let err = infer_table(&columns, &system, &AnnotateOptions::default(), true).unwrap_err();
        assert!(matches!(err, Error::EmptyColumn(name) if name == "b"));
    }

    #[test]
    fn report_serializes_the_documented_shape() {
        let system = default_system();
        let columns = vec![column("n", &["1", "NA", "2"]), column("e", &[])];
        let outcomes =
            infer_table(&columns, &system, &AnnotateOptions::default(), false).unwrap();
        let report = TableReport::new(&outcomes, &columns, &system);
        let json: serde_json::Value = serde_json::to_value(&report).unwrap();

        let first = &json["columns"][0];
        assert_eq!(first["name"], "n");
        assert_eq!(first["inferred_type"], "integer");
        assert_eq!(first["row_labels"], serde_json::json!(["type", "missing", "type"]));
        assert_eq!(first["type_posterior"][0]["type"], "boolean");
        assert_eq!(first["nontype_rows"][0]["row"], 1);
        assert_eq!(first["nontype_rows"][0]["value"], "NA");
        assert_eq!(first["nontype_rows"][0]["label"], "missing");
        assert!(first["nontype_rows"][0]["posterior"]["missing"].as_f64().unwrap() > 0.5);
        assert!(first.get("error").is_none());

        let second = &json["columns"][1];
        assert_eq!(second["name"], "e");
        assert!(second["error"].as_str().unwrap().contains("empty column"));
        assert!(second.get("inferred_type").is_none());
    }

    #[test]
    fn ambiguity_flag_follows_the_threshold() {
        let system = default_system();
        // A single "1" is explainable as boolean or integer: the winner's
        // posterior stays below 0.9.
        let col = column("one", &["1"]);
        let a = annotate(&col, &system, &AnnotateOptions::default()).unwrap();
        assert!(a.ambiguous);
        assert!(a.type_posterior[a.type_index] < 0.9);

        let clear = column("words", &["alpha", "beta", "gamma", "delta"]);
        let a = annotate(&clear, &system, &AnnotateOptions::default()).unwrap();
        assert!(!a.ambiguous);
    }
}
